//! Layer stack with batch-normalization statistics tracking and exact
//! reverse-mode gradients.
//!
//! Activations are addressed by *position*: position `k` is the input of
//! layer `k`, and position `layers.len()` is the network output. Losses that
//! depend on intermediate activations (BN statistics, generator block
//! features) feed their gradients back through [`Injection`]s at those
//! positions.

mod backward;
pub mod gradcheck;
mod loss;
pub mod optim;

pub use backward::{Gradients, Injection};
pub use loss::{accuracy, argmax_rows, cross_entropy, kl_distill, softmax_rows};

use crate::error::{Error, Result};
use crate::quant::QuantParams;
use crate::rng::{gaussian_vec, StreamRng};
use crate::tensor::Tensor;

pub const DEFAULT_BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out, in, k, k]`, odd `k`, stride 1, same padding.
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    GlobalAvgPool,
}

impl Dense {
    pub fn init(inp: usize, out: usize, rng: &mut StreamRng) -> Self {
        let std = (2.0 / inp as f64).sqrt();
        let w = gaussian_vec(rng, inp * out).into_iter().map(|v| v * std).collect();
        Dense { weight: Tensor::raw(vec![out, inp], w), bias: Tensor::zeros(&[out]) }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Conv2d {
    pub fn init(in_ch: usize, out_ch: usize, k: usize, rng: &mut StreamRng) -> Self {
        let fan_in = in_ch * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let w = gaussian_vec(rng, out_ch * fan_in).into_iter().map(|v| v * std).collect();
        Conv2d { weight: Tensor::raw(vec![out_ch, in_ch, k, k], w), bias: Tensor::zeros(&[out_ch]) }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
}

impl BatchNorm {
    /// Identity-initialized BN: gamma 1, beta 0, running stats 0/1.
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps: DEFAULT_BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Running standard deviation `sqrt(running_var)`.
    pub fn running_std(&self) -> Vec<f64> {
        self.running_var.data().iter().map(|v| v.sqrt()).collect()
    }
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::GlobalAvgPool => "globalavgpool",
        }
    }

    /// Trainable parameters, in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Relu | Layer::GlobalAvgPool => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Relu | Layer::GlobalAvgPool => vec![],
        }
    }

    /// Whether the layer carries a weight tensor subject to quantization.
    pub fn has_weight(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense(d) => Some(&d.weight),
            Layer::Conv2d(c) => Some(&c.weight),
            _ => None,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| Err(Error::Shape(format!("{} layer cannot take input {input:?}: {what}", self.kind())));
        match self {
            Layer::Dense(d) => {
                if input.len() != 1 || input[0] != d.in_features() {
                    return bad(&format!("expects [{}]", d.in_features()));
                }
                if d.bias.len() != d.out_features() {
                    return bad("bias length differs from out_features");
                }
                Ok(vec![d.out_features()])
            }
            Layer::Conv2d(c) => {
                let ws = c.weight.shape();
                if ws.len() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0 {
                    return bad("conv kernels must be square with odd side");
                }
                if input.len() != 3 || input[0] != c.in_channels() {
                    return bad(&format!("expects [{}, H, W]", c.in_channels()));
                }
                if c.bias.len() != c.out_channels() {
                    return bad("bias length differs from out_channels");
                }
                Ok(vec![c.out_channels(), input[1], input[2]])
            }
            Layer::BatchNorm(b) => {
                if input.is_empty() || input[0] != b.channels() {
                    return bad(&format!("expects {} channels", b.channels()));
                }
                let c = b.channels();
                if b.beta.len() != c || b.running_mean.len() != c || b.running_var.len() != c {
                    return bad("parameter lengths differ");
                }
                if b.eps <= 0.0 {
                    return bad("eps must be positive");
                }
                if b.running_var.data().iter().any(|&v| v < 0.0) {
                    return bad("running_var must be non-negative");
                }
                Ok(input.to_vec())
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::GlobalAvgPool => {
                if input.len() != 3 {
                    return bad("expects [C, H, W]");
                }
                Ok(vec![input[0]])
            }
        }
    }
}

/// How batch-normalization layers normalize during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize by batch statistics.
    Train,
    /// Normalize by running statistics.
    Eval,
}

/// Optional fake-quantization applied inside a forward pass, indexed by layer.
/// `inputs[k]` quantizes the input of layer `k`; `weights[k]` its weight.
#[derive(Debug, Clone, Default)]
pub struct FakeQuant {
    pub inputs: Vec<Option<QuantParams>>,
    pub weights: Vec<Option<QuantParams>>,
}

/// Per-channel batch statistics of one BN layer's input.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Population standard deviation (no Bessel correction).
    pub std: Vec<f64>,
}

/// Batch statistics at every BN layer, in network order, plus logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layers: Vec<BnBatchStats>,
    pub logits: Tensor,
}

#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Affine { x: Tensor, w: Option<Tensor>, x_mask: Option<Vec<bool>>, w_mask: Option<Vec<bool>> },
    Bn { xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Passthrough,
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub trace: ActivationTrace,
    /// Input of every layer (position `k` is the input of layer `k`).
    pub inputs: Vec<Tensor>,
    pub(crate) cache: Option<Vec<LayerCache>>,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        &self.trace.logits
    }

    /// Activation at a position, where `inputs.len()` is the output.
    pub fn activation(&self, position: usize) -> &Tensor {
        if position == self.inputs.len() {
            &self.trace.logits
        } else {
            &self.inputs[position]
        }
    }

    /// Drops the backward cache, keeping activations and trace.
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }
}

/// Gradient of a loss w.r.t. the per-channel batch statistics of each BN
/// layer (`mean[i]`, `std[i]` for the i-th BN layer).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceGrad {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl TraceGrad {
    pub fn zeros_like(trace: &ActivationTrace) -> Self {
        TraceGrad { mean: trace.layers.iter().map(|l| vec![0.0; l.mean.len()]).collect(), std: trace.layers.iter().map(|l| vec![0.0; l.std.len()]).collect() }
    }
}

impl Forward {
    /// Converts gradients on BN batch statistics into injections at each BN
    /// layer's input position. A zero batch std contributes no gradient.
    pub fn stat_injections(&self, net: &Network, grad: &TraceGrad) -> Result<Vec<Injection>> {
        if grad.mean.len() != net.n_bn() || grad.std.len() != net.n_bn() {
            return Err(Error::Shape("trace gradient does not match BN layer count".into()));
        }
        let mut out = Vec::with_capacity(net.n_bn());
        for (i, &pos) in net.bn_indices().iter().enumerate() {
            let x = &self.inputs[pos];
            let (ch, sp) = channel_layout(&x.shape()[1..]);
            let b = x.batch();
            let m = (b * sp) as f64;
            let stats = &self.trace.layers[i];
            let mut g = vec![0.0; x.len()];
            for s in 0..b {
                for c in 0..ch {
                    let base = (s * ch + c) * sp;
                    let gm = grad.mean[i][c] / m;
                    let sd = stats.std[c];
                    let gs = if sd > 0.0 { grad.std[i][c] / (m * sd) } else { 0.0 };
                    for p in base..base + sp {
                        g[p] = gm + gs * (x.data()[p] - stats.mean[c]);
                    }
                }
            }
            out.push(Injection { position: pos, grad: Tensor::raw(x.shape().to_vec(), g) });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    bn_indices: Vec<usize>,
}

/// Channels and spatial size of a per-sample shape (`[C]` or `[C, H, W]`).
pub(crate) fn channel_layout(sample_shape: &[usize]) -> (usize, usize) {
    let c = sample_shape[0];
    let s = sample_shape[1..].iter().product::<usize>().max(1);
    (c, s)
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shape = input_shape.clone();
        for (k, layer) in layers.iter().enumerate() {
            for p in layer.params() {
                p.check_finite(&format!("layer {k} parameters"))?;
            }
            shape = layer.output_shape(&shape).map_err(|e| Error::Shape(format!("layer {k}: {e}")))?;
        }
        let bn_indices = layers.iter().enumerate().filter(|(_, l)| matches!(l, Layer::BatchNorm(_))).map(|(i, _)| i).collect();
        Ok(Network { input_shape, layers, bn_indices })
    }

    /// Dense classifier `in -> hidden... -> classes` with `dense+BN+ReLU`
    /// hidden blocks.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, rng: &mut StreamRng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(Layer::Dense(Dense::init(prev, h, rng)));
            layers.push(Layer::BatchNorm(BatchNorm::new(h)));
            layers.push(Layer::Relu);
            prev = h;
        }
        layers.push(Layer::Dense(Dense::init(prev, classes, rng)));
        Network::new(vec![input], layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shape_at(self.layers.len())
    }

    /// Per-sample shape at an activation position.
    pub fn shape_at(&self, position: usize) -> Vec<usize> {
        let mut s = self.input_shape.clone();
        for layer in &self.layers[..position] {
            s = layer.output_shape(&s).expect("validated at construction");
        }
        s
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn bn_indices(&self) -> &[usize] {
        &self.bn_indices
    }

    pub fn n_bn(&self) -> usize {
        self.bn_indices.len()
    }

    pub fn bn(&self, i: usize) -> &BatchNorm {
        match &self.layers[self.bn_indices[i]] {
            Layer::BatchNorm(b) => b,
            _ => unreachable!(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Digest of all parameters and running statistics.
    pub fn checksum(&self) -> u64 {
        let mut h = crate::tensor::Fnv::default();
        for layer in &self.layers {
            for p in layer.params() {
                h.write(p.checksum());
            }
            if let Layer::BatchNorm(b) = layer {
                h.write(b.running_mean.checksum());
                h.write(b.running_var.checksum());
                h.write(b.eps.to_bits());
            }
        }
        h.0
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Forward> {
        self.forward_with(x, mode, None)
    }

    /// Train-mode forward that also folds the batch statistics into the
    /// running statistics: `running <- (1 - momentum) * running + momentum * batch`.
    pub fn forward_collect(&mut self, x: &Tensor, momentum: f64) -> Result<Forward> {
        let fwd = self.forward(x, Mode::Train)?;
        self.absorb_stats(&fwd.trace, momentum)?;
        Ok(fwd)
    }

    pub fn absorb_stats(&mut self, trace: &ActivationTrace, momentum: f64) -> Result<()> {
        if trace.layers.len() != self.n_bn() {
            return Err(Error::Shape("trace does not match network BN layers".into()));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1]")));
        }
        for (stats, &idx) in trace.layers.iter().zip(&self.bn_indices) {
            if let Layer::BatchNorm(b) = &mut self.layers[idx] {
                for c in 0..b.channels() {
                    let rm = &mut b.running_mean.data_mut()[c];
                    *rm = if momentum == 1.0 { stats.mean[c] } else { (1.0 - momentum) * *rm + momentum * stats.mean[c] };
                    let var = stats.std[c] * stats.std[c];
                    let rv = &mut b.running_var.data_mut()[c];
                    *rv = if momentum == 1.0 { var } else { (1.0 - momentum) * *rv + momentum * var };
                }
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!("batch {:?} does not match network input [B, {:?}]", x.shape(), self.input_shape)));
        }
        x.check_finite("network input")
    }

    pub fn forward_with(&self, x: &Tensor, mode: Mode, fq: Option<&FakeQuant>) -> Result<Forward> {
        self.check_input(x)?;
        let b = x.batch();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cache = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.n_bn());
        let mut cur = x.clone();
        let mut shape = self.input_shape.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let out_shape = layer.output_shape(&shape)?;
            let mut full_out = vec![b];
            full_out.extend_from_slice(&out_shape);
            let (out, c) = match layer {
                Layer::Dense(d) => {
                    let (xq, x_mask) = fake_quant_opt(&cur, fq.and_then(|f| f.inputs.get(k).copied().flatten()));
                    let (wq, w_mask) = fake_quant_opt(&d.weight, fq.and_then(|f| f.weights.get(k).copied().flatten()));
                    let w = wq.as_ref().unwrap_or(&d.weight);
                    let xin = xq.as_ref().unwrap_or(&cur);
                    let y = dense_forward(xin, w, &d.bias);
                    (y, LayerCache::Affine { x: xq.unwrap_or_else(|| cur.clone()), w: wq, x_mask, w_mask })
                }
                Layer::Conv2d(cv) => {
                    let (xq, x_mask) = fake_quant_opt(&cur, fq.and_then(|f| f.inputs.get(k).copied().flatten()));
                    let (wq, w_mask) = fake_quant_opt(&cv.weight, fq.and_then(|f| f.weights.get(k).copied().flatten()));
                    let w = wq.as_ref().unwrap_or(&cv.weight);
                    let xin = xq.as_ref().unwrap_or(&cur);
                    let y = conv_forward(xin, w, &cv.bias);
                    (y, LayerCache::Affine { x: xq.unwrap_or_else(|| cur.clone()), w: wq, x_mask, w_mask })
                }
                Layer::BatchNorm(bn) => {
                    let (ch, sp) = channel_layout(&shape);
                    let (mean, var) = channel_moments(cur.data(), b, ch, sp);
                    let std: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
                    stats.push(BnBatchStats { mean: mean.clone(), std });
                    let (use_mean, use_var, batch_stats) = match mode {
                        Mode::Train => (mean, var, true),
                        Mode::Eval => (bn.running_mean.data().to_vec(), bn.running_var.data().to_vec(), false),
                    };
                    let inv_std: Vec<f64> = use_var.iter().map(|v| 1.0 / (v.max(0.0) + bn.eps).sqrt()).collect();
                    let mut xhat = vec![0.0; cur.len()];
                    let mut y = vec![0.0; cur.len()];
                    for s in 0..b {
                        for c in 0..ch {
                            let base = (s * ch + c) * sp;
                            let (g, be) = (bn.gamma.data()[c], bn.beta.data()[c]);
                            for p in base..base + sp {
                                let h = (cur.data()[p] - use_mean[c]) * inv_std[c];
                                xhat[p] = h;
                                y[p] = g * h + be;
                            }
                        }
                    }
                    (Tensor::raw(full_out.clone(), y), LayerCache::Bn { xhat, inv_std, batch_stats })
                }
                Layer::Relu => (cur.map(|v| v.max(0.0)), LayerCache::Passthrough),
                Layer::GlobalAvgPool => {
                    let (ch, sp) = channel_layout(&shape);
                    let mut y = vec![0.0; b * ch];
                    for s in 0..b {
                        for c in 0..ch {
                            let base = (s * ch + c) * sp;
                            y[s * ch + c] = cur.data()[base..base + sp].iter().sum::<f64>() / sp as f64;
                        }
                    }
                    (Tensor::raw(full_out.clone(), y), LayerCache::Passthrough)
                }
            };
            out.check_finite(&format!("output of layer {k} ({})", layer.kind()))?;
            inputs.push(std::mem::replace(&mut cur, out));
            cache.push(c);
            shape = out_shape;
        }
        Ok(Forward { trace: ActivationTrace { layers: stats, logits: cur }, inputs, cache: Some(cache) })
    }
}

fn fake_quant_opt(t: &Tensor, qp: Option<QuantParams>) -> (Option<Tensor>, Option<Vec<bool>>) {
    match qp {
        None => (None, None),
        Some(qp) => {
            let (y, mask) = qp.fake_quant(t);
            (Some(y), Some(mask))
        }
    }
}

/// Per-channel mean and population variance over batch and spatial positions.
pub(crate) fn channel_moments(data: &[f64], b: usize, ch: usize, sp: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (b * sp) as f64;
    let mut mean = vec![0.0; ch];
    for s in 0..b {
        for c in 0..ch {
            let base = (s * ch + c) * sp;
            mean[c] += data[base..base + sp].iter().sum::<f64>();
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    let mut var = vec![0.0; ch];
    for s in 0..b {
        for c in 0..ch {
            let base = (s * ch + c) * sp;
            var[c] += data[base..base + sp].iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= m;
    }
    (mean, var)
}

fn dense_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Tensor {
    let (b, inp) = (x.batch(), x.row_len());
    let out = w.shape()[0];
    let mut y = vec![0.0; b * out];
    for s in 0..b {
        let xr = &x.data()[s * inp..(s + 1) * inp];
        for o in 0..out {
            let wr = &w.data()[o * inp..(o + 1) * inp];
            y[s * out + o] = bias.data()[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Tensor::raw(vec![b, out], y)
}

fn conv_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Tensor {
    let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let mut y = vec![0.0; b * cout * h * wd];
    let xd = x.data();
    let wdat = w.data();
    for s in 0..b {
        for o in 0..cout {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = bias.data()[o];
                    for c in 0..cin {
                        for ki in 0..k {
                            let ii = i as isize + ki as isize - pad;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let jj = j as isize + kj as isize - pad;
                                if jj < 0 || jj >= wd as isize {
                                    continue;
                                }
                                acc += wdat[((o * cin + c) * k + ki) * k + kj] * xd[((s * cin + c) * h + ii as usize) * wd + jj as usize];
                            }
                        }
                    }
                    y[((s * cout + o) * h + i) * wd + j] = acc;
                }
            }
        }
    }
    Tensor::raw(vec![b, cout, h, wd], y)
}
