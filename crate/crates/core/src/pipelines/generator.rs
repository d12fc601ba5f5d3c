use crate::error::{Error, Result};
use crate::net::{Forward, Injection, Layer, Mode, Network};
use crate::rng::{gaussian_vec, StreamRng};
use crate::tensor::Tensor;

/// Bound of the generator's output range.
pub const OUTPUT_BOUND: f64 = 3.0;

/// Conditional toy generator: `x = 3 tanh(mlp(emb[y] * z))`, where the mlp is
/// a stack of dense+BN+ReLU blocks followed by a dense head. BN layers always
/// normalize by batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    net: Network,
    embedding: Tensor,
    output_shape: Vec<usize>,
    feature_positions: Vec<usize>,
}

/// One generator forward pass with everything its backward needs.
#[derive(Debug, Clone)]
pub struct GeneratorForward {
    pub inner: Forward,
    /// Input of the mlp, `emb[y] * z`.
    pub code: Tensor,
    /// Samples shaped `[B, output_shape...]`, every element in `[-3, 3]`.
    pub samples: Tensor,
    labels: Vec<usize>,
    latent: Tensor,
}

impl GeneratorForward {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

impl GeneratorNet {
    pub fn new(latent: usize, hidden: &[usize], classes: usize, output_shape: &[usize], rng: &mut StreamRng) -> Result<Self> {
        if hidden.is_empty() || latent == 0 || classes == 0 {
            return Err(Error::InvalidArgument("generator needs latent > 0, classes > 0, and at least one block".into()));
        }
        let out: usize = output_shape.iter().product();
        let net = Network::mlp(latent, hidden, out, rng)?;
        let embedding = Tensor::new(vec![classes, latent], gaussian_vec(rng, classes * latent))?;
        let feature_positions = net.layers().iter().enumerate().filter(|(_, l)| matches!(l, Layer::Relu)).map(|(k, _)| k + 1).collect();
        Ok(GeneratorNet { net, embedding, output_shape: output_shape.to_vec(), feature_positions })
    }

    pub fn latent_dim(&self) -> usize {
        self.embedding.row_len()
    }

    pub fn classes(&self) -> usize {
        self.embedding.batch()
    }

    pub fn n_blocks(&self) -> usize {
        self.feature_positions.len()
    }

    /// Activation positions of the block outputs (after each ReLU).
    pub fn feature_positions(&self) -> &[usize] {
        &self.feature_positions
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Trainable tensors: mlp parameters, then the label embedding.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.net.params_mut();
        p.push(&mut self.embedding);
        p
    }

    pub fn forward(&self, z: &Tensor, labels: &[usize]) -> Result<GeneratorForward> {
        let (b, l) = (z.batch(), self.latent_dim());
        if z.shape() != [b, l] || labels.len() != b {
            return Err(Error::Shape(format!("latent {:?} with {} labels for latent size {l}", z.shape(), labels.len())));
        }
        let mut code = vec![0.0; b * l];
        for (s, &y) in labels.iter().enumerate() {
            if y >= self.classes() {
                return Err(Error::InvalidArgument(format!("label {y} >= {} classes", self.classes())));
            }
            let e = self.embedding.row(y);
            for (j, c) in code[s * l..(s + 1) * l].iter_mut().enumerate() {
                *c = e[j] * z.data()[s * l + j];
            }
        }
        let code = Tensor::new(vec![b, l], code)?;
        let inner = self.net.forward(&code, Mode::Train)?;
        let mut shape = vec![b];
        shape.extend_from_slice(&self.output_shape);
        let samples = Tensor::new(shape, inner.logits().data().iter().map(|o| OUTPUT_BOUND * o.tanh()).collect())?;
        if let Some(v) = samples.data().iter().find(|v| !(v.abs() <= OUTPUT_BOUND)) {
            return Err(Error::NonFinite(format!("generator output {v} outside [-{OUTPUT_BOUND}, {OUTPUT_BOUND}]")));
        }
        Ok(GeneratorForward { inner, code, samples, labels: labels.to_vec(), latent: z.clone() })
    }

    /// Block feature `i` of a forward pass, `[B, width]`.
    pub fn feature<'f>(&self, gf: &'f GeneratorForward, i: usize) -> &'f Tensor {
        gf.inner.activation(self.feature_positions[i])
    }

    /// Gradients (in `params_mut` order) given dL/d(samples) and extra
    /// gradients at block features.
    pub fn backward(&self, gf: &GeneratorForward, grad_samples: &Tensor, inject: &[Injection]) -> Result<Vec<Tensor>> {
        if grad_samples.shape() != gf.samples.shape() {
            return Err(Error::Shape(format!("sample gradient {:?} vs samples {:?}", grad_samples.shape(), gf.samples.shape())));
        }
        let go: Vec<f64> = grad_samples
            .data()
            .iter()
            .zip(gf.samples.data())
            .map(|(g, x)| {
                let t = x / OUTPUT_BOUND;
                g * OUTPUT_BOUND * (1.0 - t * t)
            })
            .collect();
        let go = Tensor::new(gf.inner.logits().shape().to_vec(), go)?;
        let grads = self.net.backward(&gf.inner, &go, inject)?;
        let l = self.latent_dim();
        let mut ge = vec![0.0; self.embedding.len()];
        for (s, &y) in gf.labels.iter().enumerate() {
            for j in 0..l {
                ge[y * l + j] += grads.input.data()[s * l + j] * gf.latent.data()[s * l + j];
            }
        }
        let mut out: Vec<Tensor> = grads.flat().into_iter().cloned().collect();
        out.push(Tensor::new(self.embedding.shape().to_vec(), ge)?);
        Ok(out)
    }
}
