#![allow(dead_code)]

use dsgq::dsg::{bn_stats_loss, lse_loss, sda_loss, LseAssignment, RelaxationConstants};
use dsgq::net::{BatchNorm, Conv2d, Dense, Gradients, Layer};
use dsgq::rng::{gaussian_vec, stream, uniform_vec, Stream};
use dsgq::{Mode, Network, Result, Tensor};

pub fn randn(seed: u64, index: u32, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), gaussian_vec(&mut stream(seed, Stream::Data, index), n)).unwrap()
}

pub fn uniform(seed: u64, index: u32, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    uniform_vec(&mut stream(seed, Stream::Data, index), n).into_iter().map(|u| lo + (hi - lo) * u).collect()
}

/// BN layer with non-trivial affine parameters and running statistics.
pub fn random_bn(channels: usize, seed: u64, index: u32) -> BatchNorm {
    let u = uniform(seed, 1000 + index, 4 * channels, 0.0, 1.0);
    let col = |k: usize, lo: f64, hi: f64| Tensor::from_vec(u[k * channels..(k + 1) * channels].iter().map(|v| lo + (hi - lo) * v).collect());
    BatchNorm { gamma: col(0, 0.5, 1.5), beta: col(1, -0.3, 0.3), running_mean: col(2, -0.5, 0.5), running_var: col(3, 0.5, 2.0), eps: 1e-5 }
}

/// Dense network with two dense+BN+ReLU blocks and randomized BN statistics.
pub fn two_bn_mlp(seed: u64, input: usize, hidden: [usize; 2], classes: usize) -> Network {
    let mut rng = stream(seed, Stream::Init, 0);
    let layers = vec![
        Layer::Dense(Dense::init(input, hidden[0], &mut rng)),
        Layer::BatchNorm(random_bn(hidden[0], seed, 0)),
        Layer::Relu,
        Layer::Dense(Dense::init(hidden[0], hidden[1], &mut rng)),
        Layer::BatchNorm(random_bn(hidden[1], seed, 1)),
        Layer::Relu,
        Layer::Dense(Dense::init(hidden[1], classes, &mut rng)),
    ];
    Network::new(vec![input], layers).unwrap()
}

/// conv+BN+ReLU, conv+BN+ReLU, global pooling, dense head.
pub fn conv_net(seed: u64, in_ch: usize, side: usize) -> Network {
    let mut rng = stream(seed, Stream::Init, 0);
    let layers = vec![
        Layer::Conv2d(Conv2d::init(in_ch, 3, 3, &mut rng)),
        Layer::BatchNorm(random_bn(3, seed, 0)),
        Layer::Relu,
        Layer::Conv2d(Conv2d::init(3, 2, 3, &mut rng)),
        Layer::BatchNorm(random_bn(2, seed, 1)),
        Layer::Relu,
        Layer::GlobalAvgPool,
        Layer::Dense(Dense::init(2, 3, &mut rng)),
    ];
    Network::new(vec![in_ch, side, side], layers).unwrap()
}

fn zero_logits(fwd: &dsgq::net::Forward) -> Tensor {
    Tensor::zeros(fwd.logits().shape())
}

/// Plain statistics-matching loss and its gradients.
pub fn bn_objective(mode: Mode) -> impl Fn(&Network, &Tensor) -> Result<(f64, Gradients)> {
    move |net, x| {
        let fwd = net.forward(x, mode)?;
        let loss = bn_stats_loss(&fwd.trace, net)?;
        let inject = fwd.stat_injections(net, &loss.grad)?;
        Ok((loss.total, net.backward(&fwd, &zero_logits(&fwd), &inject)?))
    }
}

pub fn sda_objective(rc: RelaxationConstants) -> impl Fn(&Network, &Tensor) -> Result<(f64, Gradients)> {
    move |net, x| {
        let fwd = net.forward(x, Mode::Eval)?;
        let loss = sda_loss(&fwd.trace, net, &rc)?;
        let inject = fwd.stat_injections(net, &loss.grad)?;
        Ok((loss.total, net.backward(&fwd, &zero_logits(&fwd), &inject)?))
    }
}

pub fn lse_objective(rc: RelaxationConstants, a: LseAssignment, rho: f64) -> impl Fn(&Network, &Tensor) -> Result<(f64, Gradients)> {
    move |net, x| {
        let fwd = net.forward(x, Mode::Eval)?;
        let loss = lse_loss(&fwd, net, &rc, &a, rho)?;
        Ok((loss.total, net.backward(&fwd, &zero_logits(&fwd), &loss.injections)?))
    }
}

/// Margins drawn uniformly from `[0, hi)` per layer.
pub fn random_margins(layers: usize, seed: u64, hi: f64) -> RelaxationConstants {
    let u = uniform(seed, 2000, 2 * layers, 0.0, hi);
    RelaxationConstants { delta: u[..layers].to_vec(), gamma: u[layers..].to_vec(), epsilon: 0.9 }
}

/// Plain-loop statistics loss computed from activations, independent of the
/// library's trace and loss code.
pub fn bn_loss_oracle(net: &Network, x: &Tensor) -> f64 {
    let fwd = net.forward(x, Mode::Eval).unwrap();
    let mut total = 0.0;
    for (i, &pos) in net.bn_indices().iter().enumerate() {
        let a = &fwd.inputs[pos];
        let b = a.batch();
        let shape = &a.shape()[1..];
        let ch = shape[0];
        let sp: usize = shape[1..].iter().product();
        let bn = net.bn(i);
        for c in 0..ch {
            let vals: Vec<f64> = (0..b).flat_map(|s| (0..sp).map(move |p| (s, p))).map(|(s, p)| a.data()[(s * ch + c) * sp + p]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
            total += (m - bn.running_mean.data()[c]).powi(2) + (sd - bn.running_var.data()[c].sqrt()).powi(2);
        }
    }
    total
}
