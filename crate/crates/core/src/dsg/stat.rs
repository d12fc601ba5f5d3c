use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ActivationTrace, BnBatchStats, Mode, Network, TraceGrad};
use crate::rng::{gaussian_vec, StreamRng};
use crate::stats::{quantile_sorted, sorted};
use crate::tensor::Tensor;

/// Per-layer hinge margins on the mean (`delta`) and std (`gamma`) deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationConstants {
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub epsilon: f64,
}

impl RelaxationConstants {
    /// Zero margins: the hinge loss reduces to plain statistics matching.
    pub fn zero(n_layers: usize) -> Self {
        RelaxationConstants { delta: vec![0.0; n_layers], gamma: vec![0.0; n_layers], epsilon: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.delta.len() != n || self.gamma.len() != n {
            return Err(Error::Shape(format!("relaxation constants for {} layers, network has {n}", self.delta.len())));
        }
        if self.delta.iter().chain(&self.gamma).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("relaxation margins must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// A statistics loss: value per BN layer, their sum, and the gradient with
/// respect to the traced batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StatLoss {
    pub per_layer: Vec<f64>,
    pub total: f64,
    pub grad: TraceGrad,
}

/// `sum_c max(|a_c - t_c| - margin, 0)^2` and its gradient w.r.t. `a`.
/// The gradient at the kink is 0.
pub(crate) fn hinge_sq(a: &[f64], target: &[f64], margin: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; a.len()];
    for c in 0..a.len() {
        let d = a[c] - target[c];
        let excess = d.abs() - margin;
        if excess > 0.0 {
            loss += excess * excess;
            grad[c] = 2.0 * excess * d.signum();
        }
    }
    (loss, grad)
}

pub(crate) fn bn_targets(net: &Network, i: usize) -> (Vec<f64>, Vec<f64>) {
    let bn = net.bn(i);
    (bn.running_mean.data().to_vec(), bn.running_std())
}

/// Hinge loss of one layer's statistics against the network's BN statistics.
pub(crate) fn layer_loss(net: &Network, i: usize, stats: &BnBatchStats, rc: &RelaxationConstants) -> (f64, Vec<f64>, Vec<f64>) {
    let (mu, sigma) = bn_targets(net, i);
    let (lm, gm) = hinge_sq(&stats.mean, &mu, rc.delta[i]);
    let (ls, gs) = hinge_sq(&stats.std, &sigma, rc.gamma[i]);
    (lm + ls, gm, gs)
}

fn check_trace(trace: &ActivationTrace, net: &Network) -> Result<()> {
    if trace.layers.len() != net.n_bn() {
        return Err(Error::Shape(format!("trace has {} BN layers, network {}", trace.layers.len(), net.n_bn())));
    }
    for (i, l) in trace.layers.iter().enumerate() {
        let c = net.bn(i).channels();
        if l.mean.len() != c || l.std.len() != c {
            return Err(Error::Shape(format!("trace layer {i} has {} channels, BN has {c}", l.mean.len())));
        }
    }
    Ok(())
}

/// Slack-aligned statistics loss: per layer
/// `||max(|mu~ - mu| - delta, 0)||^2 + ||max(|sigma~ - sigma| - gamma, 0)||^2`.
pub fn sda_loss(trace: &ActivationTrace, net: &Network, rc: &RelaxationConstants) -> Result<StatLoss> {
    check_trace(trace, net)?;
    rc.check(net.n_bn())?;
    let mut grad = TraceGrad::zeros_like(trace);
    let mut per_layer = Vec::with_capacity(net.n_bn());
    for (i, stats) in trace.layers.iter().enumerate() {
        let (l, gm, gs) = layer_loss(net, i, stats, rc);
        per_layer.push(l);
        grad.mean[i] = gm;
        grad.std[i] = gs;
    }
    let total = per_layer.iter().sum();
    Ok(StatLoss { per_layer, total, grad })
}

/// Plain statistics matching: per layer `||mu~ - mu||^2 + ||sigma~ - sigma||^2`.
pub fn bn_stats_loss(trace: &ActivationTrace, net: &Network) -> Result<StatLoss> {
    sda_loss(trace, net, &RelaxationConstants::zero(net.n_bn()))
}

/// Margins from a Gaussian probe: per BN layer, the `epsilon`-quantile across
/// channels of `|mu~0 - mu|` and of `|sigma~0 - sigma|`.
pub fn compute_relaxation(net: &Network, epsilon: f64, n_probe: usize, rng: &mut StreamRng) -> Result<RelaxationConstants> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1]")));
    }
    if n_probe < 2 {
        return Err(Error::InvalidArgument(format!("probe size {n_probe} < 2")));
    }
    if net.n_bn() == 0 {
        return Err(Error::NoBatchNorm);
    }
    let mut shape = vec![n_probe];
    shape.extend_from_slice(net.input_shape());
    let len = shape.iter().product();
    let probe = Tensor::new(shape, gaussian_vec(rng, len))?;
    let fwd = net.forward(&probe, Mode::Eval)?.without_cache();
    relaxation_from_trace(&fwd.trace, net, epsilon)
}

pub fn relaxation_from_trace(trace: &ActivationTrace, net: &Network, epsilon: f64) -> Result<RelaxationConstants> {
    check_trace(trace, net)?;
    let mut delta = Vec::with_capacity(net.n_bn());
    let mut gamma = Vec::with_capacity(net.n_bn());
    for (i, stats) in trace.layers.iter().enumerate() {
        let (mu, sigma) = bn_targets(net, i);
        let dm: Vec<f64> = stats.mean.iter().zip(&mu).map(|(a, b)| (a - b).abs()).collect();
        let ds: Vec<f64> = stats.std.iter().zip(&sigma).map(|(a, b)| (a - b).abs()).collect();
        delta.push(quantile_sorted(&sorted(&dm), epsilon));
        gamma.push(quantile_sorted(&sorted(&ds), epsilon));
    }
    Ok(RelaxationConstants { delta, gamma, epsilon })
}
