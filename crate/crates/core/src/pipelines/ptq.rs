use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::StatObjective;
use super::RunConfig;
use crate::dsg::{compute_relaxation, lse_assign, sci_loss_with, LseAssignment, NoiseSet, RelaxationConstants};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::net::optim::{Hyper, Optimizer};
use crate::net::{Mode, Network};
use crate::quant::QuantizedNetwork;
use crate::rng::{gaussian_vec, stream, Stream};
use crate::tensor::Tensor;

/// Loss terms at one generation iteration (before that iteration's update;
/// the last row is the final batch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub total: f64,
    pub stat: f64,
    pub sci: f64,
}

/// A synthetic batch with the state that produced it.
#[derive(Debug, Clone)]
pub struct SynthBatch {
    pub samples: Tensor,
    /// Present for generator batches only.
    pub labels: Option<Vec<usize>>,
    pub lse: LseAssignment,
    pub noise: NoiseSet,
    pub iterations: usize,
    pub trajectory: Vec<LossRow>,
}

/// Slack margins from a Gaussian probe shaped like the network input.
pub fn run_relaxation(net: &Network, cfg: &RunConfig) -> Result<RelaxationConstants> {
    compute_relaxation(net, cfg.epsilon, cfg.n_probe, &mut stream(cfg.seed, Stream::Probe, 0))
}

fn sample_shape_len(net: &Network) -> usize {
    net.input_shape().iter().product()
}

/// Optimizes one batch of synthetic inputs (index `index` of the run) by Adam
/// against the frozen network. Only the inputs change.
pub fn generate_batch(net: &Network, cfg: &RunConfig, rc: &RelaxationConstants, index: u32) -> Result<SynthBatch> {
    cfg.validate()?;
    if net.n_bn() == 0 {
        return Err(Error::NoBatchNorm);
    }
    let b = cfg.batch_size;
    let d = sample_shape_len(net);
    let mut shape = vec![b];
    shape.extend_from_slice(net.input_shape());
    let mut x = Tensor::new(shape, gaussian_vec(&mut stream(cfg.seed, Stream::Synth, index), b * d))?;
    let noise = NoiseSet::sample(b, d, &mut stream(cfg.seed, Stream::Noise, index))?;
    let assign = lse_assign(b, net.n_bn())?;
    let objective = StatObjective::new(net, rc, cfg.use_sda, cfg.use_lse.then(|| (assign.clone(), cfg.lse_focus, cfg.lse_reduction)));
    let mut optim = Optimizer::new(Hyper::adam(cfg.ptq_lr));
    let mut out_shape = vec![b];
    out_shape.extend(net.output_shape());
    let zero_logits = Tensor::zeros(&out_shape);
    let mut trajectory = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..=cfg.iterations {
        let fwd = net.forward(&x, Mode::Eval)?;
        let (stat, inject) = objective.evaluate(&fwd)?;
        let sci = if cfg.use_sci { Some(sci_loss_with(&x, &noise, cfg.sci_normalization)?) } else { None };
        let sci_value = sci.as_ref().map_or(0.0, |s| s.value);
        let total = stat + sci_value;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("generation loss at iteration {it}")));
        }
        trajectory.push(LossRow { iteration: it, total, stat, sci: sci_value });
        if it == cfg.iterations {
            break;
        }
        let mut grad = net.backward(&fwd, &zero_logits, &inject)?.input;
        if let Some(s) = &sci {
            grad.add_assign(&s.grad)?;
        }
        optim.step(&mut [&mut x], &[&grad])?;
    }
    Ok(SynthBatch { samples: x, labels: None, lse: assign, noise, iterations: cfg.iterations, trajectory })
}

/// One synthetic batch with freshly computed margins.
pub fn dsg_ptq_generate(net: &Network, cfg: &RunConfig) -> Result<SynthBatch> {
    let rc = run_relaxation(net, cfg)?;
    generate_batch(net, cfg, &rc, 0)
}

#[derive(Debug, Clone)]
pub struct CalibrationSet {
    pub relaxation: RelaxationConstants,
    pub batches: Vec<SynthBatch>,
}

impl CalibrationSet {
    pub fn tensors(&self) -> Vec<Tensor> {
        self.batches.iter().map(|b| b.samples.clone()).collect()
    }
}

/// `ceil(n_calibration / batch_size)` batches sharing one set of margins.
pub fn generate_calibration_set(net: &Network, cfg: &RunConfig) -> Result<CalibrationSet> {
    cfg.validate()?;
    let relaxation = run_relaxation(net, cfg)?;
    let n = cfg.n_calibration.div_ceil(cfg.batch_size) as u32;
    let batches = (0..n).into_par_iter().map(|i| generate_batch(net, cfg, &relaxation, i)).collect::<Result<Vec<_>>>()?;
    Ok(CalibrationSet { relaxation, batches })
}

/// Weight quantizers by min-max, activation quantizers by the configured
/// calibrator over the given batches. No network parameter changes.
pub fn calibrate_quantized(net: &Network, batches: &[Tensor], cfg: &RunConfig) -> Result<QuantizedNetwork> {
    if batches.iter().all(|b| b.is_empty()) {
        return Err(Error::Empty("calibration batches".into()));
    }
    QuantizedNetwork::calibrate(net.clone(), batches, cfg.w_bits, cfg.a_bits, cfg.calibration)
}

#[derive(Debug, Clone)]
pub struct PtqOutcome {
    pub set: CalibrationSet,
    pub quantized: QuantizedNetwork,
    pub accuracy: f64,
}

/// Generation, calibration, and evaluation on `test`.
pub fn ptq_run(net: &Network, cfg: &RunConfig, test: &Dataset) -> Result<PtqOutcome> {
    let set = generate_calibration_set(net, cfg)?;
    let quantized = calibrate_quantized(net, &set.tensors(), cfg)?;
    let accuracy = quantized.accuracy(&test.x, &test.y)?;
    Ok(PtqOutcome { set, quantized, accuracy })
}
