use serde::{Deserialize, Serialize};

use crate::dsg::SciNormalization;
use crate::error::{Error, Result};
use crate::quant::Calibration;

/// Which generation losses are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain BN statistics matching.
    #[serde(rename = "bn", alias = "vanilla")]
    Vanilla,
    Sda,
    Lse,
    Sci,
    Dsg,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Vanilla, Variant::Sda, Variant::Lse, Variant::Sci, Variant::Dsg];

    /// `(use_sda, use_lse, use_sci)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Variant::Vanilla => (false, false, false),
            Variant::Sda => (true, false, false),
            Variant::Lse => (false, true, false),
            Variant::Sci => (false, false, true),
            Variant::Dsg => (true, true, true),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Sda => "+SDA",
            Variant::Lse => "+LSE",
            Variant::Sci => "+SCI",
            Variant::Dsg => "DSG",
        }
    }

    pub fn mode_name(self) -> &'static str {
        match self {
            Variant::Vanilla => "bn",
            Variant::Sda => "sda",
            Variant::Lse => "lse",
            Variant::Sci => "sci",
            Variant::Dsg => "dsg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QatOptions {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub latent_dim: usize,
    /// Widths of the generator's dense+BN+ReLU blocks.
    pub generator_hidden: Vec<usize>,
    /// Momentum of the activation clip-range EMA during training.
    pub act_ema_momentum: f64,
}

impl Default for QatOptions {
    fn default() -> Self {
        QatOptions { epochs: 40, steps_per_epoch: 50, latent_dim: 16, generator_hidden: vec![64, 64], act_ema_momentum: 0.9 }
    }
}

/// How per-sample enhanced losses are reduced over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LseReduction {
    /// `1/B` times the enhancement-matrix sum; keeps the statistics term on
    /// the scale of the plain batch loss.
    Mean,
    /// The plain enhancement-matrix sum.
    Sum,
}

/// Parameters of one quantization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub w_bits: u32,
    pub a_bits: u32,
    /// Percentile used for the slack margins.
    pub epsilon: f64,
    /// Generation iterations per synthetic batch.
    pub iterations: usize,
    pub batch_size: usize,
    /// Synthetic samples used to calibrate PTQ.
    pub n_calibration: usize,
    /// Gaussian probe size for the slack margins.
    pub n_probe: usize,
    pub use_sda: bool,
    pub use_lse: bool,
    pub use_sci: bool,
    /// Probability mass of the focus sample in layerwise-enhanced statistics.
    pub lse_focus: f64,
    pub lse_reduction: LseReduction,
    pub sci_normalization: SciNormalization,
    pub calibration: Calibration,
    pub ptq_lr: f64,
    pub generator_lr: f64,
    pub student_lr: f64,
    /// Distillation weight.
    pub beta: f64,
    /// Distillation temperature.
    pub tau: f64,
    pub qat: QatOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            w_bits: 4,
            a_bits: 4,
            epsilon: 0.9,
            iterations: 500,
            batch_size: 32,
            n_calibration: 256,
            n_probe: 1024,
            use_sda: true,
            use_lse: true,
            use_sci: true,
            lse_focus: 0.5,
            lse_reduction: LseReduction::Mean,
            sci_normalization: SciNormalization::Noise,
            calibration: Calibration::MinMax,
            ptq_lr: 0.1,
            generator_lr: 1e-3,
            student_lr: 1e-4,
            beta: 1.0,
            tau: 1.0,
            qat: QatOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn with_variant(mut self, v: Variant) -> Self {
        (self.use_sda, self.use_lse, self.use_sci) = v.flags();
        self
    }

    /// The variant whose flags match, if any.
    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.flags() == (self.use_sda, self.use_lse, self.use_sci))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, b) in [("w_bits", self.w_bits), ("a_bits", self.a_bits)] {
            if !(2..=8).contains(&b) {
                return bad(format!("{name} = {b} outside [2, 8]"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon = {} outside (0, 1]", self.epsilon));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size = {} < 2", self.batch_size));
        }
        if self.n_calibration < 1 {
            return bad("n_calibration must be positive".into());
        }
        if self.n_probe < 2 {
            return bad(format!("n_probe = {} < 2", self.n_probe));
        }
        if !(self.lse_focus > 0.0 && self.lse_focus <= 1.0) {
            return bad(format!("lse_focus = {} outside (0, 1]", self.lse_focus));
        }
        for (name, v) in [("ptq_lr", self.ptq_lr), ("generator_lr", self.generator_lr), ("student_lr", self.student_lr), ("tau", self.tau)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta = {} must be non-negative", self.beta));
        }
        if self.qat.latent_dim == 0 || self.qat.generator_hidden.is_empty() || self.qat.generator_hidden.contains(&0) {
            return bad("generator needs a positive latent size and at least one non-empty block".into());
        }
        if !(self.qat.act_ema_momentum > 0.0 && self.qat.act_ema_momentum < 1.0) {
            return bad(format!("act_ema_momentum = {} outside (0, 1)", self.qat.act_ema_momentum));
        }
        Ok(())
    }
}
