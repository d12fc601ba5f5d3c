use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ptq::{calibrate_quantized, generate_calibration_set, CalibrationSet};
use super::qat::dsg_qat_train;
use super::{RunConfig, Variant};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::metrics::{diversity_report, DiversityOptions, DiversityReport};
use crate::net::Network;
use crate::tensor::Tensor;

/// A trained teacher and its held-out data, run under one seed.
#[derive(Debug, Clone)]
pub struct SeedCase {
    pub seed: u64,
    pub teacher: Network,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOptions {
    pub variants: Vec<Variant>,
    pub ptq: bool,
    pub qat: bool,
    /// Diversity diagnostics of each PTQ calibration set.
    pub diversity: bool,
    pub diversity_options: DiversityOptions,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions { variants: Variant::ALL.to_vec(), ptq: true, qat: true, diversity: true, diversity_options: DiversityOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub variant: Variant,
    pub seed: u64,
    pub fp_accuracy: f64,
    pub ptq_accuracy: Option<f64>,
    pub qat_accuracy: Option<f64>,
    pub diversity: Option<DiversityReport>,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Some(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub label: String,
    pub seeds: usize,
    pub fp: MeanStd,
    pub ptq: Option<MeanStd>,
    pub qat: Option<MeanStd>,
    pub stat_variance: Option<MeanStd>,
    pub wasserstein: Option<MeanStd>,
    pub similarity_index_s: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// Ordered by variant (as requested), then seed (as given).
    pub rows: Vec<SeedResult>,
    pub summary: Vec<VariantSummary>,
}

impl AblationTable {
    pub fn summary_for(&self, v: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == v)
    }
}

/// All calibration batches stacked into one `[n, ...]` tensor.
pub fn stack_batches(set: &CalibrationSet) -> Result<Tensor> {
    let first = set.batches.first().ok_or_else(|| Error::Empty("calibration set".into()))?;
    let mut shape = first.samples.shape().to_vec();
    shape[0] = set.batches.iter().map(|b| b.samples.batch()).sum();
    let data = set.batches.iter().flat_map(|b| b.samples.data().iter().copied()).collect();
    Tensor::new(shape, data)
}

fn run_one(case: &SeedCase, base: &RunConfig, v: Variant, opts: &AblationOptions) -> Result<SeedResult> {
    let cfg = RunConfig { seed: case.seed, ..base.clone() }.with_variant(v);
    let fp_accuracy = super::evaluate(&case.teacher, &case.test)?;
    let (mut ptq_accuracy, mut diversity) = (None, None);
    if opts.ptq {
        let set = generate_calibration_set(&case.teacher, &cfg)?;
        let q = calibrate_quantized(&case.teacher, &set.tensors(), &cfg)?;
        ptq_accuracy = Some(q.accuracy(&case.test.x, &case.test.y)?);
        if opts.diversity {
            diversity = Some(diversity_report(&case.teacher, &stack_batches(&set)?, opts.diversity_options)?);
        }
    }
    let qat_accuracy = if opts.qat {
        let out = dsg_qat_train(&case.teacher, &cfg)?;
        Some(out.student.accuracy(&case.test.x, &case.test.y)?)
    } else {
        None
    };
    Ok(SeedResult { variant: v, seed: case.seed, fp_accuracy, ptq_accuracy, qat_accuracy, diversity })
}

/// Runs every (variant, seed) pair in parallel; results are aggregated in
/// request order, so the table does not depend on scheduling.
pub fn ablation_run(cases: &[SeedCase], base: &RunConfig, opts: &AblationOptions) -> Result<AblationTable> {
    base.validate()?;
    if cases.is_empty() || opts.variants.is_empty() {
        return Err(Error::Empty("ablation needs at least one seed and one variant".into()));
    }
    let jobs: Vec<(Variant, &SeedCase)> = opts.variants.iter().flat_map(|&v| cases.iter().map(move |c| (v, c))).collect();
    let rows = jobs.par_iter().map(|(v, c)| run_one(c, base, *v, opts)).collect::<Result<Vec<_>>>()?;
    let summary = opts
        .variants
        .iter()
        .map(|&v| {
            let mine: Vec<&SeedResult> = rows.iter().filter(|r| r.variant == v).collect();
            let col = |f: &dyn Fn(&SeedResult) -> Option<f64>| -> Option<MeanStd> {
                let xs: Option<Vec<f64>> = mine.iter().map(|r| f(r)).collect();
                xs.and_then(|x| MeanStd::of(&x))
            };
            VariantSummary {
                variant: v,
                label: v.label().to_string(),
                seeds: mine.len(),
                fp: col(&|r| Some(r.fp_accuracy)).expect("non-empty"),
                ptq: col(&|r| r.ptq_accuracy),
                qat: col(&|r| r.qat_accuracy),
                stat_variance: col(&|r| r.diversity.as_ref().map(|d| d.stat_variance)),
                wasserstein: col(&|r| r.diversity.as_ref().map(|d| d.wasserstein_mean)),
                similarity_index_s: col(&|r| r.diversity.as_ref().map(|d| d.similarity_index_s)),
            }
        })
        .collect();
    Ok(AblationTable { rows, summary })
}
