//! Clip-range calibration from observed values.

use serde::{Deserialize, Serialize};

use super::QuantParams;
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted};

/// Width used when all calibration samples are equal.
const DEGENERATE_WIDTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
#[derive(Default)]
pub enum Calibration {
    #[default]
    MinMax,
    Percentile {
        #[serde(default = "default_percentile")]
        p: f64,
    },
    Ema {
        #[serde(default = "default_ema_momentum")]
        momentum: f64,
    },
    Mse {
        #[serde(default = "default_mse_candidates")]
        candidates: usize,
        #[serde(default)]
        symmetric: bool,
    },
}

fn default_percentile() -> f64 {
    0.9999
}
fn default_ema_momentum() -> f64 {
    0.9
}
fn default_mse_candidates() -> usize {
    100
}

impl Calibration {
    pub fn percentile() -> Self {
        Calibration::Percentile { p: default_percentile() }
    }
    pub fn ema() -> Self {
        Calibration::Ema { momentum: default_ema_momentum() }
    }
    pub fn mse() -> Self {
        Calibration::Mse { candidates: default_mse_candidates(), symmetric: false }
    }

    /// Calibrates from an ordered sequence of batches. Non-EMA methods pool
    /// all batches.
    pub fn calibrate(&self, batches: &[&[f64]], bits: u32) -> Result<QuantParams> {
        match *self {
            Calibration::Ema { momentum } => calibrate_ema(batches, bits, momentum),
            _ => {
                let pooled: Vec<f64> = batches.iter().flat_map(|b| b.iter().copied()).collect();
                match *self {
                    Calibration::MinMax => calibrate_minmax(&pooled, bits),
                    Calibration::Percentile { p } => calibrate_percentile(&pooled, bits, p),
                    Calibration::Mse { candidates, symmetric } => calibrate_mse(&pooled, bits, candidates, symmetric),
                    Calibration::Ema { .. } => unreachable!(),
                }
            }
        }
    }
}

fn range_params(lo: f64, hi: f64, bits: u32) -> Result<QuantParams> {
    if hi > lo {
        QuantParams::from_range(lo, hi, bits)
    } else {
        QuantParams::from_range(lo, lo + DEGENERATE_WIDTH, bits)
    }
}

fn min_max(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("calibration samples".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in samples {
        if !v.is_finite() {
            return Err(Error::NonFinite("calibration samples".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

pub fn calibrate_minmax(samples: &[f64], bits: u32) -> Result<QuantParams> {
    let (lo, hi) = min_max(samples)?;
    range_params(lo, hi, bits)
}

/// Clips at the `(1-p)/2` and `(1+p)/2` quantiles (linear interpolation).
pub fn calibrate_percentile(samples: &[f64], bits: u32, p: f64) -> Result<QuantParams> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside (0, 1]")));
    }
    min_max(samples)?;
    let s = sorted(samples);
    let tail = (1.0 - p) / 2.0;
    range_params(quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail), bits)
}

/// Running extremes `m <- momentum * m + (1 - momentum) * batch_extreme`,
/// initialized from the first batch.
pub fn calibrate_ema(batches: &[&[f64]], bits: u32, momentum: f64) -> Result<QuantParams> {
    if !(momentum > 0.0 && momentum < 1.0) {
        return Err(Error::InvalidArgument(format!("EMA momentum {momentum} outside (0, 1)")));
    }
    let (first, rest) = batches.split_first().ok_or_else(|| Error::Empty("EMA batch sequence".into()))?;
    let (mut lo, mut hi) = min_max(first)?;
    for batch in rest {
        let (blo, bhi) = min_max(batch)?;
        lo = momentum * lo + (1.0 - momentum) * blo;
        hi = momentum * hi + (1.0 - momentum) * bhi;
    }
    range_params(lo, hi, bits)
}

pub fn quant_mse(samples: &[f64], qp: &QuantParams) -> f64 {
    samples.iter().map(|&v| (qp.quantize_dequantize_value(v) - v).powi(2)).sum::<f64>() / samples.len() as f64
}

/// Grid search over shrink factors `1, 1 - 1/n, ..., 1/n` of the min-max
/// range (about its center, or about zero when `symmetric`). Ties keep the
/// larger range.
pub fn calibrate_mse(samples: &[f64], bits: u32, n_candidates: usize, symmetric: bool) -> Result<QuantParams> {
    if n_candidates < 2 {
        return Err(Error::InvalidArgument("MSE search needs at least 2 candidates".into()));
    }
    let (lo, hi) = min_max(samples)?;
    let (center, half) = if symmetric { (0.0, lo.abs().max(hi.abs())) } else { ((lo + hi) / 2.0, (hi - lo) / 2.0) };
    let mut best = if symmetric { range_params(-half, half, bits)? } else { range_params(lo, hi, bits)? };
    let mut best_mse = quant_mse(samples, &best);
    for k in 1..n_candidates {
        let alpha = 1.0 - k as f64 / n_candidates as f64;
        let h = half * alpha;
        if !(h > 0.0) {
            continue;
        }
        let Ok(qp) = QuantParams::from_range(center - h, center + h, bits) else { continue };
        let mse = quant_mse(samples, &qp);
        if mse < best_mse {
            best = qp;
            best_mse = mse;
        }
    }
    Ok(best)
}
