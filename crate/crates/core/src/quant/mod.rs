//! Uniform affine fake quantization.
//!
//! The grid is anchored at `clip_min`: level `q` dequantizes to
//! `clip_min + q * scale`, so both clip endpoints are representable. Rounding
//! is half-to-even. Gradients use the straight-through estimator: identity
//! inside `[clip_min, clip_max]`, zero outside.

mod calibrate;
mod network;

pub use calibrate::{calibrate_ema, calibrate_minmax, calibrate_mse, calibrate_percentile, quant_mse, Calibration};
pub use network::QuantizedNetwork;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: u32,
    pub clip_min: f64,
    pub clip_max: f64,
    pub scale: f64,
    /// Integer level closest to real zero, clamped to the grid.
    pub zero_point: i64,
}

impl QuantParams {
    pub fn from_range(clip_min: f64, clip_max: f64, bits: u32) -> Result<Self> {
        if !(2..=8).contains(&bits) {
            return Err(Error::InvalidArgument(format!("bit-width {bits} outside [2, 8]")));
        }
        if !clip_min.is_finite() || !clip_max.is_finite() || clip_min >= clip_max {
            return Err(Error::InvalidArgument(format!("invalid clip range [{clip_min}, {clip_max}]")));
        }
        let levels = Self::levels_for(bits);
        let scale = (clip_max - clip_min) / levels as f64;
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("clip range [{clip_min}, {clip_max}] too narrow")));
        }
        let zero_point = ((-clip_min / scale).round_ties_even() as i64).clamp(0, levels);
        Ok(QuantParams { bits, clip_min, clip_max, scale, zero_point })
    }

    fn levels_for(bits: u32) -> i64 {
        (1i64 << bits) - 1
    }

    /// Highest integer level, `2^bits - 1`.
    pub fn max_level(&self) -> i64 {
        Self::levels_for(self.bits)
    }

    pub fn validate(&self) -> Result<()> {
        let fresh = QuantParams::from_range(self.clip_min, self.clip_max, self.bits)?;
        if fresh.scale.to_bits() != self.scale.to_bits() || fresh.zero_point != self.zero_point {
            return Err(Error::InvalidArgument("scale/zero-point inconsistent with clip range".into()));
        }
        Ok(())
    }

    pub fn clip(&self, x: f64) -> f64 {
        x.clamp(self.clip_min, self.clip_max)
    }

    pub fn quantize(&self, x: f64) -> i64 {
        let t = (self.clip(x) - self.clip_min) / self.scale;
        (t.round_ties_even() as i64).clamp(0, self.max_level())
    }

    pub fn dequantize(&self, q: i64) -> f64 {
        self.clip_min + q as f64 * self.scale
    }

    pub fn quantize_dequantize_value(&self, x: f64) -> f64 {
        self.dequantize(self.quantize(x))
    }

    pub fn in_range(&self, x: f64) -> bool {
        x >= self.clip_min && x <= self.clip_max
    }

    pub fn quantize_dequantize(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.quantize_dequantize_value(v))
    }

    /// Forward value plus the straight-through mask (true where gradient passes).
    pub fn fake_quant(&self, x: &Tensor) -> (Tensor, Vec<bool>) {
        let mask = x.data().iter().map(|&v| self.in_range(v)).collect();
        (self.quantize_dequantize(x), mask)
    }
}

/// Straight-through backward: passes `grad` where the mask is set.
pub fn ste_backward(grad: &Tensor, mask: &[bool]) -> Tensor {
    let data = grad.data().iter().zip(mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect();
    Tensor::raw(grad.shape().to_vec(), data)
}
