//! Data-free quantization workbench.
//!
//! Trains small batch-normalized networks, synthesizes calibration and
//! training data from their BN statistics with diversity-promoting losses,
//! quantizes them post-training or with quantization-aware training, and
//! measures the diversity of the synthetic data.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dsg;
pub mod error;
pub mod io;
pub mod metrics;
pub mod net;
pub mod pipelines;
pub mod quant;
pub mod rng;
pub mod stats;
pub mod tensor;

pub mod cli;

pub use error::{Error, Result};
pub use net::{Layer, Mode, Network};
pub use quant::{QuantParams, QuantizedNetwork};
pub use tensor::Tensor;
