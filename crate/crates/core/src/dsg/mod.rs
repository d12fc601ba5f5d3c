//! Synthetic-data losses: statistics matching with slack margins, layerwise
//! sample enhancement, and kernel-spectrum correlation inhibition.

mod eig;
mod lse;
mod sci;
mod stat;

pub use eig::{eig_sym, frobenius, EigenDecomposition, MAX_SWEEPS};
pub use lse::{emphasized_stats, lse_assign, lse_loss, lse_sda_combine, LseAssignment, LseLoss};
pub use sci::{build_kernel, minmax_normalize, sci_loss, sci_loss_with, NoiseSet, SciLoss, SciNormalization, GAP_FLOOR};
pub use stat::{bn_stats_loss, compute_relaxation, relaxation_from_trace, sda_loss, RelaxationConstants, StatLoss};
