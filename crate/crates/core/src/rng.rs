//! Seeded random streams.
//!
//! Every random draw in the workbench comes from a ChaCha8 generator keyed by
//! the run seed and a [`Stream`] identifier, so that adding draws for one
//! purpose never perturbs another. The stream word is `purpose << 32 | index`,
//! where `index` distinguishes repeated uses of the same purpose (batches,
//! epochs).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Purpose of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Parameter initialization.
    Init = 1,
    /// Dataset sampling and shuffling.
    Data = 2,
    /// Frozen SCI noise vectors.
    Noise = 3,
    /// Gaussian probe batch for relaxation constants.
    Probe = 4,
    /// Synthetic sample initialization.
    Synth = 5,
    /// Generator latent codes.
    Latent = 6,
    /// Generator labels.
    Labels = 7,
}

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, purpose: Stream, index: u32) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | index as u64);
    rng
}

pub fn gaussian_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn uniform_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}
