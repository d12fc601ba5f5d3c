use serde::{Deserialize, Serialize};

use super::eig::{eig_sym, EigenDecomposition};
use crate::error::{Error, Result};
use crate::rng::{uniform_vec, StreamRng};
use crate::tensor::Tensor;

/// Smallest eigenvalue gap used in eigenvector derivatives.
pub const GAP_FLOOR: f64 = 1e-8;

/// Which spectrum supplies the min-max normalized weights of the cosine term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SciNormalization {
    #[default]
    Noise,
    Features,
}

/// Row-normalized features `phi` (row-major `B x D`) and row norms.
fn normalize_rows(f: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (b, d) = (f.batch(), f.row_len());
    let mut phi = vec![0.0; b * d];
    let mut norms = Vec::with_capacity(b);
    for i in 0..b {
        let row = f.row(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return Err(Error::ZeroNorm(i));
        }
        for k in 0..d {
            phi[i * d + k] = row[k] / n;
        }
        norms.push(n);
    }
    Ok((phi, norms))
}

fn gram(phi: &[f64], b: usize, d: usize) -> Tensor {
    let mut k = vec![0.0; b * b];
    for i in 0..b {
        k[i * b + i] = 1.0;
        for j in 0..i {
            let v: f64 = (0..d).map(|c| phi[i * d + c] * phi[j * d + c]).sum();
            k[i * b + j] = v;
            k[j * b + i] = v;
        }
    }
    Tensor::raw(vec![b, b], k)
}

fn as_matrix(features: &Tensor) -> Result<Tensor> {
    if features.shape().len() < 2 {
        return Err(Error::Shape(format!("features need a batch dimension, got {:?}", features.shape())));
    }
    Ok(features.flatten_batch())
}

/// `K = phi phi^T` over the ℓ2-normalized rows of a `B x D` feature matrix
/// (higher-rank inputs are flattened per sample). Unit diagonal, symmetric.
pub fn build_kernel(features: &Tensor) -> Result<Tensor> {
    let f = as_matrix(features)?;
    if f.batch() < 2 {
        return Err(Error::InvalidArgument("kernel needs at least 2 samples".into()));
    }
    let (phi, _) = normalize_rows(&f)?;
    Ok(gram(&phi, f.batch(), f.row_len()))
}

/// Min-max normalization to [0, 1]; a constant vector maps to zeros.
pub fn minmax_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Frozen uniform reference vectors together with their kernel spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSet {
    vectors: Tensor,
    eig: EigenDecomposition,
    checksum: u64,
}

impl NoiseSet {
    /// `batch x dim` entries drawn from U[0, 1).
    pub fn sample(batch: usize, dim: usize, rng: &mut StreamRng) -> Result<Self> {
        if batch < 2 || dim == 0 {
            return Err(Error::InvalidArgument(format!("noise set needs B >= 2 and D >= 1, got {batch}x{dim}")));
        }
        Self::from_tensor(Tensor::new(vec![batch, dim], uniform_vec(rng, batch * dim))?)
    }

    pub fn from_tensor(vectors: Tensor) -> Result<Self> {
        let vectors = as_matrix(&vectors)?;
        let eig = eig_sym(&build_kernel(&vectors)?)?;
        let checksum = vectors.checksum();
        Ok(NoiseSet { vectors, eig, checksum })
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn eigen(&self) -> &EigenDecomposition {
        &self.eig
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn batch(&self) -> usize {
        self.vectors.batch()
    }

    pub fn dim(&self) -> usize {
        self.vectors.row_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SciLoss {
    /// `max(inner, 0)`.
    pub value: f64,
    pub inner: f64,
    /// Gradient w.r.t. the features, same shape as the input.
    pub grad: Tensor,
    pub feature_eigenvalues: Vec<f64>,
}

/// Correlation-inhibition loss with noise-spectrum weights.
pub fn sci_loss(features: &Tensor, noise: &NoiseSet) -> Result<SciLoss> {
    sci_loss_with(features, noise, SciNormalization::Noise)
}

/// `max(sum_i |lambda_f^i - lambda_r^i| - w_i <v_f^i, v_r^i>, 0)` where the
/// eigenpairs of both kernels are matched by descending rank and `w` is the
/// min-max normalized eigenvalue vector chosen by `norm`.
pub fn sci_loss_with(features: &Tensor, noise: &NoiseSet, norm: SciNormalization) -> Result<SciLoss> {
    let f = as_matrix(features)?;
    if f.shape() != noise.vectors.shape() {
        return Err(Error::Shape(format!("features {:?} vs noise {:?}", f.shape(), noise.vectors.shape())));
    }
    let (b, d) = (f.batch(), f.row_len());
    let (phi, norms) = normalize_rows(&f)?;
    let ef = eig_sym(&gram(&phi, b, d))?;
    let er = &noise.eig;
    let w = match norm {
        SciNormalization::Noise => minmax_normalize(&er.values),
        SciNormalization::Features => minmax_normalize(&ef.values),
    };
    let vf: Vec<Vec<f64>> = (0..b).map(|k| ef.vector(k)).collect();
    let vr: Vec<Vec<f64>> = (0..b).map(|k| er.vector(k)).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let cos: Vec<f64> = (0..b).map(|i| dot(&vf[i], &vr[i])).collect();
    let inner: f64 = (0..b).map(|i| (ef.values[i] - er.values[i]).abs() - w[i] * cos[i]).sum();
    let value = inner.max(0.0);
    let mut grad = vec![0.0; b * d];
    if inner > 0.0 {
        // dL/dK = sum_i sgn_i v_i v_i^T + sum_i sum_{k != i} (g_i . v_k)/(lambda_i - lambda_k) v_k v_i^T,
        // with g_i = -w_i u_i.
        let mut gk = vec![0.0; b * b];
        for i in 0..b {
            let sgn = (ef.values[i] - er.values[i]).signum() * ((ef.values[i] != er.values[i]) as i32 as f64);
            let mut coef = vec![0.0; b];
            coef[i] = sgn;
            for k in 0..b {
                if k == i {
                    continue;
                }
                let mut gap = ef.values[i] - ef.values[k];
                if gap.abs() < GAP_FLOOR {
                    gap = if i < k { GAP_FLOOR } else { -GAP_FLOOR };
                }
                coef[k] = -w[i] * dot(&vr[i], &vf[k]) / gap;
            }
            for r in 0..b {
                let acc: f64 = coef.iter().zip(&vf).map(|(ck, vk)| ck * vk[r]).sum();
                for c in 0..b {
                    gk[r * b + c] += acc * vf[i][c];
                }
            }
        }
        if norm == SciNormalization::Features {
            add_weight_gradient(&mut gk, &ef, &cos);
        }
        // dphi = (G + G^T) phi, then through the row normalization.
        for r in 0..b {
            let mut dphi = vec![0.0; d];
            for s in 0..b {
                let sym = gk[r * b + s] + gk[s * b + r];
                if sym != 0.0 {
                    for c in 0..d {
                        dphi[c] += sym * phi[s * d + c];
                    }
                }
            }
            let proj: f64 = (0..d).map(|c| phi[r * d + c] * dphi[c]).sum();
            for c in 0..d {
                grad[r * d + c] = (dphi[c] - phi[r * d + c] * proj) / norms[r];
            }
        }
    }
    let grad = Tensor::new(features.shape().to_vec(), grad)?;
    Ok(SciLoss { value, inner, grad, feature_eigenvalues: ef.values })
}

/// Adds the derivative of `-sum_i w_i(lambda_f) cos_i` through the min-max
/// weights when they are computed from the feature spectrum.
fn add_weight_gradient(gk: &mut [f64], ef: &EigenDecomposition, cos: &[f64]) {
    let b = ef.n;
    let (hi, lo) = (ef.values[0], ef.values[b - 1]);
    let span = hi - lo;
    if !(span > 0.0) {
        return;
    }
    // w_i = (lambda_i - lo)/span; dw_i/dlambda_j for j = i, top, bottom.
    let mut dl = vec![0.0; b];
    for i in 0..b {
        let wi = (ef.values[i] - lo) / span;
        dl[i] += -cos[i] / span;
        dl[0] += -cos[i] * (-wi / span);
        dl[b - 1] += -cos[i] * ((wi - 1.0) / span);
    }
    for j in 0..b {
        if dl[j] == 0.0 {
            continue;
        }
        let v = ef.vector(j);
        for r in 0..b {
            for c in 0..b {
                gk[r * b + c] += dl[j] * v[r] * v[c];
            }
        }
    }
}
