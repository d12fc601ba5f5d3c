use serde::{Deserialize, Serialize};

use super::stat::{layer_loss, RelaxationConstants};
use crate::error::{Error, Result};
use crate::net::{channel_layout, BnBatchStats, Forward, Injection, Network};
use crate::tensor::Tensor;

/// Enhancement matrix: row `j` is `(1/N)(1 + e_{a(j)})`, so sample `j` counts
/// its assigned layer twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LseAssignment {
    pub batch: usize,
    pub layers: usize,
    /// Row-major `batch x layers`.
    pub matrix: Vec<f64>,
    pub assignment: Vec<usize>,
}

impl LseAssignment {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.matrix[j * self.layers..(j + 1) * self.layers]
    }

    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.matrix[j * self.layers + i]
    }
}

/// Cyclic assignment `a(j) = j mod N`.
pub fn lse_assign(batch: usize, layers: usize) -> Result<LseAssignment> {
    if batch == 0 || layers == 0 {
        return Err(Error::InvalidArgument(format!("enhancement needs B >= 1 and N >= 1, got {batch}x{layers}")));
    }
    let n = layers as f64;
    let assignment: Vec<usize> = (0..batch).map(|j| j % layers).collect();
    let mut matrix = vec![1.0 / n; batch * layers];
    for (j, &a) in assignment.iter().enumerate() {
        matrix[j * layers + a] = 2.0 / n;
    }
    Ok(LseAssignment { batch, layers, matrix, assignment })
}

/// `sum_j (1/N)(sum_i l_{j,i} + l_{j,a(j)})` for a row-major `B x N` loss matrix.
pub fn lse_sda_combine(losses: &Tensor, a: &LseAssignment) -> Result<f64> {
    if losses.shape() != [a.batch, a.layers] {
        return Err(Error::Shape(format!("loss matrix {:?} vs assignment {}x{}", losses.shape(), a.batch, a.layers)));
    }
    Ok(losses.data().iter().zip(&a.matrix).map(|(l, w)| l * w).sum())
}

/// Per-channel statistics of a BN input in which sample `focus` carries
/// probability mass `rho` and the remaining samples share `1 - rho` equally.
/// With `rho = 1/B` these are the ordinary batch statistics.
pub fn emphasized_stats(x: &Tensor, focus: usize, rho: f64) -> BnBatchStats {
    let b = x.batch();
    let (ch, sp) = channel_layout(&x.shape()[1..]);
    let (ws, wo) = sample_weights(b, sp, rho);
    let mut mean = vec![0.0; ch];
    let mut second = vec![0.0; ch];
    for s in 0..b {
        let w = if s == focus { ws } else { wo };
        for c in 0..ch {
            let base = (s * ch + c) * sp;
            for &v in &x.data()[base..base + sp] {
                mean[c] += w * v;
                second[c] += w * v * v;
            }
        }
    }
    let std = mean.iter().zip(&second).map(|(m, q)| (q - m * m).max(0.0).sqrt()).collect();
    BnBatchStats { mean, std }
}

/// Per-element weights (focus sample, other samples).
fn sample_weights(b: usize, sp: usize, rho: f64) -> (f64, f64) {
    if b == 1 {
        (1.0 / sp as f64, 0.0)
    } else {
        (rho / sp as f64, (1.0 - rho) / ((b - 1) * sp) as f64)
    }
}

/// Layerwise-enhanced statistics loss.
#[derive(Debug, Clone)]
pub struct LseLoss {
    pub total: f64,
    /// Row-major `B x N` per-sample, per-layer hinge losses.
    pub per_sample: Tensor,
    /// Gradients at each BN layer's input position.
    pub injections: Vec<Injection>,
}

/// Per-sample hinge losses on emphasized statistics at every BN layer,
/// combined with the enhancement matrix, with gradients w.r.t. BN inputs.
pub fn lse_loss(fwd: &Forward, net: &Network, rc: &RelaxationConstants, a: &LseAssignment, rho: f64) -> Result<LseLoss> {
    let nb = net.n_bn();
    if nb == 0 {
        return Err(Error::NoBatchNorm);
    }
    if rc.len() != nb || a.layers != nb {
        return Err(Error::Shape(format!("{nb} BN layers, {} margins, {} assignment columns", rc.len(), a.layers)));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("focus mass {rho} outside (0, 1]")));
    }
    let b = fwd.logits().batch();
    if a.batch != b {
        return Err(Error::Shape(format!("assignment for {} samples, batch has {b}", a.batch)));
    }
    let mut per_sample = vec![0.0; b * nb];
    let mut injections = Vec::with_capacity(nb);
    for (i, &pos) in net.bn_indices().iter().enumerate() {
        let x = &fwd.inputs[pos];
        let (ch, sp) = channel_layout(&x.shape()[1..]);
        let (ws, wo) = sample_weights(b, sp, rho);
        // Per focus sample f: a_f = X[f,i] * dl/dm_f and k_f = X[f,i] * dl/dstd_f / std_f,
        // so that dL/dx_{j,c,p} = sum_f w_j(f) (a_f + k_f (x - m_f)).
        let mut coef_a = vec![0.0; b * ch];
        let mut coef_k = vec![0.0; b * ch];
        let mut coef_km = vec![0.0; b * ch];
        for f in 0..b {
            let st = emphasized_stats(x, f, rho);
            let (l, gm, gs) = layer_loss(net, i, &st, rc);
            per_sample[f * nb + i] = l;
            let xw = a.weight(f, i);
            for c in 0..ch {
                let k = if st.std[c] > 0.0 { xw * gs[c] / st.std[c] } else { 0.0 };
                coef_a[f * ch + c] = xw * gm[c];
                coef_k[f * ch + c] = k;
                coef_km[f * ch + c] = k * st.mean[c];
            }
        }
        let mut sum_a = vec![0.0; ch];
        let mut sum_k = vec![0.0; ch];
        for f in 0..b {
            for c in 0..ch {
                sum_a[c] += coef_a[f * ch + c] - coef_km[f * ch + c];
                sum_k[c] += coef_k[f * ch + c];
            }
        }
        let mut g = vec![0.0; x.len()];
        for j in 0..b {
            for c in 0..ch {
                let own_a = coef_a[j * ch + c] - coef_km[j * ch + c];
                let own_k = coef_k[j * ch + c];
                let base = (j * ch + c) * sp;
                for p in base..base + sp {
                    let v = x.data()[p];
                    g[p] = wo * (sum_a[c] + sum_k[c] * v) + (ws - wo) * (own_a + own_k * v);
                }
            }
        }
        injections.push(Injection { position: pos, grad: Tensor::new(x.shape().to_vec(), g)? });
    }
    let per_sample = Tensor::new(vec![b, nb], per_sample)?;
    let total = lse_sda_combine(&per_sample, a)?;
    Ok(LseLoss { total, per_sample, injections })
}
