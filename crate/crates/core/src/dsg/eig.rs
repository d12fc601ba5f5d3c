use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix. Eigenvalues descend; column `k`
/// of `vectors` (row-major `n x n`) is the k-th eigenvector, sign-fixed so its
/// largest-magnitude component is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub n: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
    pub sweeps: usize,
}

impl EigenDecomposition {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.vectors[r * self.n + k]).collect()
    }

    /// `V diag(values) V^T`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n).map(|k| self.vectors[i * n + k] * self.values[k] * self.vectors[j * n + k]).sum();
            }
        }
        out
    }
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cyclic Jacobi eigensolver. Rotations sweep pairs `(p, q)`, `p < q`, in
/// row-major order until a full sweep finds every off-diagonal entry
/// negligible against its diagonal pair or the matrix norm.
pub fn eig_sym(k: &Tensor) -> Result<EigenDecomposition> {
    let shape = k.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Shape(format!("eigendecomposition needs a square matrix, got {:?}", shape)));
    }
    let n = shape[0];
    let src = k.data();
    let norm = frobenius(src);
    let mut asym = 0.0;
    for i in 0..n {
        for j in 0..n {
            asym += (src[i * n + j] - src[j * n + i]).powi(2);
        }
    }
    let asym = asym.sqrt();
    if asym > 1e-12 * norm.max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let mut a: Vec<f64> = (0..n * n).map(|e| 0.5 * (src[e] + src[(e % n) * n + e / n])).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let g = 100.0 * apq.abs();
                let (app, aqq) = (a[p * n + p].abs(), a[q * n + q].abs());
                if (app + g == app && aqq + g == aqq) || norm + g == norm {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (arp, arq) = (a[r * n + p], a[r * n + q]);
                    a[r * n + p] = c * arp - s * arq;
                    a[r * n + q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let (apr, aqr) = (a[p * n + r], a[q * n + r]);
                    a[p * n + r] = c * apr - s * aqr;
                    a[q * n + r] = s * apr + c * aqr;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    let (vrp, vrq) = (v[r * n + p], v[r * n + q]);
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
        if !rotated {
            break;
        }
        sweeps += 1;
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]).then(x.cmp(&y)));
    let values: Vec<f64> = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src_col) in order.iter().enumerate() {
        let mut lead = 0;
        for r in 1..n {
            if v[r * n + src_col].abs() > v[lead * n + src_col].abs() {
                lead = r;
            }
        }
        let sign = if v[lead * n + src_col] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[r * n + dst] = sign * v[r * n + src_col];
        }
    }
    Ok(EigenDecomposition { n, values, vectors, sweeps })
}
