//! Diversity diagnostics for synthetic batches.
//!
//! Distribution-level homogenization is measured by the 1-D Wasserstein
//! distance between each BN channel's activations and the Gaussian described
//! by its running statistics. Sample-level homogenization is measured
//! statistically (variance of per-sample statistics) and spatially (PCA
//! density index, kernel similarity index).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dsg::build_kernel;
use crate::error::{Error, Result};
use crate::net::{channel_layout, Mode, Network};
use crate::stats::sorted;
use crate::tensor::Tensor;

pub const DEFAULT_QUANTILES: usize = 1024;
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.1;

/// Mean absolute gap between empirical and Gaussian quantiles at the
/// probabilities `(k + 1/2) / n_quantiles`. The empirical quantile at `p` is
/// the order statistic `x_(ceil(p n))`.
pub fn wasserstein_1d(samples: &[f64], mu: f64, sigma: f64, n_quantiles: usize) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("Gaussian sigma {sigma} must be positive")));
    }
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("Wasserstein distance needs at least 2 samples".into()));
    }
    if n_quantiles == 0 {
        return Err(Error::InvalidArgument("n_quantiles must be positive".into()));
    }
    let normal = Normal::new(mu, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let s = sorted(samples);
    let n = s.len();
    let mut acc = 0.0;
    for k in 0..n_quantiles {
        let p = (k as f64 + 0.5) / n_quantiles as f64;
        let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
        acc += (s[idx] - normal.inverse_cdf(p)).abs();
    }
    Ok(acc / n_quantiles as f64)
}

/// Per-sample `(mean, std)` of every channel, as a `B x 2C` matrix with the
/// means first. Stds are population stds over spatial positions. A vector
/// sample (`[C]`, one value per channel) is treated as a single channel
/// spanning its `C` values, giving a `B x 2` matrix.
pub fn per_sample_stats(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() < 2 {
        return Err(Error::Shape(format!("per-sample statistics need a batch dimension, got {:?}", x.shape())));
    }
    let b = x.batch();
    let (ch, sp) = match channel_layout(&x.shape()[1..]) {
        (c, 1) => (1, c),
        layout => layout,
    };
    let mut out = vec![0.0; b * 2 * ch];
    for s in 0..b {
        for c in 0..ch {
            let base = (s * ch + c) * sp;
            let v = &x.data()[base..base + sp];
            let m = v.iter().sum::<f64>() / sp as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / sp as f64;
            out[s * 2 * ch + c] = m;
            out[s * 2 * ch + ch + c] = var.sqrt();
        }
    }
    Tensor::new(vec![b, 2 * ch], out)
}

/// Mean over coordinates of the population variance across samples.
pub fn stat_variance(stats: &Tensor) -> Result<f64> {
    let b = stats.batch();
    if stats.shape().len() != 2 || b < 2 {
        return Err(Error::InvalidArgument(format!("statistic variance needs a B x M matrix with B >= 2, got {:?}", stats.shape())));
    }
    let m = stats.row_len();
    let mut total = 0.0;
    for c in 0..m {
        let mean = (0..b).map(|s| stats.data()[s * m + c]).sum::<f64>() / b as f64;
        total += (0..b).map(|s| (stats.data()[s * m + c] - mean).powi(2)).sum::<f64>() / b as f64;
    }
    Ok(total / m as f64)
}

/// Top-2 principal directions and per-sample projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `B x 2` projections of the centered features.
    pub coords: Tensor,
    /// Two unit directions of length `D` (the second is zero for rank-1 data).
    pub components: [Vec<f64>; 2],
    /// Variance captured by each direction.
    pub variances: [f64; 2],
}

const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITERS: usize = 100_000;

/// Covariance PCA by power iteration with deflation from a fixed start vector.
pub fn pca_project(features: &Tensor) -> Result<Pca> {
    let f = features.flatten_batch();
    let (b, d) = (f.batch(), f.row_len());
    if b < 3 || d < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs B >= 3 and D >= 2, got {b}x{d}")));
    }
    let mean: Vec<f64> = (0..d).map(|c| (0..b).map(|s| f.data()[s * d + c]).sum::<f64>() / b as f64).collect();
    let centered: Vec<f64> = (0..b * d).map(|e| f.data()[e] - mean[e % d]).collect();
    let mut cov = vec![0.0; d * d];
    for s in 0..b {
        let row = &centered[s * d..(s + 1) * d];
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += row[i] * row[j];
            }
        }
    }
    for v in &mut cov {
        *v /= b as f64;
    }
    let scale = (0..d).map(|i| cov[i * d + i]).sum::<f64>();
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("PCA of identical samples (rank 0)".into()));
    }
    let mut components = [vec![0.0; d], vec![0.0; d]];
    let mut variances = [0.0; 2];
    for k in 0..2 {
        let (v, lambda) = power_iteration(&cov, d);
        if lambda <= PCA_TOL * scale {
            break;
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        components[k] = v;
        variances[k] = lambda;
    }
    let mut coords = vec![0.0; b * 2];
    for s in 0..b {
        for k in 0..2 {
            coords[s * 2 + k] = (0..d).map(|c| centered[s * d + c] * components[k][c]).sum();
        }
    }
    Ok(Pca { coords: Tensor::new(vec![b, 2], coords)?, components, variances })
}

fn power_iteration(m: &[f64], d: usize) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 / (i + 1) as f64).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..PCA_MAX_ITERS {
        let mut w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum()).collect();
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return (vec![0.0; d], 0.0);
        }
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        v = w;
        lambda = norm;
        if delta < PCA_TOL {
            break;
        }
    }
    let lead = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (v, lambda)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Largest number of points (self included) within `radius_fraction` times
/// the maximum pairwise distance of any single point.
pub fn density_index(coords: &Tensor, radius_fraction: f64) -> Result<usize> {
    if coords.shape().len() != 2 || coords.batch() == 0 {
        return Err(Error::Shape(format!("density index needs a non-empty B x k matrix, got {:?}", coords.shape())));
    }
    if !(radius_fraction > 0.0 && radius_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("radius fraction {radius_fraction} outside (0, 1]")));
    }
    let b = coords.batch();
    let dist = |i: usize, j: usize| coords.row(i).iter().zip(coords.row(j)).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
    let mut spread = 0.0f64;
    for i in 0..b {
        for j in i + 1..b {
            spread = spread.max(dist(i, j));
        }
    }
    let radius = radius_fraction * spread;
    Ok((0..b).map(|i| (0..b).filter(|&j| dist(i, j) <= radius).count()).max().unwrap_or(0))
}

/// Sum of all entries of the normalized similarity kernel.
pub fn similarity_index_s(features: &Tensor) -> Result<f64> {
    Ok(build_kernel(features)?.sum())
}

/// Natural-log entropy with `0 ln 0 = 0`.
pub fn entropy_allocation(p: &[f64]) -> Result<f64> {
    if p.is_empty() || p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("allocation must be non-empty and nonnegative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("allocation sums to {total}, not 1")));
    }
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>())
}

/// Outcome of the exhaustive entropy check over a simplex grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Check {
    pub k: usize,
    pub step: f64,
    pub grid_points: usize,
    pub uniform_entropy: f64,
    pub best_entropy: f64,
    pub argmax: Vec<f64>,
    /// Uniform beats or ties every grid point, and the grid maximizer lies
    /// within one step of uniform in every coordinate.
    pub verified: bool,
}

/// Enumerates every allocation of `K` regions whose masses are multiples of
/// `step` and checks that the uniform allocation maximizes entropy.
pub fn verify_theorem1(k: usize, step: f64) -> Result<Theorem1Check> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2 regions, got {k}")));
    }
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::InvalidArgument(format!("grid step {step} outside (0, 0.5]")));
    }
    let units = (1.0 / step).round() as usize;
    if ((units as f64) * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("grid step {step} does not divide 1")));
    }
    let uniform = vec![1.0 / k as f64; k];
    let uniform_entropy = entropy_allocation(&uniform)?;
    let mut best_entropy = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    let mut grid_points = 0;
    let mut dominated = true;
    let mut parts = vec![0usize; k];
    compositions(units, 0, &mut parts, &mut |parts| {
        let p: Vec<f64> = parts.iter().map(|&u| u as f64 / units as f64).collect();
        let h = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
        grid_points += 1;
        if h > uniform_entropy + 1e-12 {
            dominated = false;
        }
        if h > best_entropy {
            best_entropy = h;
            argmax = p;
        }
    });
    let near = argmax.iter().all(|v| (v - 1.0 / k as f64).abs() <= step + 1e-12);
    Ok(Theorem1Check { k, step, grid_points, uniform_entropy, best_entropy, argmax, verified: dominated && near })
}

fn compositions(remaining: usize, idx: usize, parts: &mut [usize], visit: &mut dyn FnMut(&[usize])) {
    if idx == parts.len() - 1 {
        parts[idx] = remaining;
        visit(parts);
        return;
    }
    for u in 0..=remaining {
        parts[idx] = u;
        compositions(remaining - u, idx + 1, parts, visit);
    }
}

/// Diversity diagnostics for one batch against a network's BN statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Every channel of every BN layer, in network order.
    pub wasserstein_per_channel: Vec<f64>,
    pub wasserstein_mean: f64,
    /// Statistic variance at each BN layer's input.
    pub stat_variance_per_layer: Vec<f64>,
    /// Statistic variance of the samples themselves.
    pub stat_variance: f64,
    pub density_index: usize,
    pub similarity_index_s: f64,
    /// `B x 2` PCA projection of the flattened samples, row-major.
    pub pca_coords: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityOptions {
    pub n_quantiles: usize,
    pub radius_fraction: f64,
}

impl Default for DiversityOptions {
    fn default() -> Self {
        DiversityOptions { n_quantiles: DEFAULT_QUANTILES, radius_fraction: DEFAULT_RADIUS_FRACTION }
    }
}

/// Forwards `batch` through `net` in eval mode and measures every diagnostic.
pub fn diversity_report(net: &Network, batch: &Tensor, opts: DiversityOptions) -> Result<DiversityReport> {
    let fwd = net.forward(batch, Mode::Eval)?.without_cache();
    let mut wasserstein_per_channel = Vec::new();
    let mut stat_variance_per_layer = Vec::with_capacity(net.n_bn());
    for (i, &pos) in net.bn_indices().iter().enumerate() {
        let x = &fwd.inputs[pos];
        let (ch, sp) = channel_layout(&x.shape()[1..]);
        let bn = net.bn(i);
        let sigma = bn.running_std();
        for c in 0..ch {
            let vals: Vec<f64> = (0..x.batch()).flat_map(|s| x.data()[(s * ch + c) * sp..(s * ch + c + 1) * sp].to_vec()).collect();
            wasserstein_per_channel.push(wasserstein_1d(&vals, bn.running_mean.data()[c], sigma[c], opts.n_quantiles)?);
        }
        stat_variance_per_layer.push(stat_variance(&per_sample_stats(x)?)?);
    }
    let wasserstein_mean = mean_or_zero(&wasserstein_per_channel);
    let stat_variance = stat_variance(&per_sample_stats(batch)?)?;
    let pca = pca_project(batch)?;
    let pca_coords = (0..batch.batch()).map(|s| [pca.coords.data()[2 * s], pca.coords.data()[2 * s + 1]]).collect();
    Ok(DiversityReport {
        wasserstein_per_channel,
        wasserstein_mean,
        stat_variance_per_layer,
        stat_variance,
        density_index: density_index(&pca.coords, opts.radius_fraction)?,
        similarity_index_s: similarity_index_s(batch)?,
        pca_coords,
    })
}

fn mean_or_zero(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
