//! Central finite-difference checks of analytic gradients.

use super::{Gradients, Network};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// max |analytic - numeric| / max(|analytic|, |numeric|, 1e-12) over
    /// every checked entry whose absolute disagreement exceeds `abs_tol`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Absolute disagreement below which an entry counts as exact (covers
    /// gradients that are analytically zero, e.g. a bias feeding batch-stat BN).
    pub abs_tol: f64,
    pub check_params: bool,
    pub check_input: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, abs_tol: 1e-10, check_params: true, check_input: true }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares the analytic gradients returned by `loss_fn` with central
/// differences of its value, over every parameter entry and/or input entry.
pub fn grad_check<F>(net: &Network, batch: &Tensor, opts: GradCheckOptions, loss_fn: F) -> Result<GradCheck>
where
    F: Fn(&Network, &Tensor) -> Result<(f64, Gradients)>,
{
    let (_, grads) = loss_fn(net, batch)?;
    let mut report = GradCheck { max_rel_err: 0.0, max_abs_err: 0.0, entries: 0 };
    let mut record = |a: f64, n: f64| {
        let abs = (a - n).abs();
        report.max_abs_err = report.max_abs_err.max(abs);
        if abs > opts.abs_tol {
            report.max_rel_err = report.max_rel_err.max(relative_error(a, n));
        }
        report.entries += 1;
    };
    let h = opts.step;
    if opts.check_params {
        let flat: Vec<Tensor> = grads.flat().into_iter().cloned().collect();
        let n_params = net.params().len();
        for pi in 0..n_params {
            for e in 0..flat[pi].len() {
                let eval = |delta: f64| -> Result<f64> {
                    let mut probe = net.clone();
                    probe.params_mut()[pi].data_mut()[e] += delta;
                    Ok(loss_fn(&probe, batch)?.0)
                };
                let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
                record(flat[pi].data()[e], numeric);
            }
        }
    }
    if opts.check_input {
        for e in 0..batch.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut probe = batch.clone();
                probe.data_mut()[e] += delta;
                Ok(loss_fn(net, &probe)?.0)
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            record(grads.input.data()[e], numeric);
        }
    }
    Ok(report)
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn numeric_gradient<F>(x: &[f64], step: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe)?;
        probe[i] = orig - step;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}
