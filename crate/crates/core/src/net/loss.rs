//! Classification losses over logits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn softmax_rows(logits: &Tensor, temperature: f64) -> Vec<f64> {
    let (b, c) = (logits.batch(), logits.row_len());
    let mut out = vec![0.0; b * c];
    for s in 0..b {
        let row = logits.row(s);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..c {
            let e = ((row[k] - m) / temperature).exp();
            out[s * c + k] = e;
            z += e;
        }
        for k in 0..c {
            out[s * c + k] /= z;
        }
    }
    out
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.batch())
        .map(|s| {
            let row = logits.row(s);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let pred = argmax_rows(logits);
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = (logits.batch(), logits.row_len());
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for batch {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} >= {c} classes")));
    }
    let p = softmax_rows(logits, 1.0);
    let mut loss = 0.0;
    let mut g = p.clone();
    for (s, &l) in labels.iter().enumerate() {
        loss -= p[s * c + l].max(1e-300).ln();
        g[s * c + l] -= 1.0;
    }
    for v in &mut g {
        *v /= b as f64;
    }
    Ok((loss / b as f64, Tensor::raw(logits.shape().to_vec(), g)))
}

/// Mean `KL(softmax(teacher/tau) || softmax(student/tau))` and its gradient
/// w.r.t. the student logits.
pub fn kl_distill(teacher: &Tensor, student: &Tensor, tau: f64) -> Result<(f64, Tensor)> {
    if teacher.shape() != student.shape() {
        return Err(Error::Shape(format!("teacher {:?} vs student {:?}", teacher.shape(), student.shape())));
    }
    let b = teacher.batch();
    let p = softmax_rows(teacher, tau);
    let q = softmax_rows(student, tau);
    let mut loss = 0.0;
    for (pi, qi) in p.iter().zip(&q) {
        if *pi > 0.0 {
            loss += pi * (pi.ln() - qi.max(1e-300).ln());
        }
    }
    let g = q.iter().zip(&p).map(|(qi, pi)| (qi - pi) / (tau * b as f64)).collect();
    Ok((loss / b as f64, Tensor::raw(student.shape().to_vec(), g)))
}
