//! SGD (with momentum and L2 weight decay) and Adam.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub kind: OptimizerKind,
}

impl Hyper {
    pub fn adam(lr: f64) -> Self {
        Hyper { lr, weight_decay: 0.0, kind: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 } }
    }

    /// SGD with momentum 0.9 and weight decay 1e-4.
    pub fn sgd(lr: f64) -> Self {
        Hyper { lr, weight_decay: 1e-4, kind: OptimizerKind::Sgd { momentum: 0.9 } }
    }
}

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    hyper: Hyper,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(hyper: Hyper) -> Self {
        Optimizer { hyper, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} params vs {} grads", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape())));
            }
            g.check_finite(&format!("gradient {i}"))?;
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self.first.len() != params.len() || self.first.iter().zip(params.iter()).any(|(s, p)| s.len() != p.len()) {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let Hyper { lr, weight_decay, kind } = self.hyper;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i] + weight_decay * pd[i];
                match kind {
                    OptimizerKind::Sgd { momentum } => {
                        m[i] = momentum * m[i] + gi;
                        pd[i] -= lr * m[i];
                    }
                    OptimizerKind::Adam { beta1, beta2, eps } => {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / (1.0 - beta1.powi(self.step as i32));
                        let vh = v[i] / (1.0 - beta2.powi(self.step as i32));
                        pd[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor {
        Tensor::from_vec(vec![v])
    }

    #[test]
    fn zero_lr_leaves_params() {
        for h in [Hyper::adam(0.0), Hyper::sgd(0.0)] {
            let mut p = one(1.5);
            let g = one(3.0);
            let mut opt = Optimizer::new(h);
            for _ in 0..3 {
                opt.step(&mut [&mut p], &[&g]).unwrap();
            }
            assert_eq!(p.data()[0], 1.5);
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = one(2.0);
        let mut opt = Optimizer::new(Hyper { lr: 0.1, weight_decay: 0.0, kind: OptimizerKind::Sgd { momentum: 0.0 } });
        opt.step(&mut [&mut p], &[&one(0.5)]).unwrap();
        assert!((p.data()[0] - (2.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_hand_trace() {
        // m = 0.1 g, v = 0.001 g^2; bias-corrected mh = g, vh = g^2,
        // so the update is lr * g / (|g| + eps).
        let g = 0.3;
        let mut p = one(1.0);
        let mut opt = Optimizer::new(Hyper::adam(0.01));
        opt.step(&mut [&mut p], &[&one(g)]).unwrap();
        let expect = 1.0 - 0.01 * g / (g + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-15);
        assert!(((1.0 - p.data()[0]) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_finite_grads_and_mismatch() {
        let mut p = one(1.0);
        let mut opt = Optimizer::new(Hyper::adam(0.1));
        let bad = Tensor::raw(vec![1], vec![f64::NAN]);
        assert!(opt.step(&mut [&mut p], &[&bad]).is_err());
        assert!(opt.step(&mut [&mut p], &[&Tensor::zeros(&[2])]).is_err());
    }
}
