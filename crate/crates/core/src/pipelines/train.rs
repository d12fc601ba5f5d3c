use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::net::optim::{Hyper, Optimizer};
use crate::net::{accuracy, cross_entropy, Mode, Network};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the newest batch in the BN running-statistics update.
    pub bn_momentum: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 50, batch_size: 32, lr: 0.05, momentum: 0.9, weight_decay: 1e-4, bn_momentum: 0.1, hidden: vec![32, 32] }
    }
}

impl TrainOptions {
    pub fn hyper(&self) -> Hyper {
        Hyper { lr: self.lr, weight_decay: self.weight_decay, kind: crate::net::optim::OptimizerKind::Sgd { momentum: self.momentum } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// The toy classifier: dense+BN+ReLU blocks and a dense head.
pub fn toy_network(input: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Network> {
    Network::mlp(input, hidden, classes, &mut stream(seed, Stream::Init, 0))
}

pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    let fwd = net.forward(&data.x, Mode::Eval)?.without_cache();
    Ok(accuracy(fwd.logits(), &data.y))
}

/// Mini-batch SGD on cross-entropy. Every training forward runs in train mode
/// and folds its batch statistics into the BN running statistics.
pub fn train_fp(mut net: Network, train: &Dataset, test: &Dataset, opts: &TrainOptions, seed: u64) -> Result<(Network, TrainReport)> {
    if opts.batch_size < 2 {
        return Err(Error::Config(format!("training batch size {} < 2", opts.batch_size)));
    }
    if !(opts.bn_momentum > 0.0 && opts.bn_momentum <= 1.0) {
        return Err(Error::Config(format!("bn_momentum {} outside (0, 1]", opts.bn_momentum)));
    }
    let mut optim = Optimizer::new(opts.hyper());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_loss = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut stream(seed, Stream::Data, 1000 + epoch as u32));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(opts.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = train.subset(chunk);
            let fwd = net.forward_collect(&x, opts.bn_momentum)?;
            let (loss, g) = cross_entropy(fwd.logits(), &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let grads = net.backward(&fwd, &g, &[])?;
            let gl: Vec<_> = grads.flat().into_iter().cloned().collect();
            let refs: Vec<_> = gl.iter().collect();
            optim.step(&mut net.params_mut(), &refs)?;
            total += loss;
            batches += 1;
        }
        epoch_loss.push(total / batches.max(1) as f64);
    }
    let report = TrainReport { epoch_loss, train_accuracy: evaluate(&net, train)?, test_accuracy: evaluate(&net, test)? };
    Ok((net, report))
}
