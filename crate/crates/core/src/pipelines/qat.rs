use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::GeneratorNet;
use super::objective::StatObjective;
use super::ptq::run_relaxation;
use super::RunConfig;
use crate::dsg::{lse_assign, sci_loss_with, NoiseSet, RelaxationConstants};
use crate::error::{Error, Result};
use crate::net::optim::{Hyper, Optimizer};
use crate::net::{cross_entropy, kl_distill, Injection, Mode, Network};
use crate::quant::QuantizedNetwork;
use crate::rng::{gaussian_vec, stream, Stream};
use crate::tensor::Tensor;

/// Loss terms of one alternating QAT step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QatRow {
    pub epoch: usize,
    pub step: usize,
    pub generator_total: f64,
    pub stat: f64,
    /// Mean over generator blocks.
    pub sci: f64,
    pub teacher_ce: f64,
    pub student_total: f64,
    pub student_ce: f64,
    pub student_kl: f64,
}

#[derive(Debug, Clone)]
pub struct QatOutcome {
    pub generator: GeneratorNet,
    pub student: QuantizedNetwork,
    /// Student right after initialization and activation calibration.
    pub initial_student: QuantizedNetwork,
    pub relaxation: RelaxationConstants,
    pub trajectory: Vec<QatRow>,
}

/// Draws a labeled generator batch for global step `index`.
fn draw(cfg: &RunConfig, classes: usize, index: u32) -> Result<(Tensor, Vec<usize>)> {
    let b = cfg.batch_size;
    let z = Tensor::new(vec![b, cfg.qat.latent_dim], gaussian_vec(&mut stream(cfg.seed, Stream::Latent, index), b * cfg.qat.latent_dim))?;
    let mut rng = stream(cfg.seed, Stream::Labels, index);
    let y = (0..b).map(|_| rng.random_range(0..classes)).collect();
    Ok((z, y))
}

/// Alternating generator / quantized-student training against a frozen
/// teacher. The student starts from the teacher's weights; its BN layers keep
/// the teacher's running statistics and only their affine parameters train.
pub fn dsg_qat_train(teacher: &Network, cfg: &RunConfig) -> Result<QatOutcome> {
    cfg.validate()?;
    if teacher.n_bn() == 0 {
        return Err(Error::NoBatchNorm);
    }
    let out = teacher.output_shape();
    if out.len() != 1 {
        return Err(Error::Shape(format!("teacher output {out:?} is not a class vector")));
    }
    let classes = out[0];
    let b = cfg.batch_size;
    let relaxation = run_relaxation(teacher, cfg)?;
    let assign = lse_assign(b, teacher.n_bn())?;
    let objective = StatObjective::new(teacher, &relaxation, cfg.use_sda, cfg.use_lse.then(|| (assign.clone(), cfg.lse_focus, cfg.lse_reduction)));

    let mut generator =
        GeneratorNet::new(cfg.qat.latent_dim, &cfg.qat.generator_hidden, classes, teacher.input_shape(), &mut stream(cfg.seed, Stream::Init, 1))?;
    let noise = cfg
        .qat
        .generator_hidden
        .iter()
        .enumerate()
        .map(|(i, &w)| NoiseSet::sample(b, w, &mut stream(cfg.seed, Stream::Noise, i as u32)))
        .collect::<Result<Vec<_>>>()?;

    let (z0, y0) = draw(cfg, classes, 0)?;
    let x0 = generator.forward(&z0, &y0)?.samples;
    let mut student = QuantizedNetwork::calibrate(teacher.clone(), &[x0], cfg.w_bits, cfg.a_bits, cfg.calibration)?;
    let initial_student = student.clone();

    let mut g_opt = Optimizer::new(Hyper::adam(cfg.generator_lr));
    let mut s_opt = Optimizer::new(Hyper::adam(cfg.student_lr));
    let mut trajectory = Vec::with_capacity(cfg.qat.epochs * cfg.qat.steps_per_epoch);
    let n_blocks = generator.n_blocks() as f64;
    for epoch in 0..cfg.qat.epochs {
        for step in 0..cfg.qat.steps_per_epoch {
            let global = (epoch * cfg.qat.steps_per_epoch + step + 1) as u32;
            let (z, y) = draw(cfg, classes, global)?;

            let gf = generator.forward(&z, &y)?;
            let tf = teacher.forward(&gf.samples, Mode::Eval)?;
            let (stat, inject) = objective.evaluate(&tf)?;
            let (teacher_ce, g_ce) = cross_entropy(tf.logits(), &y)?;
            let grad_x = teacher.backward(&tf, &g_ce, &inject)?.input;
            let mut sci = 0.0;
            let mut sci_inject = Vec::new();
            if cfg.use_sci {
                for (i, ns) in noise.iter().enumerate() {
                    let l = sci_loss_with(generator.feature(&gf, i), ns, cfg.sci_normalization)?;
                    sci += l.value / n_blocks;
                    let mut g = l.grad;
                    g.scale(1.0 / n_blocks);
                    sci_inject.push(Injection { position: generator.feature_positions()[i], grad: g });
                }
            }
            let generator_total = stat + sci + teacher_ce;
            if !generator_total.is_finite() {
                return Err(Error::NonFinite(format!("generator loss at epoch {epoch} step {step}")));
            }
            let g_grads = generator.backward(&gf, &grad_x, &sci_inject)?;
            let refs: Vec<&Tensor> = g_grads.iter().collect();
            g_opt.step(&mut generator.params_mut(), &refs)?;

            let x = gf.samples;
            let sf = student.forward(&x, Mode::Eval)?;
            let (student_ce, mut g_s) = cross_entropy(sf.logits(), &y)?;
            let (student_kl, mut g_kl) = kl_distill(tf.logits(), sf.logits(), cfg.tau)?;
            g_kl.scale(cfg.beta);
            g_s.add_assign(&g_kl)?;
            let student_total = student_ce + cfg.beta * student_kl;
            if !student_total.is_finite() {
                return Err(Error::NonFinite(format!("student loss at epoch {epoch} step {step}")));
            }
            let s_grads = student.base.backward(&sf, &g_s, &[])?;
            let grads: Vec<Tensor> = s_grads.flat().into_iter().cloned().collect();
            let refs: Vec<&Tensor> = grads.iter().collect();
            s_opt.step(&mut student.base.params_mut(), &refs)?;
            student.refresh_weight_qparams()?;
            student.update_activation_ema(&sf, cfg.qat.act_ema_momentum)?;

            trajectory.push(QatRow { epoch, step, generator_total, stat, sci, teacher_ce, student_total, student_ce, student_kl });
        }
    }
    Ok(QatOutcome { generator, student, initial_student, relaxation, trajectory })
}

/// A labeled batch from a trained generator (stream index past training).
pub fn generator_batch(generator: &GeneratorNet, cfg: &RunConfig, index: u32) -> Result<(Tensor, Vec<usize>)> {
    let (z, y) = draw(cfg, generator.classes(), u32::MAX - index)?;
    Ok((generator.forward(&z, &y)?.samples, y))
}
