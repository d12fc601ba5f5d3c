use dsgq::dsg::bn_stats_loss;
use dsgq::io::{blobs, BlobSpec, DataSplit};
use dsgq::pipelines::{
    ablation_run, calibrate_quantized, dsg_ptq_generate, dsg_qat_train, evaluate, generate_batch, generate_calibration_set, run_relaxation, toy_network,
    train_fp, AblationOptions, QatOptions, RunConfig, SeedCase, Variant,
};
use dsgq::rng::{gaussian_vec, stream, Stream};
use dsgq::{Mode, Network};

fn data(classes: usize, spread: f64, seed: u64) -> DataSplit {
    blobs(&BlobSpec { classes, per_class: 128, test_per_class: 128, spread, seed, ..BlobSpec::default() }).unwrap()
}

fn trained(classes: usize, seed: u64) -> (Network, DataSplit) {
    let split = data(classes, 0.25, seed);
    let opts = dsgq::pipelines::TrainOptions { hidden: vec![16, 16], ..Default::default() };
    let net = toy_network(16, &opts.hidden, classes, seed).unwrap();
    let (net, _) = train_fp(net, &split.train, &split.test, &opts, seed).unwrap();
    (net, split)
}

fn small(seed: u64) -> RunConfig {
    RunConfig { seed, iterations: 60, batch_size: 16, n_calibration: 32, n_probe: 256, ..RunConfig::default() }
}

#[test]
fn training_separates_blobs() {
    for classes in [2, 4] {
        let (net, split) = trained(classes, 1);
        let acc = evaluate(&net, &split.test).unwrap();
        assert!(acc >= 0.95, "{classes} classes: {acc}");
        for i in 0..net.n_bn() {
            let bn = net.bn(i);
            assert!(bn.running_mean.data().iter().all(|v| v.is_finite()));
            assert!(bn.running_var.data().iter().all(|v| v.is_finite() && *v > 0.0));
        }
    }
}

#[test]
fn untrained_network_is_near_chance() {
    let split = data(4, 0.25, 2);
    let opts = dsgq::pipelines::TrainOptions { epochs: 0, hidden: vec![16, 16], ..Default::default() };
    let net = toy_network(16, &opts.hidden, 4, 2).unwrap();
    let (after, report) = train_fp(net.clone(), &split.train, &split.test, &opts, 2).unwrap();
    assert_eq!(after, net);
    assert!(report.epoch_loss.is_empty());
    assert!(report.test_accuracy < 0.8, "{}", report.test_accuracy);
}

#[test]
fn zero_iterations_return_the_initial_gaussian() {
    let (net, _) = trained(2, 3);
    let cfg = RunConfig { iterations: 0, ..small(3) };
    let batch = dsg_ptq_generate(&net, &cfg).unwrap();
    let want = gaussian_vec(&mut stream(3, Stream::Synth, 0), 16 * 16);
    assert_eq!(batch.samples.data(), &want[..]);
    assert_eq!(batch.trajectory.len(), 1);
}

#[test]
fn generation_lowers_the_statistics_loss_and_keeps_the_teacher() {
    let (net, _) = trained(4, 4);
    let before = net.checksum();
    let cfg = small(4).with_variant(Variant::Vanilla);
    let batch = dsg_ptq_generate(&net, &cfg).unwrap();
    let first = batch.trajectory.first().unwrap().stat;
    let last = batch.trajectory.last().unwrap().stat;
    assert!(last < first, "{first} -> {last}");
    let trace = net.forward(&batch.samples, Mode::Eval).unwrap().trace;
    assert!((bn_stats_loss(&trace, &net).unwrap().total - last).abs() < 1e-9 * last.max(1.0));
    assert_eq!(net.checksum(), before);
}

#[test]
fn full_objective_halves_within_default_budget() {
    let (net, _) = trained(4, 5);
    let cfg = RunConfig { seed: 5, ..RunConfig::default() };
    let rc = run_relaxation(&net, &cfg).unwrap();
    let batch = generate_batch(&net, &cfg, &rc, 0).unwrap();
    let first = batch.trajectory.first().unwrap().total;
    let last = batch.trajectory.last().unwrap().total;
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

#[test]
fn noise_is_frozen_during_generation() {
    let (net, _) = trained(2, 6);
    let cfg = small(6);
    let batch = dsg_ptq_generate(&net, &cfg).unwrap();
    let fresh = dsgq::dsg::NoiseSet::sample(16, 16, &mut stream(6, Stream::Noise, 0)).unwrap();
    assert_eq!(batch.noise.checksum(), fresh.checksum());
}

#[test]
fn real_and_synthetic_calibration_both_give_valid_quantizers() {
    let (net, split) = trained(4, 7);
    let cfg = small(7);
    let synth = generate_calibration_set(&net, &cfg).unwrap();
    assert_eq!(synth.batches.len(), 2);
    let (real_x, _) = split.train.subset(&(0..32).collect::<Vec<_>>());
    for batches in [synth.tensors(), vec![real_x]] {
        let q = calibrate_quantized(&net, &batches, &cfg).unwrap();
        assert_eq!(q.base, net);
        for qp in q.weight_qparams.iter().chain(&q.act_qparams) {
            qp.validate().unwrap();
        }
        let acc = q.accuracy(&split.test.x, &split.test.y).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn qat_without_epochs_keeps_the_initial_student() {
    let (net, _) = trained(2, 8);
    let cfg = RunConfig { qat: QatOptions { epochs: 0, ..QatOptions::default() }, ..small(8) };
    let out = dsg_qat_train(&net, &cfg).unwrap();
    assert_eq!(out.student, out.initial_student);
    assert!(out.trajectory.is_empty());
}

#[test]
fn qat_updates_the_student_and_leaves_the_teacher() {
    let (net, _) = trained(2, 9);
    let before = net.checksum();
    let cfg = RunConfig { qat: QatOptions { epochs: 1, steps_per_epoch: 5, ..QatOptions::default() }, ..small(9) };
    let out = dsg_qat_train(&net, &cfg).unwrap();
    assert_ne!(out.student.base.checksum(), out.initial_student.base.checksum());
    assert_eq!(out.trajectory.len(), 5);
    assert!(out.trajectory.iter().all(|r| r.student_total.is_finite() && r.generator_total.is_finite()));
    assert_eq!(net.checksum(), before);
}

#[test]
fn pipelines_are_deterministic() {
    let (net, split) = trained(4, 10);
    let cfg = RunConfig { qat: QatOptions { epochs: 1, steps_per_epoch: 3, ..QatOptions::default() }, ..small(10) };
    let a = generate_calibration_set(&net, &cfg).unwrap();
    let b = generate_calibration_set(&net, &cfg).unwrap();
    assert_eq!(a.tensors(), b.tensors());
    let qa = dsg_qat_train(&net, &cfg).unwrap();
    let qb = dsg_qat_train(&net, &cfg).unwrap();
    assert_eq!(qa.student, qb.student);

    let case = SeedCase { seed: 10, teacher: net, test: split.test };
    let opts = AblationOptions { variants: vec![Variant::Vanilla, Variant::Dsg], ..AblationOptions::default() };
    let ta = ablation_run(std::slice::from_ref(&case), &cfg, &opts).unwrap();
    let tb = ablation_run(std::slice::from_ref(&case), &cfg, &opts).unwrap();
    assert_eq!(serde_json::to_string(&ta).unwrap(), serde_json::to_string(&tb).unwrap());
    assert_eq!(ta.rows.len(), 2);
    assert!(ta.rows.iter().all(|r| r.ptq_accuracy.is_some() && r.qat_accuracy.is_some()));
}

#[test]
fn generation_needs_batch_norm() {
    let net = Network::new(vec![4], vec![dsgq::net::Layer::Dense(dsgq::net::Dense::init(4, 2, &mut stream(0, Stream::Init, 0)))]).unwrap();
    assert!(dsg_ptq_generate(&net, &small(0)).is_err());
}
