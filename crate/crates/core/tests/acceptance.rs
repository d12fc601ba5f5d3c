//! Acceptance criteria. Each criterion prints one `PASS`/`FAIL` line; the
//! process exits non-zero when any criterion fails.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use dsgq::dsg::{bn_stats_loss, eig_sym, lse_assign, sci_loss, sci_loss_with, sda_loss, NoiseSet, RelaxationConstants, SciNormalization};
use dsgq::io::{blobs, BlobSpec};
use dsgq::metrics::verify_theorem1;
use dsgq::net::gradcheck::{grad_check, numeric_gradient, GradCheckOptions};
use dsgq::net::{ActivationTrace, BnBatchStats};
use dsgq::pipelines::{ablation_run, toy_network, train_fp, AblationOptions, AblationTable, RunConfig, SeedCase, TrainOptions, Variant};
use dsgq::quant::{calibrate_minmax, calibrate_mse, calibrate_percentile, quant_mse, QuantParams};
use dsgq::rng::{stream, uniform_vec, Stream};
use dsgq::{Mode, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("runtime {:.1}s exceeds {:.0}s", t.as_secs_f64(), limit.as_secs_f64()))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
        Err(format!("panic: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
        Err(detail) => println!("FAIL criterion {n} ({name}): {detail} [{secs:.1}s]"),
    }
    result.is_ok()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = BTreeMap::new();
    let opts = GradCheckOptions::default();
    let mut record = |name: &str, err: f64| {
        let w = worst.entry(name.to_string()).or_insert((0usize, 0.0f64));
        w.0 += 1;
        w.1 = w.1.max(err);
    };
    for seed in 0..20u64 {
        let b = 4 + seed as usize % 5;
        let (net, x) = if seed % 4 == 3 {
            (conv_net(seed, 2, 4), randn(seed, 0, &[b, 2, 4, 4]))
        } else {
            (two_bn_mlp(seed, 5 + seed as usize % 3, [4 + seed as usize % 4, 3 + seed as usize % 3], 3), randn(seed, 0, &[b, 5 + seed as usize % 3]))
        };
        let mode = if seed % 2 == 0 { Mode::Eval } else { Mode::Train };
        record("L_BN", grad_check(&net, &x, opts, bn_objective(mode)).map_err(|e| e.to_string())?.max_rel_err);
        let rc = random_margins(2, seed, 0.1);
        let input_only = GradCheckOptions { check_params: false, ..opts };
        record("SDA", grad_check(&net, &x, input_only, sda_objective(rc.clone())).map_err(|e| e.to_string())?.max_rel_err);
        let rho = [0.5, 0.75, 1.0 / b as f64][seed as usize % 3];
        let a = lse_assign(b, 2).map_err(|e| e.to_string())?;
        record("LSE", grad_check(&net, &x, input_only, lse_objective(rc, a, rho)).map_err(|e| e.to_string())?.max_rel_err);
    }
    // Correlation loss: configurations where the hinge is active.
    let mut sci_configs = 0;
    let mut seed = 0u64;
    while sci_configs < 20 {
        let (b, d) = (2 + seed as usize % 7, 3 + seed as usize % 11);
        let x = randn(seed, 7, &[b, d]);
        let noise = NoiseSet::sample(b, d, &mut stream(seed, Stream::Noise, 0)).map_err(|e| e.to_string())?;
        let norm = if seed.is_multiple_of(2) { SciNormalization::Noise } else { SciNormalization::Features };
        seed += 1;
        let loss = sci_loss_with(&x, &noise, norm).map_err(|e| e.to_string())?;
        if loss.inner <= 1e-6 {
            continue;
        }
        let num =
            numeric_gradient(x.data(), 1e-6, |v| Ok(sci_loss_with(&Tensor::new(vec![b, d], v.to_vec())?, &noise, norm)?.value)).map_err(|e| e.to_string())?;
        let scale = num.iter().chain(loss.grad.data()).fold(0.0f64, |m, v| m.max(v.abs()));
        let err = num.iter().zip(loss.grad.data()).fold(0.0f64, |m, (n, a)| m.max((n - a).abs()));
        record("SCI", err / scale);
        sci_configs += 1;
    }
    within(Duration::from_secs(60), start)?;
    let mut parts = Vec::new();
    for (name, (count, err)) in &worst {
        ensure(*count >= 20, || format!("{name}: only {count} configurations"))?;
        ensure(*err < 1e-4, || format!("{name}: max relative error {err:.3e}"))?;
        parts.push(format!("{name} {count} configs max rel {err:.1e}"));
    }
    Ok(parts.join(", "))
}

fn random_trace(seed: u64, net: &dsgq::Network) -> ActivationTrace {
    let mut rng = stream(seed, Stream::Data, 50);
    let layers = (0..net.n_bn())
        .map(|i| {
            let c = net.bn(i).channels();
            let u = uniform_vec(&mut rng, 2 * c);
            BnBatchStats { mean: u[..c].iter().map(|v| 4.0 * v - 2.0).collect(), std: u[c..].iter().map(|v| 0.05 + 3.0 * v).collect() }
        })
        .collect();
    ActivationTrace { layers, logits: Tensor::zeros(&[1, 3]) }
}

fn slack_reduction() -> Outcome {
    let mut worst = 0.0f64;
    let mut covered_max = 0.0f64;
    for seed in 0..100 {
        let net = two_bn_mlp(seed, 4, [3 + seed as usize % 5, 2 + seed as usize % 4], 3);
        let trace = random_trace(seed, &net);
        let mut oracle = 0.0;
        let mut delta = Vec::new();
        let mut gamma = Vec::new();
        for (i, l) in trace.layers.iter().enumerate() {
            let bn = net.bn(i);
            let mut dm = 0.0f64;
            let mut ds = 0.0f64;
            for c in 0..bn.channels() {
                let em = l.mean[c] - bn.running_mean.data()[c];
                let es = l.std[c] - bn.running_var.data()[c].sqrt();
                oracle += em * em + es * es;
                dm = dm.max(em.abs());
                ds = ds.max(es.abs());
            }
            delta.push(dm);
            gamma.push(ds);
        }
        let sda = sda_loss(&trace, &net, &RelaxationConstants::zero(net.n_bn())).map_err(|e| e.to_string())?;
        let sum: f64 = sda.per_layer.iter().sum();
        worst = worst.max((sum - oracle).abs());
        let bn = bn_stats_loss(&trace, &net).map_err(|e| e.to_string())?.total;
        worst = worst.max((sum - bn).abs());
        let covered = sda_loss(&trace, &net, &RelaxationConstants { delta, gamma, epsilon: 1.0 }).map_err(|e| e.to_string())?;
        covered_max = covered_max.max(covered.total);
    }
    ensure(worst <= 1e-12, || format!("zero-margin mismatch {worst:.3e}"))?;
    ensure(covered_max == 0.0, || format!("covering margins leave loss {covered_max:.3e}"))?;
    Ok(format!("100 traces, max |sum l_SDA - L_BN| {worst:.1e}, covered loss 0"))
}

fn enhancement_structure() -> Outcome {
    let mut checked = 0;
    for n in 1..=8usize {
        for batch in 1..=4 * n {
            let a = lse_assign(batch, n).map_err(|e| e.to_string())?;
            let nf = n as f64;
            for j in 0..batch {
                let row = a.row(j);
                let sum: f64 = row.iter().sum();
                ensure((sum - (nf + 1.0) / nf).abs() < 1e-12, || format!("N={n} B={batch} row {j}: sum {sum}"))?;
                let doubled = row.iter().filter(|&&w| w == 2.0 / nf).count();
                let plain = row.iter().filter(|&&w| w == 1.0 / nf).count();
                ensure(doubled == 1 && plain == n - 1, || format!("N={n} B={batch} row {j}: {row:?}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} rows over N = 1..8"))
}

fn eigensolver() -> Outcome {
    let start = Instant::now();
    let mut recon = 0.0f64;
    let mut ortho = 0.0f64;
    for m in 0..1000u64 {
        let n = 1 + (m as usize % 16);
        let g = randn(m, 900, &[n, n]);
        let a: Vec<f64> = (0..n * n).map(|k| 0.5 * (g.data()[k] + g.data()[(k % n) * n + k / n])).collect();
        let e = eig_sym(&Tensor::new(vec![n, n], a.clone()).unwrap()).map_err(|e| e.to_string())?;
        let fro = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let v = |r: usize, c: usize| e.vectors[r * n + c];
        let mut r2 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let rec: f64 = (0..n).map(|k| v(i, k) * e.values[k] * v(j, k)).sum();
                r2 += (rec - a[i * n + j]).powi(2);
                let dot: f64 = (0..n).map(|k| v(k, i) * v(k, j)).sum();
                ortho = ortho.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        recon = recon.max(r2.sqrt() / fro);
    }
    let mut cubic = 0.0f64;
    for m in 0..1000u64 {
        let g = randn(m, 901, &[3, 3]);
        let a: Vec<f64> = (0..9).map(|k| 0.5 * (g.data()[k] + g.data()[(k % 3) * 3 + k / 3])).collect();
        let e = eig_sym(&Tensor::new(vec![3, 3], a.clone()).unwrap()).map_err(|e| e.to_string())?;
        let want = cubic_eigenvalues(&a);
        for k in 0..3 {
            cubic = cubic.max((e.values[k] - want[k]).abs());
        }
    }
    within(Duration::from_secs(60), start)?;
    ensure(recon < 1e-8, || format!("reconstruction {recon:.3e} relative"))?;
    ensure(ortho < 1e-10, || format!("orthonormality {ortho:.3e}"))?;
    ensure(cubic < 1e-9, || format!("cubic oracle {cubic:.3e}"))?;
    Ok(format!("1000 matrices: reconstruction {recon:.1e}, orthonormality {ortho:.1e}; 3x3 cubic {cubic:.1e}"))
}

/// Closed-form eigenvalues of a symmetric 3x3 matrix, descending.
fn cubic_eigenvalues(a: &[f64]) -> [f64; 3] {
    let p1 = a[1] * a[1] + a[2] * a[2] + a[5] * a[5];
    let q = (a[0] + a[4] + a[8]) / 3.0;
    let p2 = (a[0] - q).powi(2) + (a[4] - q).powi(2) + (a[8] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return [q; 3];
    }
    let b: Vec<f64> = (0..9).map(|k| (a[k] - if k % 4 == 0 { q } else { 0.0 }) / p).collect();
    let det = b[0] * (b[4] * b[8] - b[5] * b[7]) - b[1] * (b[3] * b[8] - b[5] * b[6]) + b[2] * (b[3] * b[7] - b[4] * b[6]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [e1, 3.0 * q - e1 - e3, e3]
}

fn correlation_sanity() -> Outcome {
    const D: usize = 16;
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for b in [2usize, 4, 8] {
        let noise = NoiseSet::sample(b, D, &mut stream(0, Stream::Noise, 0)).map_err(|e| e.to_string())?;
        let self_loss = sci_loss(noise.vectors(), &noise).map_err(|e| e.to_string())?.value;
        ensure(self_loss.abs() < 1e-12, || format!("B={b}: sci_loss(noise, noise) = {self_loss:.3e}"))?;
        let first = noise.vectors().row(0).to_vec();
        let collapsed = Tensor::new(vec![b, D], (0..b).flat_map(|_| first.clone()).collect()).unwrap();
        let mut eye = vec![0.0; b * D];
        for i in 0..b {
            eye[i * D + i] = 1.0;
        }
        let orthogonal = Tensor::new(vec![b, D], eye).unwrap();
        let lc = sci_loss(&collapsed, &noise).map_err(|e| e.to_string())?.value;
        let lo = sci_loss(&orthogonal, &noise).map_err(|e| e.to_string())?.value;
        parts.push(format!("B={b} collapsed {lc:.3} vs orthogonal {lo:.3}"));
        if !(lc > lo) {
            failures.push(b);
        }
    }
    let detail = format!("sci_loss(noise) = 0; {}", parts.join(", "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; collapsed not above orthogonal for B in {failures:?}"))
    }
}

fn quantizer() -> Outcome {
    let mut ranges = 0;
    for bits in [2u32, 4, 8] {
        for r in 0..20u64 {
            let u = uniform_vec(&mut stream(r, Stream::Data, 60 + bits), 2);
            let lo = -5.0 + 5.0 * u[0];
            let qp = QuantParams::from_range(lo, lo + 0.01 + 8.0 * u[1], bits).map_err(|e| e.to_string())?;
            let mut prev = f64::NEG_INFINITY;
            for q in 0..=qp.max_level() {
                let level = qp.dequantize(q);
                ensure(qp.quantize(level) == q && qp.quantize_dequantize_value(level) == level, || format!("bits {bits}: level {q} not a fixed point"))?;
                // Points between this level and the next, including the midpoint.
                for t in [0.0, 0.25, 0.5, 0.75] {
                    let x = qp.clip_min + (q as f64 + t) * qp.scale;
                    if x > qp.clip_max {
                        continue;
                    }
                    let y = qp.quantize_dequantize_value(x);
                    ensure(y >= prev, || format!("bits {bits}: not monotone at {x}"))?;
                    ensure((y - x).abs() <= qp.scale / 2.0 * (1.0 + 1e-12), || format!("bits {bits}: error {} > scale/2 at {x}", (y - x).abs()))?;
                    ensure(qp.quantize_dequantize_value(y) == y, || format!("bits {bits}: not idempotent at {x}"))?;
                    prev = y;
                }
            }
            ranges += 1;
        }
    }
    let mut mse_batches = 0;
    for s in 0..100u64 {
        let v = randn(s, 70, &[64 + s as usize]).data().to_vec();
        for bits in [2u32, 4, 8] {
            let mm = calibrate_minmax(&v, bits).map_err(|e| e.to_string())?;
            let pc = calibrate_percentile(&v, bits, 1.0).map_err(|e| e.to_string())?;
            ensure(
                pc.clip_min.to_bits() == mm.clip_min.to_bits()
                    && pc.clip_max.to_bits() == mm.clip_max.to_bits()
                    && pc.scale.to_bits() == mm.scale.to_bits()
                    && pc.zero_point == mm.zero_point,
                || format!("batch {s} bits {bits}: percentile(1) {pc:?} vs min-max {mm:?}"),
            )?;
            let best = calibrate_mse(&v, bits, 100, false).map_err(|e| e.to_string())?;
            ensure(quant_mse(&v, &best) <= quant_mse(&v, &mm), || format!("batch {s} bits {bits}: MSE search worse than min-max"))?;
        }
        mse_batches += 1;
    }
    Ok(format!("{ranges} grids exhaustive over all levels, {mse_batches} batches for percentile and MSE"))
}

fn theorem() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for k in [2, 3, 4] {
        let c = verify_theorem1(k, 0.05).map_err(|e| e.to_string())?;
        ensure(c.verified, || format!("K={k}: best {:?} entropy {} > uniform {}", c.argmax, c.best_entropy, c.uniform_entropy))?;
        parts.push(format!("K={k} {} points", c.grid_points));
    }
    within(Duration::from_secs(30), start)?;
    Ok(parts.join(", "))
}

/// Default toy benchmark: blobs and teacher both seeded by the run seed.
fn toy_cases(seeds: std::ops::Range<u64>) -> Vec<SeedCase> {
    seeds
        .map(|seed| {
            let data = blobs(&BlobSpec { seed, ..BlobSpec::default() }).unwrap();
            let opts = TrainOptions::default();
            let net = toy_network(data.train.x.row_len(), &opts.hidden, data.train.classes, seed).unwrap();
            let (teacher, _) = train_fp(net, &data.train, &data.test, &opts, seed).unwrap();
            SeedCase { seed, teacher, test: data.test }
        })
        .collect()
}

fn mean_of(table: &AblationTable, v: Variant) -> Result<(f64, f64, f64), String> {
    let s = table.summary_for(v).ok_or_else(|| format!("no summary for {v:?}"))?;
    Ok((s.fp.mean, s.ptq.ok_or("no PTQ")?.mean, s.qat.ok_or("no QAT")?.mean))
}

fn eight_bit() -> Outcome {
    let start = Instant::now();
    let cases = toy_cases(0..5);
    let base = RunConfig { w_bits: 8, a_bits: 8, ..RunConfig::default() };
    let opts = AblationOptions { variants: vec![Variant::Dsg], diversity: false, ..AblationOptions::default() };
    let table = ablation_run(&cases, &base, &opts).map_err(|e| e.to_string())?;
    let (fp, ptq, qat) = mean_of(&table, Variant::Dsg)?;
    within(Duration::from_secs(600), start)?;
    let detail = format!("5 seeds: FP {:.2}, PTQ {:.2}, QAT {:.2}", 100.0 * fp, 100.0 * ptq, 100.0 * qat);
    ensure(ptq >= fp - 0.01 && qat >= fp - 0.01, || detail.clone())?;
    Ok(detail)
}

fn four_bit_ablation() -> Result<AblationTable, String> {
    let cases = toy_cases(0..10);
    ablation_run(&cases, &RunConfig::default(), &AblationOptions::default()).map_err(|e| e.to_string())
}

fn directional_gain(table: &AblationTable, start: Instant) -> Outcome {
    let (_, v_ptq, v_qat) = mean_of(table, Variant::Vanilla)?;
    let (_, d_ptq, d_qat) = mean_of(table, Variant::Dsg)?;
    let mut parts =
        vec![format!("vanilla PTQ {:.2} QAT {:.2}", 100.0 * v_ptq, 100.0 * v_qat), format!("DSG PTQ {:.2} QAT {:.2}", 100.0 * d_ptq, 100.0 * d_qat)];
    let mut failures = Vec::new();
    if d_ptq < v_ptq {
        failures.push("DSG PTQ below vanilla".to_string());
    }
    if d_qat < v_qat {
        failures.push("DSG QAT below vanilla".to_string());
    }
    for v in [Variant::Sda, Variant::Lse, Variant::Sci] {
        let (_, p, q) = mean_of(table, v)?;
        parts.push(format!("{} PTQ {:.2} QAT {:.2}", v.label(), 100.0 * p, 100.0 * q));
        if p < v_ptq - 0.005 {
            failures.push(format!("{} PTQ {:.2} points below vanilla", v.label(), 100.0 * (v_ptq - p)));
        }
        if q < v_qat - 0.005 {
            failures.push(format!("{} QAT {:.2} points below vanilla", v.label(), 100.0 * (v_qat - q)));
        }
    }
    within(Duration::from_secs(1800), start)?;
    let detail = format!("10 seeds: {}", parts.join(", "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn diversity_direction(table: &AblationTable) -> Outcome {
    let get = |v: Variant| -> Result<(f64, f64, f64), String> {
        let s = table.summary_for(v).ok_or("missing summary")?;
        let m = |x: Option<dsgq::pipelines::MeanStd>| x.map(|x| x.mean).ok_or("missing diversity");
        Ok((m(s.stat_variance)?, m(s.wasserstein)?, m(s.similarity_index_s)?))
    };
    let (vs, vw, vsim) = get(Variant::Vanilla)?;
    let (ds, dw, dsim) = get(Variant::Dsg)?;
    let detail = format!("stat variance DSG {ds:.4} vs vanilla {vs:.4}, Wasserstein {dw:.4} vs {vw:.4}, similarity s {dsim:.1} vs {vsim:.1}");
    ensure(ds > vs && dw > vw && dsim < vsim, || detail.clone())?;
    Ok(detail)
}

const SMALL_CONFIG: &str = r#"{
  "run": {"iterations": 40, "batch_size": 16, "n_calibration": 32, "n_probe": 256,
          "qat": {"epochs": 2, "steps_per_epoch": 5}},
  "dataset": {"kind": "blobs", "per_class": 64, "test_per_class": 64},
  "train": {"epochs": 10},
  "seeds": [0, 1]
}"#;

fn cli_outputs(dir: &Path, cfg: &Path, tag: &str, args: &[&str]) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let out = dir.join(tag);
    let o = Command::new(env!("CARGO_BIN_EXE_dsgq"))
        .env_remove("DSGQ_LOG")
        .args(args)
        .args(["--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || format!("{args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
    let mut files = BTreeMap::new();
    let mut stack = vec![out.clone()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else if !matches!(p.file_name().and_then(|n| n.to_str()), Some("timings.json" | "run.log")) {
                files.insert(p.strip_prefix(&out).unwrap().display().to_string(), std::fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    ensure(files.contains_key("report.json"), || format!("{args:?}: no report.json"))?;
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, SMALL_CONFIG).map_err(|e| e.to_string())?;
    let commands: [&[&str]; 7] = [
        &["train-fp"],
        &["gen-data", "--mode", "dsg"],
        &["calibrate", "--mode", "sda"],
        &["qat"],
        &["ablate"],
        &["metrics", "--mode", "dsg"],
        &["verify-theorem"],
    ];
    let mut compared = 0;
    for (i, args) in commands.iter().enumerate() {
        let a = cli_outputs(dir.path(), &cfg, &format!("a{i}"), args)?;
        let b = cli_outputs(dir.path(), &cfg, &format!("b{i}"), args)?;
        ensure(a == b, || {
            let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
            format!("{args:?}: outputs differ in {differing:?}")
        })?;
        compared += a.len();
    }
    Ok(format!("{} commands rerun, {compared} artifacts byte-identical", commands.len()))
}

fn main() {
    let mut ok = true;
    ok &= run(1, "gradient correctness", gradients);
    ok &= run(2, "slack reduction", slack_reduction);
    ok &= run(3, "enhancement structure", enhancement_structure);
    ok &= run(4, "eigensolver", eigensolver);
    ok &= run(5, "correlation sanity", correlation_sanity);
    ok &= run(6, "quantizer", quantizer);
    ok &= run(7, "entropy theorem", theorem);
    ok &= run(8, "W8A8 end to end", eight_bit);
    let mut table = Err("W4A4 ablation did not run".to_string());
    ok &= run(9, "W4A4 directional gain", || {
        let start = Instant::now();
        table = four_bit_ablation();
        directional_gain(table.as_ref().map_err(Clone::clone)?, start)
    });
    ok &= run(10, "diversity direction", || diversity_direction(table.as_ref().map_err(Clone::clone)?));
    ok &= run(11, "CLI determinism", determinism);
    if !ok {
        std::process::exit(1);
    }
}
