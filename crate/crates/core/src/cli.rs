//! Command-line surface.
//!
//! Every subcommand writes `report.json`, `timings.json`, `run.log`, and its
//! CSV artifacts under the output directory and nowhere else. Exit codes:
//! 0 on success, 1 on configuration or argument errors (including unreadable
//! model or dataset files), 2 when a pipeline fails.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{
    load_config, load_dataset, load_model, save_model, write_csv, write_pca_csv, write_samples_csv, write_timings, DataSplit, DatasetSpec, ExperimentConfig,
    QuantizerSummary, Report, RUN_LOG_FILE, TIMINGS_FILE,
};
use crate::metrics::{diversity_report, verify_theorem1, DiversityReport};
use crate::net::Network;
use crate::pipelines::{
    ablation_run, calibrate_quantized, dsg_qat_train, evaluate, generate_calibration_set, generator_batch, stack_batches, toy_network, train_fp,
    AblationOptions, CalibrationSet, RunConfig, SeedCase, TrainReport, Variant,
};

pub const DEFAULT_OUT: &str = "dsgq-out";

#[derive(Debug, Parser)]
#[command(name = "dsgq", version, about = "Data-free quantization workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

/// Flags override the matching config-file fields.
#[derive(Debug, Args)]
struct Flags {
    /// Experiment config (JSON); omitted fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run seed; also seeds inline teacher training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long = "w-bits", global = true)]
    w_bits: Option<u32>,
    #[arg(long = "a-bits", global = true)]
    a_bits: Option<u32>,
    /// Slack-margin percentile.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Generation iterations per synthetic batch.
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// Generation losses to enable.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Bn,
    Sda,
    Lse,
    Sci,
    Dsg,
}

impl From<ModeArg> for Variant {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Bn => Variant::Vanilla,
            ModeArg::Sda => Variant::Sda,
            ModeArg::Lse => Variant::Lse,
            ModeArg::Sci => Variant::Sci,
            ModeArg::Dsg => Variant::Dsg,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the full-precision teacher and save it as teacher.json.
    TrainFp,
    /// Synthesize a calibration set and measure its diversity.
    GenData,
    /// Post-training quantization on synthetic calibration data.
    Calibrate,
    /// Generator-driven quantization-aware training.
    Qat,
    /// Every configured variant over every configured seed.
    Ablate,
    /// Diversity diagnostics of real, Gaussian, and synthetic data.
    Metrics,
    /// Check that the uniform allocation maximizes entropy on a simplex grid.
    VerifyTheorem {
        /// Number of regions; without it K = 2, 3, 4 are checked.
        #[arg(long)]
        k: Option<usize>,
        /// Grid step (defaults to the config's `theorem_step`).
        #[arg(long)]
        step: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainFp => "train-fp",
            Command::GenData => "gen-data",
            Command::Calibrate => "calibrate",
            Command::Qat => "qat",
            Command::Ablate => "ablate",
            Command::Metrics => "metrics",
            Command::VerifyTheorem { .. } => "verify-theorem",
        }
    }
}

/// Mirrors every line to stdout and `run.log`. `DSGQ_LOG=debug` adds detail.
struct RunLog {
    file: Mutex<File>,
    debug: bool,
}

impl RunLog {
    fn open(out: &Path, debug: bool) -> Result<Self> {
        let path = out.join(RUN_LOG_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunLog { file: Mutex::new(file), debug })
    }

    fn info(&self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        println!("{msg}");
        let mut f = self.file.lock().expect("log lock");
        let _ = writeln!(f, "{msg}");
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.debug {
            self.info(msg);
        }
    }

    fn error(&self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        eprintln!("error: {msg}");
        let mut f = self.file.lock().expect("log lock");
        let _ = writeln!(f, "error: {msg}");
    }
}

fn log_debug_env() -> Result<bool> {
    match std::env::var("DSGQ_LOG") {
        Err(_) => Ok(false),
        Ok(v) => match v.to_ascii_lowercase().as_str() {
            "" | "info" => Ok(false),
            "debug" => Ok(true),
            other => Err(Error::Config(format!("DSGQ_LOG = {other:?}; expected info or debug"))),
        },
    }
}

/// Config file (or defaults) with the command-line flags applied.
fn resolve_config(flags: &Flags) -> Result<ExperimentConfig> {
    let mut cfg = match &flags.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let run = &mut cfg.run;
    if let Some(s) = flags.seed {
        run.seed = s;
    }
    if let Some(b) = flags.w_bits {
        run.w_bits = b;
    }
    if let Some(b) = flags.a_bits {
        run.a_bits = b;
    }
    if let Some(e) = flags.epsilon {
        run.epsilon = e;
    }
    if let Some(t) = flags.iters {
        run.iterations = t;
    }
    if let Some(m) = flags.mode {
        *run = run.clone().with_variant(m.into());
    }
    if let Some(o) = &flags.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let setup = resolve_config(&cli.flags).and_then(|cfg| {
        let debug = log_debug_env()?;
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        std::fs::create_dir_all(&out).map_err(|e| Error::Config(Error::io(&out, e).to_string()))?;
        let log = RunLog::open(&out, debug).map_err(|e| Error::Config(e.to_string()))?;
        Ok((cfg, out, log))
    });
    let (cfg, out, log) = match setup {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let mut ctx = Ctx { cfg, out, log, timings: Vec::new() };
    match ctx.run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            ctx.log.error(e.to_string());
            if matches!(e, Error::Config(_)) {
                1
            } else {
                2
            }
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    log: RunLog,
    timings: Vec<(String, f64)>,
}

struct Teacher {
    net: Network,
    data: DataSplit,
    training: Option<TrainReport>,
}

#[derive(Serialize)]
struct TrajRow {
    batch: usize,
    iteration: usize,
    total: f64,
    stat: f64,
    sci: f64,
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct AblationCsvRow {
    variant: &'static str,
    seed: u64,
    fp_accuracy: f64,
    ptq_accuracy: Option<f64>,
    qat_accuracy: Option<f64>,
    stat_variance: Option<f64>,
    wasserstein: Option<f64>,
    similarity_index_s: Option<f64>,
}

impl Ctx {
    fn timed<R>(&mut self, phase: &str, f: impl FnOnce(&Self) -> Result<R>) -> Result<R> {
        let t = Instant::now();
        let r = f(self)?;
        let secs = t.elapsed().as_secs_f64();
        self.log.debug(format!("{phase}: {secs:.3} s"));
        self.timings.push((phase.to_string(), secs));
        Ok(r)
    }

    fn run(&mut self, cmd: &Command) -> Result<()> {
        let name = cmd.name();
        self.log.info(format!("dsgq {name}: seed {}, W{}A{}, out {}", self.cfg.run.seed, self.cfg.run.w_bits, self.cfg.run.a_bits, self.out.display()));
        // The output directory is not part of the experiment.
        let echo = ExperimentConfig { out: None, ..self.cfg.clone() };
        let mut report = Report::new(name, &echo);
        match cmd {
            Command::TrainFp => self.train_fp(&mut report)?,
            Command::GenData => self.gen_data(&mut report)?,
            Command::Calibrate => self.calibrate(&mut report)?,
            Command::Qat => self.qat(&mut report)?,
            Command::Ablate => self.ablate(&mut report)?,
            Command::Metrics => self.metrics(&mut report)?,
            Command::VerifyTheorem { k, step } => self.verify_theorem(&mut report, *k, *step)?,
        }
        write_timings(&self.out, &self.timings)?;
        report.artifacts.insert("timings".into(), TIMINGS_FILE.into());
        report.artifacts.insert("log".into(), RUN_LOG_FILE.into());
        report.write(&self.out)?;
        self.log.info(format!("wrote {}", self.out.join(crate::io::REPORT_FILE).display()));
        if report.theorem1_verified == Some(false) {
            return Err(Error::InvalidArgument("uniform allocation is not the entropy maximizer on the grid".into()));
        }
        Ok(())
    }

    fn variant_name(&self) -> &'static str {
        self.cfg.run.variant().map_or("custom", Variant::mode_name)
    }

    /// Loads the configured model, or trains one on `dataset` with `seed`.
    /// Unreadable inputs count as configuration errors.
    fn teacher(&self, dataset: &DatasetSpec, seed: u64) -> Result<Teacher> {
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        let data = load_dataset(dataset).map_err(as_config)?;
        if let Some(path) = &self.cfg.model {
            let net = load_model(path).map_err(as_config)?;
            if net.input_shape() != data.test.sample_shape() {
                return Err(Error::Config(format!("model input {:?} does not match dataset samples {:?}", net.input_shape(), data.test.sample_shape())));
            }
            return Ok(Teacher { net, data, training: None });
        }
        let shape = data.train.sample_shape();
        if shape.len() != 1 {
            return Err(Error::Config(format!("inline training needs vector samples, got {shape:?}")));
        }
        let net = toy_network(shape[0], &self.cfg.train.hidden, data.train.classes, seed)?;
        let (net, rep) = train_fp(net, &data.train, &data.test, &self.cfg.train, seed)?;
        Ok(Teacher { net, data, training: Some(rep) })
    }

    fn load_teacher(&mut self, report: &mut Report) -> Result<Teacher> {
        let (spec, seed) = (self.cfg.dataset.clone(), self.cfg.run.seed);
        let t = self.timed("teacher", |c| c.teacher(&spec, seed))?;
        let fp = evaluate(&t.net, &t.data.test)?;
        self.log.info(format!("teacher: fp accuracy {fp:.4}"));
        report.fp_accuracy = Some(fp);
        report.training = t.training.clone();
        Ok(t)
    }

    fn diversity(&self, report: &mut Report, source: &str, net: &Network, batch: &crate::tensor::Tensor) -> Result<DiversityReport> {
        let d = diversity_report(net, batch, self.cfg.metrics.diversity_options())?;
        self.log.info(format!(
            "diversity[{source}]: stat variance {:.6}, wasserstein {:.6}, s {:.6}, density {}",
            d.stat_variance, d.wasserstein_mean, d.similarity_index_s, d.density_index
        ));
        if self.cfg.metrics.pca_csv {
            let file = format!("pca_{}.csv", source.replace('/', "_"));
            write_pca_csv(&self.out.join(&file), &d.pca_coords)?;
            report.artifacts.insert(format!("pca/{source}"), file);
        }
        report.diversity.insert(source.to_string(), d.clone());
        Ok(d)
    }

    fn synthesize(&mut self, report: &mut Report, net: &Network, run: &RunConfig, tag: &str) -> Result<CalibrationSet> {
        let set = self.timed(&format!("generate/{tag}"), |_| generate_calibration_set(net, run))?;
        let rows: Vec<TrajRow> = set
            .batches
            .iter()
            .enumerate()
            .flat_map(|(batch, b)| b.trajectory.iter().map(move |r| TrajRow { batch, iteration: r.iteration, total: r.total, stat: r.stat, sci: r.sci }))
            .collect();
        for (i, b) in set.batches.iter().enumerate() {
            let (first, last) = (b.trajectory.first().expect("rows"), b.trajectory.last().expect("rows"));
            self.log.debug(format!("batch {i}: loss {:.6} -> {:.6} over {} iterations", first.total, last.total, b.iterations));
        }
        let file = format!("trajectory_{}.csv", tag.replace('/', "_"));
        write_csv(&self.out.join(&file), &rows)?;
        report.artifacts.insert(format!("trajectory/{tag}"), file);
        report.relaxation = Some(set.relaxation.clone());
        Ok(set)
    }

    fn train_fp(&mut self, report: &mut Report) -> Result<()> {
        let t = self.load_teacher(report)?;
        save_model(&t.net, &self.out.join("teacher.json"))?;
        report.artifacts.insert("model".into(), "teacher.json".into());
        if let Some(tr) = &t.training {
            let rows: Vec<EpochRow> = tr.epoch_loss.iter().enumerate().map(|(epoch, &loss)| EpochRow { epoch, loss }).collect();
            write_csv(&self.out.join("train_loss.csv"), &rows)?;
            report.artifacts.insert("train_loss".into(), "train_loss.csv".into());
        }
        Ok(())
    }

    fn gen_data(&mut self, report: &mut Report) -> Result<()> {
        let t = self.load_teacher(report)?;
        let run = self.cfg.run.clone();
        let tag = format!("synthetic/{}", self.variant_name());
        let set = self.synthesize(report, &t.net, &run, &tag)?;
        let samples = stack_batches(&set)?;
        write_samples_csv(&self.out.join("samples.csv"), &samples, None)?;
        report.artifacts.insert("samples".into(), "samples.csv".into());
        self.log.info(format!("generated {} samples in {} batches", samples.batch(), set.batches.len()));
        if self.cfg.metrics.diversity {
            self.diversity(report, &tag, &t.net, &samples)?;
        }
        Ok(())
    }

    fn calibrate(&mut self, report: &mut Report) -> Result<()> {
        let t = self.load_teacher(report)?;
        let run = self.cfg.run.clone();
        let v = self.variant_name();
        let set = self.synthesize(report, &t.net, &run, &format!("synthetic/{v}"))?;
        let q = self.timed("calibrate", |_| calibrate_quantized(&t.net, &set.tensors(), &run))?;
        let acc = q.accuracy(&t.data.test.x, &t.data.test.y)?;
        self.log.info(format!("ptq/{v}: accuracy {acc:.4}"));
        report.quantized_accuracy.insert(format!("ptq/{v}"), acc);
        report.quantizers.insert(format!("ptq/{v}"), QuantizerSummary::from(&q));
        if self.cfg.metrics.diversity {
            self.diversity(report, &format!("synthetic/{v}"), &t.net, &stack_batches(&set)?)?;
        }
        Ok(())
    }

    fn qat(&mut self, report: &mut Report) -> Result<()> {
        let t = self.load_teacher(report)?;
        let run = self.cfg.run.clone();
        let v = self.variant_name();
        let outcome = self.timed("qat", |_| dsg_qat_train(&t.net, &run))?;
        let test = &t.data.test;
        let initial = outcome.initial_student.accuracy(&test.x, &test.y)?;
        let acc = outcome.student.accuracy(&test.x, &test.y)?;
        self.log.info(format!("qat/{v}: accuracy {initial:.4} before training, {acc:.4} after"));
        report.quantized_accuracy.insert(format!("qat_initial/{v}"), initial);
        report.quantized_accuracy.insert(format!("qat/{v}"), acc);
        report.quantizers.insert(format!("qat/{v}"), QuantizerSummary::from(&outcome.student));
        report.relaxation = Some(outcome.relaxation.clone());
        let file = format!("qat_trajectory_{v}.csv");
        write_csv(&self.out.join(&file), &outcome.trajectory)?;
        report.artifacts.insert(format!("trajectory/qat/{v}"), file);
        if let Some(last) = outcome.trajectory.last() {
            self.log.debug(format!("final step: generator {:.6}, student {:.6}", last.generator_total, last.student_total));
        }
        if self.cfg.metrics.diversity {
            let (x, _) = generator_batch(&outcome.generator, &run, 0)?;
            self.diversity(report, &format!("generator/{v}"), &t.net, &x)?;
        }
        Ok(())
    }

    fn ablate(&mut self, report: &mut Report) -> Result<()> {
        let mut cases = Vec::with_capacity(self.cfg.seeds.len());
        for &seed in &self.cfg.seeds.clone() {
            let mut spec = self.cfg.dataset.clone();
            // A fixed model is tied to its dataset; otherwise each seed draws fresh data.
            if let (DatasetSpec::Blobs(b), None) = (&mut spec, &self.cfg.model) {
                b.seed = seed;
            }
            let t = self.timed(&format!("teacher/seed{seed}"), |c| c.teacher(&spec, seed))?;
            self.log.info(format!("seed {seed}: fp accuracy {:.4}", evaluate(&t.net, &t.data.test)?));
            cases.push(SeedCase { seed, teacher: t.net, test: t.data.test });
        }
        let opts = AblationOptions {
            variants: self.cfg.variants.clone(),
            ptq: self.cfg.ablation.ptq,
            qat: self.cfg.ablation.qat,
            diversity: self.cfg.metrics.diversity,
            diversity_options: self.cfg.metrics.diversity_options(),
        };
        let run = self.cfg.run.clone();
        let table = self.timed("ablation", |_| ablation_run(&cases, &run, &opts))?;
        let fmt = |m: Option<crate::pipelines::MeanStd>| m.map_or("-".to_string(), |m| format!("{:.4} ± {:.4}", m.mean, m.std));
        for s in &table.summary {
            self.log.info(format!("{:>8}: ptq {}, qat {}", s.label, fmt(s.ptq), fmt(s.qat)));
        }
        let rows: Vec<AblationCsvRow> = table
            .rows
            .iter()
            .map(|r| AblationCsvRow {
                variant: r.variant.mode_name(),
                seed: r.seed,
                fp_accuracy: r.fp_accuracy,
                ptq_accuracy: r.ptq_accuracy,
                qat_accuracy: r.qat_accuracy,
                stat_variance: r.diversity.as_ref().map(|d| d.stat_variance),
                wasserstein: r.diversity.as_ref().map(|d| d.wasserstein_mean),
                similarity_index_s: r.diversity.as_ref().map(|d| d.similarity_index_s),
            })
            .collect();
        write_csv(&self.out.join("ablation.csv"), &rows)?;
        report.artifacts.insert("ablation".into(), "ablation.csv".into());
        for r in &table.rows {
            let v = r.variant.mode_name();
            if let Some(a) = r.ptq_accuracy {
                report.quantized_accuracy.insert(format!("ptq/{v}/seed{}", r.seed), a);
            }
            if let Some(a) = r.qat_accuracy {
                report.quantized_accuracy.insert(format!("qat/{v}/seed{}", r.seed), a);
            }
        }
        report.ablation = Some(table);
        Ok(())
    }

    fn metrics(&mut self, report: &mut Report) -> Result<()> {
        let t = self.load_teacher(report)?;
        let n = self.cfg.run.n_calibration.min(t.data.test.len());
        let idx: Vec<usize> = (0..n).collect();
        let (real, _) = t.data.test.subset(&idx);
        self.diversity(report, "real", &t.net, &real)?;
        let gaussian = RunConfig { iterations: 0, ..self.cfg.run.clone() };
        let set = self.timed("generate/gaussian", |_| generate_calibration_set(&t.net, &gaussian))?;
        self.diversity(report, "gaussian", &t.net, &stack_batches(&set)?)?;
        let run = self.cfg.run.clone();
        let tag = format!("synthetic/{}", self.variant_name());
        let set = self.synthesize(report, &t.net, &run, &tag)?;
        self.diversity(report, &tag, &t.net, &stack_batches(&set)?)?;
        Ok(())
    }

    fn verify_theorem(&mut self, report: &mut Report, k: Option<usize>, step: Option<f64>) -> Result<()> {
        let step = step.unwrap_or(self.cfg.theorem_step);
        let ks = k.map_or(vec![2, 3, 4], |k| vec![k]);
        let checks = ks.iter().map(|&k| verify_theorem1(k, step).map_err(|e| Error::Config(e.to_string()))).collect::<Result<Vec<_>>>()?;
        for c in &checks {
            self.log.info(format!(
                "K = {}: {} grid points, uniform entropy {:.12}, best {:.12}, verified {}",
                c.k, c.grid_points, c.uniform_entropy, c.best_entropy, c.verified
            ));
        }
        report.theorem1_verified = Some(checks.iter().all(|c| c.verified));
        report.theorem1 = checks;
        Ok(())
    }
}
