use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_text, ExperimentConfig};
use crate::dsg::RelaxationConstants;
use crate::error::{Error, Result};
use crate::metrics::{DiversityReport, Theorem1Check};
use crate::pipelines::{AblationTable, TrainReport};
use crate::quant::{QuantParams, QuantizedNetwork};

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const RUN_LOG_FILE: &str = "run.log";

/// Result document of one CLI run. It holds nothing that depends on wall
/// time or scheduling, so a rerun with the same config reproduces it
/// byte for byte; timings are written to a separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub fp_accuracy: Option<f64>,
    pub training: Option<TrainReport>,
    /// Keyed `<pipeline>/<variant>`, e.g. `ptq/dsg`.
    pub quantized_accuracy: BTreeMap<String, f64>,
    /// Keyed by data source, e.g. `synthetic`, `real`.
    pub diversity: BTreeMap<String, DiversityReport>,
    pub relaxation: Option<RelaxationConstants>,
    /// Quantizer state of each quantized network, keyed like the accuracies.
    pub quantizers: BTreeMap<String, QuantizerSummary>,
    pub ablation: Option<AblationTable>,
    pub theorem1: Vec<Theorem1Check>,
    pub theorem1_verified: Option<bool>,
    /// Artifact name to file name, relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSummary {
    /// Layer index of each parameterized layer.
    pub sites: Vec<usize>,
    pub weight: Vec<QuantParams>,
    pub activation: Vec<QuantParams>,
}

impl From<&QuantizedNetwork> for QuantizerSummary {
    fn from(q: &QuantizedNetwork) -> Self {
        QuantizerSummary { sites: q.sites.clone(), weight: q.weight_qparams.clone(), activation: q.act_qparams.clone() }
    }
}

impl Report {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Report {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.run.seed,
            config: config.clone(),
            fp_accuracy: None,
            training: None,
            quantized_accuracy: BTreeMap::new(),
            diversity: BTreeMap::new(),
            relaxation: None,
            quantizers: BTreeMap::new(),
            ablation: None,
            theorem1: Vec::new(),
            theorem1_verified: None,
            artifacts: BTreeMap::new(),
        }
    }

    /// Every accuracy in `[0, 1]` and every artifact present under `out`.
    pub fn validate(&self, out: &Path) -> Result<()> {
        let mut accs: Vec<(String, f64)> = self.quantized_accuracy.iter().map(|(k, v)| (k.clone(), *v)).collect();
        if let Some(a) = self.fp_accuracy {
            accs.push(("fp_accuracy".into(), a));
        }
        if let Some(t) = &self.ablation {
            for r in &t.rows {
                accs.extend([r.ptq_accuracy, r.qat_accuracy].into_iter().flatten().map(|a| (format!("ablation/{}", r.variant.mode_name()), a)));
            }
        }
        if let Some((k, a)) = accs.iter().find(|(_, a)| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument(format!("accuracy {k} = {a} outside [0, 1]")));
        }
        if let Some((k, f)) = self.artifacts.iter().find(|(_, f)| !out.join(f).is_file()) {
            return Err(Error::InvalidArgument(format!("artifact {k} refers to missing file {f}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Validates, then writes `report.json` under `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        self.validate(out)?;
        write_text(&out.join(REPORT_FILE), &self.to_json())
    }
}

/// Writes rows as CSV with a header derived from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    write_text(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    pub index: usize,
    pub pc1: f64,
    pub pc2: f64,
}

pub fn write_pca_csv(path: &Path, coords: &[[f64; 2]]) -> Result<()> {
    let rows: Vec<PcaRow> = coords.iter().enumerate().map(|(index, c)| PcaRow { index, pc1: c[0], pc2: c[1] }).collect();
    write_csv(path, &rows)
}

/// Samples (and optional labels) as CSV rows, label first when present.
pub fn write_samples_csv(path: &Path, x: &crate::tensor::Tensor, labels: Option<&[usize]>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for s in 0..x.batch() {
        let mut rec: Vec<String> = labels.map(|l| vec![l[s].to_string()]).unwrap_or_default();
        rec.extend(x.row(s).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    write_text(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Phase name to seconds.
pub fn write_timings(out: &Path, timings: &[(String, f64)]) -> Result<()> {
    let map: BTreeMap<&str, f64> = timings.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut s = serde_json::to_string_pretty(&map).expect("timings serialize");
    s.push('\n');
    write_text(&out.join(TIMINGS_FILE), &s)
}
