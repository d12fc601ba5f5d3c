use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, DatasetSpec};
use crate::error::{Error, Result};
use crate::metrics::{DiversityOptions, DEFAULT_QUANTILES, DEFAULT_RADIUS_FRACTION};
use crate::pipelines::{RunConfig, TrainOptions, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    /// Compute diversity diagnostics for generated and real data.
    pub diversity: bool,
    /// Also write PCA coordinates as CSV.
    pub pca_csv: bool,
    pub n_quantiles: usize,
    pub radius_fraction: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { diversity: true, pca_csv: true, n_quantiles: DEFAULT_QUANTILES, radius_fraction: DEFAULT_RADIUS_FRACTION }
    }
}

impl MetricOptions {
    pub fn diversity_options(&self) -> DiversityOptions {
        DiversityOptions { n_quantiles: self.n_quantiles, radius_fraction: self.radius_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationToggles {
    pub ptq: bool,
    pub qat: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles { ptq: true, qat: true }
    }
}

/// Everything one CLI invocation needs. Every field has a default, and a
/// loaded document re-serializes with all defaults spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub dataset: DatasetSpec,
    pub train: TrainOptions,
    /// Teacher model file. Without one the teacher is trained from `dataset`.
    pub model: Option<PathBuf>,
    /// Output directory; the `--out` flag takes precedence.
    pub out: Option<PathBuf>,
    /// Seeds of an ablation. Each seed drives the run, the teacher's
    /// training, and (for blob datasets) the data itself.
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub ablation: AblationToggles,
    pub metrics: MetricOptions,
    /// Grid step of the entropy-allocation check.
    pub theorem_step: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run: RunConfig::default(),
            dataset: DatasetSpec::default(),
            train: TrainOptions::default(),
            model: None,
            out: None,
            seeds: (0..5).collect(),
            variants: Variant::ALL.to_vec(),
            ablation: AblationToggles::default(),
            metrics: MetricOptions::default(),
            theorem_step: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("variants must not be empty".into()));
        }
        if self.metrics.n_quantiles == 0 || !(self.metrics.radius_fraction > 0.0) {
            return Err(Error::Config("metrics need n_quantiles > 0 and radius_fraction > 0".into()));
        }
        if !(self.theorem_step > 0.0 && self.theorem_step <= 1.0) {
            return Err(Error::Config(format!("theorem_step = {} outside (0, 1]", self.theorem_step)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Parses a config document; errors carry the offending field path.
pub fn config_from_json(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("{origin}: field `{}`: {}", e.path(), e.inner())))?;
    cfg.validate().map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{origin}: {m}")),
        other => other,
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = read_text(path).map_err(|e| Error::Config(e.to_string()))?;
    config_from_json(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_materializes_defaults() {
        let cfg = config_from_json("{}", "mem").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let text = cfg.to_json();
        assert!(text.contains("\"epsilon\": 0.9"));
        assert!(text.contains("\"spread\""));
        assert_eq!(config_from_json(&text, "mem").unwrap(), cfg);
    }

    #[test]
    fn unknown_and_bad_fields_are_named() {
        let msg = config_from_json("{\"run\": {\"w_bit\": 4}}", "c.json").unwrap_err().to_string();
        assert!(msg.contains("w_bit"), "{msg}");
        let msg = config_from_json("{\"run\": {\"epsilon\": \"high\"}}", "c.json").unwrap_err().to_string();
        assert!(msg.contains("run.epsilon"), "{msg}");
        let msg = config_from_json("{\"run\": {\"a_bits\": 12}}", "c.json").unwrap_err().to_string();
        assert!(msg.contains("a_bits"), "{msg}");
    }

    #[test]
    fn csv_dataset_spec_parses() {
        let cfg = config_from_json("{\"dataset\": {\"kind\": \"csv\", \"train\": \"a.csv\", \"classes\": 3}}", "mem").unwrap();
        assert!(matches!(cfg.dataset, DatasetSpec::Csv { classes: 3, .. }));
    }
}
