//! Persistence, datasets, and configuration.

use std::path::Path;

use crate::error::{Error, Result};

mod config;
mod dataset;
mod model;
mod report;

pub use config::{config_from_json, load_config, AblationToggles, ExperimentConfig, MetricOptions};
pub use dataset::{blobs, load_dataset, read_csv, BlobSpec, DataSplit, Dataset, DatasetSpec};
pub use model::{load_model, model_from_json, model_to_json, save_model, LayerFile, ModelFile, MODEL_FORMAT_VERSION};
pub use report::{write_csv, write_pca_csv, write_samples_csv, write_timings, PcaRow, QuantizerSummary, Report, REPORT_FILE, RUN_LOG_FILE, TIMINGS_FILE};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `text`, creating parent directories.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
