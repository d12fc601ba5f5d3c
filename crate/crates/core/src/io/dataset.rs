use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, stream, uniform_vec, Stream};
use crate::tensor::Tensor;

/// Labeled samples, `x` of shape `[n, dim...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.shape().len() < 2 || x.batch() != y.len() {
            return Err(Error::Shape(format!("{} labels for samples {:?}", y.len(), x.shape())));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} >= {classes} classes")));
        }
        Ok(Dataset { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.x.shape()[1..]
    }

    /// Gathers the listed samples into a batch.
    pub fn subset(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let row = self.x.row_len();
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            data.extend_from_slice(self.x.row(i));
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(self.sample_shape());
        (Tensor::raw(shape, data), idx.iter().map(|&i| self.y[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Dataset,
    pub test: Dataset,
}

/// Gaussian blobs around class centers drawn from `U[center_low, center_high)^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_center_low")]
    pub center_low: f64,
    #[serde(default = "default_center_high")]
    pub center_high: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> usize {
    4
}
fn default_dim() -> usize {
    16
}
fn default_per_class() -> usize {
    256
}
fn default_test_per_class() -> usize {
    256
}
fn default_spread() -> f64 {
    1.0
}
fn default_center_low() -> f64 {
    -1.0
}
fn default_center_high() -> f64 {
    1.0
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            classes: default_classes(),
            dim: default_dim(),
            per_class: default_per_class(),
            test_per_class: default_test_per_class(),
            spread: default_spread(),
            center_low: default_center_low(),
            center_high: default_center_high(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs(BlobSpec),
    /// Label-first CSV rows. Without a test file the training file doubles as
    /// the test set.
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        classes: usize,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs(BlobSpec::default())
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<DataSplit> {
    match spec {
        DatasetSpec::Blobs(b) => blobs(b),
        DatasetSpec::Csv { train, test, classes } => {
            let tr = read_csv(train, *classes)?;
            let te = match test {
                Some(p) => read_csv(p, *classes)?,
                None => tr.clone(),
            };
            if te.sample_shape() != tr.sample_shape() {
                return Err(Error::Format {
                    path: test.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                    message: format!("test rows have {} features, train rows {}", te.x.row_len(), tr.x.row_len()),
                });
            }
            Ok(DataSplit { train: tr, test: te })
        }
    }
}

pub fn blobs(spec: &BlobSpec) -> Result<DataSplit> {
    if spec.classes < 2 {
        return Err(Error::Config(format!("blob dataset needs at least 2 classes, got {}", spec.classes)));
    }
    if spec.dim == 0 || spec.per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::Config("blob dim and per-class counts must be positive".into()));
    }
    if !(spec.spread > 0.0) || !(spec.center_high > spec.center_low) {
        return Err(Error::Config("blob spread must be positive and center_high > center_low".into()));
    }
    let width = spec.center_high - spec.center_low;
    let centers: Vec<f64> =
        uniform_vec(&mut stream(spec.seed, Stream::Data, 0), spec.classes * spec.dim).into_iter().map(|u| spec.center_low + width * u).collect();
    let draw = |index: u32, per_class: usize| -> Result<Dataset> {
        let mut rng = stream(spec.seed, Stream::Data, index);
        let n = spec.classes * per_class;
        let noise = gaussian_vec(&mut rng, n * spec.dim);
        let mut x = Vec::with_capacity(n * spec.dim);
        let mut y = Vec::with_capacity(n);
        for s in 0..n {
            let c = s % spec.classes;
            for d in 0..spec.dim {
                x.push(centers[c * spec.dim + d] + spec.spread * noise[s * spec.dim + d]);
            }
            y.push(c);
        }
        Dataset::new(Tensor::new(vec![n, spec.dim], x)?, y, spec.classes)
    };
    Ok(DataSplit { train: draw(1, spec.per_class)?, test: draw(2, spec.test_per_class)? })
}

/// Reads label-first numeric rows; every row must have the same width.
pub fn read_csv(path: &Path, classes: usize) -> Result<Dataset> {
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format { path: shown.clone(), message: e.to_string() })?;
    let mut width = None;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Format { path: shown.clone(), message: format!("row {row}: {e}") })?;
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w || w < 2 {
            return Err(Error::Format {
                path: shown.clone(),
                message: format!("row {row}: expected {w} columns (label + features, at least 2), found {}", rec.len()),
            });
        }
        let label: usize = rec[0]
            .parse()
            .map_err(|_| Error::Format { path: shown.clone(), message: format!("row {row}, column 1: label {:?} is not a class index", &rec[0]) })?;
        if label >= classes {
            return Err(Error::Format { path: shown.clone(), message: format!("row {row}, column 1: label {label} >= {classes} classes") });
        }
        y.push(label);
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Format { path: shown.clone(), message: format!("row {row}, column {}: {:?} is not a finite number", c + 1, cell) })?;
            x.push(v);
        }
    }
    let Some(w) = width else {
        return Err(Error::Format { path: shown, message: "no rows".into() });
    };
    let n = y.len();
    Dataset::new(Tensor::new(vec![n, w - 1], x)?, y, classes)
}
