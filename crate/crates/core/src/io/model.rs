use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::net::{BatchNorm, Conv2d, Dense, Layer, Network};
use crate::tensor::Tensor;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerFile {
    Dense {
        in_features: usize,
        out_features: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm {
        channels: usize,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        eps: f64,
    },
    Relu,
    #[serde(rename = "globalavgpool")]
    GlobalAvgPool,
}

impl ModelFile {
    pub fn from_network(net: &Network) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => LayerFile::Dense {
                    in_features: d.in_features(),
                    out_features: d.out_features(),
                    weight: d.weight.data().to_vec(),
                    bias: d.bias.data().to_vec(),
                },
                Layer::Conv2d(c) => LayerFile::Conv2d {
                    in_channels: c.in_channels(),
                    out_channels: c.out_channels(),
                    kernel: c.kernel(),
                    weight: c.weight.data().to_vec(),
                    bias: c.bias.data().to_vec(),
                },
                Layer::BatchNorm(b) => LayerFile::BatchNorm {
                    channels: b.channels(),
                    gamma: b.gamma.data().to_vec(),
                    beta: b.beta.data().to_vec(),
                    running_mean: b.running_mean.data().to_vec(),
                    running_var: b.running_var.data().to_vec(),
                    eps: b.eps,
                },
                Layer::Relu => LayerFile::Relu,
                Layer::GlobalAvgPool => LayerFile::GlobalAvgPool,
            })
            .collect();
        ModelFile { format_version: MODEL_FORMAT_VERSION, input_shape: net.input_shape().to_vec(), layers }
    }

    /// Validates every field and builds the network. Errors name the
    /// offending field path, e.g. `layers[1].running_var[3]`.
    pub fn to_network(&self) -> Result<Network> {
        let bad = |field: String, message: String| Error::Format { path: field, message };
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(bad("format_version".into(), format!("unsupported model format version {} (expected {MODEL_FORMAT_VERSION})", self.format_version)));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let at = |field: &str| format!("layers[{i}].{field}");
            let vec = |field: &str, data: &[f64], shape: Vec<usize>| -> Result<Tensor> {
                let want: usize = shape.iter().product();
                if data.len() != want {
                    return Err(bad(at(field), format!("expected {want} values for shape {shape:?}, found {}", data.len())));
                }
                if let Some(k) = data.iter().position(|v| !v.is_finite()) {
                    return Err(bad(format!("{}[{k}]", at(field)), "non-finite value".into()));
                }
                Tensor::new(shape, data.to_vec())
            };
            layers.push(match l {
                LayerFile::Dense { in_features, out_features, weight, bias } => {
                    Layer::Dense(Dense { weight: vec("weight", weight, vec![*out_features, *in_features])?, bias: vec("bias", bias, vec![*out_features])? })
                }
                LayerFile::Conv2d { in_channels, out_channels, kernel, weight, bias } => {
                    if kernel % 2 == 0 {
                        return Err(bad(at("kernel"), format!("kernel side {kernel} must be odd")));
                    }
                    Layer::Conv2d(Conv2d {
                        weight: vec("weight", weight, vec![*out_channels, *in_channels, *kernel, *kernel])?,
                        bias: vec("bias", bias, vec![*out_channels])?,
                    })
                }
                LayerFile::BatchNorm { channels, gamma, beta, running_mean, running_var, eps } => {
                    if let Some(k) = running_var.iter().position(|&v| v < 0.0) {
                        return Err(bad(format!("{}[{k}]", at("running_var")), format!("negative running variance {}", running_var[k])));
                    }
                    if !(*eps > 0.0) || !eps.is_finite() {
                        return Err(bad(at("eps"), format!("eps {eps} must be positive")));
                    }
                    Layer::BatchNorm(BatchNorm {
                        gamma: vec("gamma", gamma, vec![*channels])?,
                        beta: vec("beta", beta, vec![*channels])?,
                        running_mean: vec("running_mean", running_mean, vec![*channels])?,
                        running_var: vec("running_var", running_var, vec![*channels])?,
                        eps: *eps,
                    })
                }
                LayerFile::Relu => Layer::Relu,
                LayerFile::GlobalAvgPool => Layer::GlobalAvgPool,
            });
        }
        Network::new(self.input_shape.clone(), layers).map_err(|e| bad("layers".into(), e.to_string()))
    }
}

pub fn model_to_json(net: &Network) -> String {
    let mut s = serde_json::to_string_pretty(&ModelFile::from_network(net)).expect("model serializes");
    s.push('\n');
    s
}

/// Parses a model document; `origin` names the source in error messages.
pub fn model_from_json(text: &str, origin: &str) -> Result<Network> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ModelFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let offset = byte_offset(text, inner.line(), inner.column());
        Error::Parse(format!("{origin}: at byte offset {offset} (field {}): {inner}", e.path()))
    })?;
    file.to_network().map_err(|e| match e {
        Error::Format { path, message } => Error::Format { path: format!("{origin}: {path}"), message },
        other => other,
    })
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    write_text(path, &model_to_json(net))
}

pub fn load_model(path: &Path) -> Result<Network> {
    model_from_json(&read_text(path)?, &path.display().to_string())
}

/// Byte offset of a 1-based line/column position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}
