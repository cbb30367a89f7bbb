//! `.dgm` model files: a [`container`](crate::container) with magic `DGM1`,
//! a JSON header describing every layer, and each layer's tensors
//! (parameters, then batch-norm running statistics) in layer order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::nn::BatchNormState;
use crate::tensor::Tensor;

use super::model::{Layer, LayerKind, LayerWeights, ModelMeta, ModelSpec};

pub const MODEL_MAGIC: &[u8; 4] = b"DGM1";
pub const MODEL_VERSION: u32 = container::VERSION;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    #[serde(flatten)]
    kind: LayerKind,
    trainable: bool,
    seed: u64,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bn: Option<(f32, f32)>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    meta: ModelMeta,
    layers: Vec<LayerEntry>,
}

const FORMAT: &str = "leafnet-model";

fn header_of(model: &ModelSpec) -> Header {
    let layers = model
        .layers
        .iter()
        .map(|l| LayerEntry {
            name: l.name.clone(),
            kind: l.kind.clone(),
            trainable: l.trainable,
            seed: l.seed,
            in_shape: l.in_shape.clone(),
            out_shape: l.out_shape.clone(),
            bn: match &l.weights {
                LayerWeights::BatchNorm(bn) => Some((bn.momentum, bn.epsilon)),
                _ => None,
            },
            tensors: l
                .tensor_names()
                .iter()
                .zip(l.tensors())
                .map(|(n, t)| TensorEntry {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        })
        .collect();
    Header {
        format: FORMAT.into(),
        meta: model.meta.clone(),
        layers,
    }
}

pub fn write_model(model: &ModelSpec) -> Result<Vec<u8>> {
    let header = serde_json::to_string(&header_of(model)).map_err(|e| Error::Header(e.to_string()))?;
    let tensors: Vec<&[f32]> = model
        .layers
        .iter()
        .flat_map(|l| l.tensors())
        .map(|t| t.data())
        .collect();
    Ok(container::encode(MODEL_MAGIC, &header, &tensors))
}

fn parse_header(h: &str) -> Result<Header> {
    let header: Header = serde_json::from_str(h).map_err(|e| Error::Header(e.to_string()))?;
    if header.format != FORMAT {
        return Err(Error::Header(format!("unknown format tag {:?}", header.format)));
    }
    Ok(header)
}

fn take(values: &mut std::slice::Iter<'_, f32>, entry: &TensorEntry) -> Result<Tensor<f32>> {
    let n: usize = entry.shape.iter().product();
    let data: Vec<f32> = values.by_ref().take(n).copied().collect();
    Tensor::new(&entry.shape, data).map_err(|e| Error::Header(format!("tensor {}: {e}", entry.name)))
}

pub fn read_model(bytes: &[u8]) -> Result<ModelSpec> {
    let decoded = container::decode(bytes, MODEL_MAGIC, "DGM1 model", |h| {
        let header = parse_header(h)?;
        Ok(header
            .layers
            .iter()
            .flat_map(|l| &l.tensors)
            .map(|t| t.shape.iter().product::<usize>())
            .sum())
    })?;
    let header = parse_header(decoded.header)?;
    let values = decoded.floats();
    let mut it = values.iter();

    let mut layers = Vec::with_capacity(header.layers.len());
    for entry in header.layers {
        let ts = entry
            .tensors
            .iter()
            .map(|t| take(&mut it, t))
            .collect::<Result<Vec<_>>>()?;
        let expect = |n: usize| -> Result<()> {
            if ts.len() == n {
                Ok(())
            } else {
                Err(Error::Header(format!("layer {} declares {} tensors, expected {n}", entry.name, ts.len())))
            }
        };
        let weights = match entry.kind {
            LayerKind::Conv2d { .. } => {
                expect(1)?;
                LayerWeights::Conv { weight: ts[0].clone() }
            }
            LayerKind::BatchNorm { .. } => {
                expect(4)?;
                let (momentum, epsilon) = entry
                    .bn
                    .ok_or_else(|| Error::Header(format!("layer {} lacks batch-norm constants", entry.name)))?;
                let mut it = ts.into_iter();
                let mut next = || it.next().expect("checked count");
                LayerWeights::BatchNorm(BatchNormState {
                    gamma: next(),
                    beta: next(),
                    running_mean: next(),
                    running_var: next(),
                    momentum,
                    epsilon,
                })
            }
            LayerKind::Dense { .. } => {
                expect(2)?;
                let mut it = ts.into_iter();
                LayerWeights::Dense {
                    weight: it.next().expect("checked count"),
                    bias: it.next().expect("checked count"),
                }
            }
            _ => {
                expect(0)?;
                LayerWeights::None
            }
        };
        layers.push(Layer {
            name: entry.name,
            kind: entry.kind,
            trainable: entry.trainable,
            seed: entry.seed,
            in_shape: entry.in_shape,
            out_shape: entry.out_shape,
            weights,
        });
    }
    Ok(ModelSpec {
        layers,
        meta: header.meta,
    })
}

pub fn save_model(model: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_model(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}
