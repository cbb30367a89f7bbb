use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNormState, BatchStats, DropoutSpec, Mode, PoolKind};
use crate::tensor::{Tape, Tensor, Var};

use super::config::{DenseNetConfig, HeadConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    /// Channel-concatenates the input of layer `from` with the current
    /// activation.
    Concat {
        from: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Dropout {
        rate: f32,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights {
    None,
    Conv { weight: Tensor<f32> },
    BatchNorm(BatchNormState),
    Dense { weight: Tensor<f32>, bias: Tensor<f32> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub trainable: bool,
    /// Seed the weights were initialized from.
    pub seed: u64,
    /// Per-sample shapes: `[C, H, W]` or `[features]`.
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub weights: LayerWeights,
}

impl Layer {
    /// Learnable tensors, in declared order.
    pub fn params(&self) -> Vec<&Tensor<f32>> {
        match &self.weights {
            LayerWeights::None => vec![],
            LayerWeights::Conv { weight } => vec![weight],
            LayerWeights::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            LayerWeights::Dense { weight, bias } => vec![weight, bias],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        match &mut self.weights {
            LayerWeights::None => vec![],
            LayerWeights::Conv { weight } => vec![weight],
            LayerWeights::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            LayerWeights::Dense { weight, bias } => vec![weight, bias],
        }
    }

    /// Every stored tensor (parameters, then running statistics).
    pub fn tensors(&self) -> Vec<&Tensor<f32>> {
        let mut all = self.params();
        if let LayerWeights::BatchNorm(bn) = &self.weights {
            all.push(&bn.running_mean);
            all.push(&bn.running_var);
        }
        all
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        match &mut self.weights {
            LayerWeights::None => vec![],
            LayerWeights::Conv { weight } => vec![weight],
            LayerWeights::BatchNorm(bn) => vec![
                &mut bn.gamma,
                &mut bn.beta,
                &mut bn.running_mean,
                &mut bn.running_var,
            ],
            LayerWeights::Dense { weight, bias } => vec![weight, bias],
        }
    }

    pub fn tensor_names(&self) -> &'static [&'static str] {
        match self.weights {
            LayerWeights::None => &[],
            LayerWeights::Conv { .. } => &["weight"],
            LayerWeights::BatchNorm(_) => &["gamma", "beta", "running_mean", "running_var"],
            LayerWeights::Dense { .. } => &["weight", "bias"],
        }
    }
}

/// One row of the backbone's shape trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub backbone: Option<DenseNetConfig>,
    pub head: Option<HeadConfig>,
    pub seed: u64,
    /// Layers `0..backbone_len` form the feature extractor.
    pub backbone_len: usize,
    pub trace: Vec<StageTrace>,
    pub class_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<Layer>,
    pub meta: ModelMeta,
}

/// A trainable parameter as registered on the tape for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBinding {
    pub layer: usize,
    pub slot: usize,
    pub var: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    pub layer: usize,
    pub stats: BatchStats,
}

/// Result of [`ModelSpec::forward`]. Running-statistics updates are
/// returned rather than applied, so a forward pass never mutates the model.
#[derive(Debug)]
pub struct ForwardPass {
    pub logits: Var,
    pub params: Vec<ParamBinding>,
    pub bn_updates: Vec<BnUpdate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
}

impl ModelSpec {
    pub fn input_shape(&self) -> &[usize] {
        self.layers.first().map(|l| l.in_shape.as_slice()).unwrap_or(&[])
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map(|l| l.out_shape.as_slice()).unwrap_or(&[])
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self.output_shape() {
            [k] => Some(*k),
            _ => None,
        }
    }

    /// Channel counts after the stem and after every block/transition.
    pub fn channel_trace(&self) -> Vec<usize> {
        self.meta
            .trace
            .iter()
            .filter(|s| s.stage != "input" && s.stage != "stem_conv")
            .map(|s| s.channels)
            .collect()
    }

    /// Spatial height at every traced stage, including the input.
    pub fn spatial_trace(&self) -> Vec<usize> {
        self.meta.trace.iter().map(|s| s.height).collect()
    }

    /// Trainable parameters in the order [`ModelSpec::forward`] binds them.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        self.layers
            .iter_mut()
            .filter(|l| l.trainable)
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn trainable_param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .filter(|l| l.trainable)
            .flat_map(|l| l.params())
            .map(|t| t.shape().to_vec())
            .collect()
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            if let LayerWeights::BatchNorm(bn) = &mut self.layers[u.layer].weights {
                bn.update_running(&u.stats);
            }
        }
    }

    /// Runs the network on `input` (`N×C×H×W`). In train mode, trainable
    /// layers bind their parameters as gradient leaves, trainable batch-norm
    /// layers use batch statistics and dropout draws masks from `rng`.
    /// Frozen layers always behave as in eval mode.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<f32>,
        input: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardPass> {
        if self.layers.is_empty() {
            return Err(Error::Invalid("forward on an empty model".into()));
        }
        let mut inputs: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut params = Vec::new();
        let mut bn_updates = Vec::new();
        let mut cur = input;
        for (li, layer) in self.layers.iter().enumerate() {
            inputs.push(cur);
            let learn = mode == Mode::Train && layer.trainable;
            let mut bind = |tape: &mut Tape<f32>, slot: usize, t: &Tensor<f32>| {
                if learn {
                    let var = tape.param(t.clone());
                    params.push(ParamBinding { layer: li, slot, var });
                    var
                } else {
                    tape.constant(t.clone())
                }
            };
            let at = |e: Error| match e {
                Error::Shape { op, detail } => Error::Shape {
                    op,
                    detail: format!("layer {li} ({}): {detail}", layer.name),
                },
                other => other,
            };
            cur = match (&layer.kind, &layer.weights) {
                (LayerKind::Conv2d { stride, pad, .. }, LayerWeights::Conv { weight }) => {
                    let w = bind(tape, 0, weight);
                    tape.conv2d(cur, w, *stride, *pad).map_err(at)?
                }
                (LayerKind::BatchNorm { .. }, LayerWeights::BatchNorm(bn)) => {
                    let g = bind(tape, 0, &bn.gamma);
                    let b = bind(tape, 1, &bn.beta);
                    if learn {
                        let (y, stats) = tape.batch_norm_train(cur, g, b, bn.epsilon).map_err(at)?;
                        bn_updates.push(BnUpdate { layer: li, stats });
                        y
                    } else {
                        tape.batch_norm_eval(
                            cur,
                            g,
                            b,
                            bn.running_mean.data(),
                            bn.running_var.data(),
                            bn.epsilon,
                        )
                        .map_err(at)?
                    }
                }
                (LayerKind::Relu, _) => tape.relu(cur)?,
                (LayerKind::MaxPool { kernel, stride, pad }, _) => {
                    tape.pool2d(cur, PoolKind::Max, *kernel, *stride, *pad).map_err(at)?
                }
                (LayerKind::AvgPool { kernel, stride }, _) => {
                    tape.pool2d(cur, PoolKind::Avg, *kernel, *stride, 0).map_err(at)?
                }
                (LayerKind::GlobalAvgPool, _) => tape.global_avg_pool(cur).map_err(at)?,
                (LayerKind::Concat { from }, _) => {
                    let skip = *inputs
                        .get(*from)
                        .ok_or_else(|| Error::Invalid(format!("layer {li} concatenates future layer {from}")))?;
                    tape.concat_channels(&[skip, cur]).map_err(at)?
                }
                (LayerKind::Dense { .. }, LayerWeights::Dense { weight, bias }) => {
                    let w = bind(tape, 0, weight);
                    let b = bind(tape, 1, bias);
                    tape.dense(cur, w, b).map_err(at)?
                }
                (LayerKind::Dropout { rate }, _) => {
                    let spec = DropoutSpec::new(*rate, mode)?;
                    tape.dropout(cur, spec, rng)?
                }
                (kind, _) => {
                    return Err(Error::Invalid(format!(
                        "layer {li} ({}) has weights that do not match {kind:?}",
                        layer.name
                    )))
                }
            };
        }
        Ok(ForwardPass {
            logits: cur,
            params,
            bn_updates,
        })
    }

    /// Eval-mode forward of a batch, returning the final activations.
    pub fn infer(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = self.forward(&mut tape, x, Mode::Eval, &mut no_rng)?;
        Ok(tape.value(out.logits).clone())
    }
}

/// Marks every layer in `range` (all parameters included) as frozen.
pub fn freeze_base(model: &mut ModelSpec, range: Range<usize>) -> Result<()> {
    if model.layers.is_empty() {
        return Err(Error::Invalid("cannot freeze an empty model".into()));
    }
    if range.start > range.end || range.end > model.layers.len() {
        return Err(Error::Invalid(format!(
            "freeze range {range:?} outside model of {} layers",
            model.layers.len()
        )));
    }
    for layer in &mut model.layers[range] {
        layer.trainable = false;
    }
    Ok(())
}

/// Trainable parameters and total stored scalars (including running
/// statistics).
pub fn param_count(model: &ModelSpec) -> ParamCount {
    let mut c = ParamCount { trainable: 0, total: 0 };
    for layer in &model.layers {
        let p: usize = layer.params().iter().map(|t| t.len()).sum();
        if layer.trainable {
            c.trainable += p;
        }
        c.total += layer.tensors().iter().map(|t| t.len()).sum::<usize>();
    }
    c
}
