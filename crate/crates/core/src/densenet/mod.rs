//! DenseNet backbones, the classification head, freezing and model files.
//!
//! A model is a flat, ordered list of layers. Dense connectivity is
//! expressed by `Concat { from }` layers, which join the input of layer
//! `from` (the start of a dense unit) with the current activation.

mod builder;
mod config;
mod io;
mod model;

pub use builder::{build_backbone, build_dense_block, build_head, build_model, build_transition};
pub use config::{Activation, DenseNetConfig, HeadConfig};
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use model::{
    freeze_base, param_count, BnUpdate, ForwardPass, Layer, LayerKind, LayerWeights, ModelMeta,
    ModelSpec, ParamBinding, ParamCount, StageTrace,
};
