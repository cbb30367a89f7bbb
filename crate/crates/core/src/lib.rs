//! DenseNet transfer-learning engine: a small reverse-mode tensor library,
//! the layers DenseNet needs, a configurable backbone/head builder, the
//! Adam/SGD/RMSprop update rules, an image data pipeline, classification
//! metrics and a sweep-capable experiment harness.
//!
//! Layout is row-major NCHW throughout.

pub mod container;
pub mod data;
pub mod densenet;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod par;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Real, Tape, Tensor, Var};
