//! Differentiable layers used by DenseNet and the classification head.
//! Each op is a method on [`Tape`](crate::tensor::Tape) with its own
//! backward rule.

mod activation;
mod conv;
mod linear;
mod loss;
mod norm;
mod pool;

pub use activation::{dropout_mask, DropoutSpec};
pub use conv::conv_output_size;
pub use loss::softmax_rows;
pub use norm::{BatchNormState, BatchStats, BN_EPSILON, BN_MOMENTUM};
pub use pool::PoolKind;

use serde::{Deserialize, Serialize};

/// Train mode uses batch statistics and live dropout; eval mode uses
/// running statistics and makes dropout the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
