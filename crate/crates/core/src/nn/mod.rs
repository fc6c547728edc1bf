//! Tensor arithmetic and a tape-based reverse-mode differentiation engine.
//!
//! All layer primitives operate on a leading batch axis. Rank-reduced inputs
//! (a single vector for `dense`, a single `[T, F]` matrix for `conv1d`) are
//! treated as a batch of one and the output keeps the caller's rank.

pub(crate) mod gemm;
pub mod gradcheck;
pub mod layers;
mod param;
mod tape;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::gradient_check;
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{Gradients, LstmWeights, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: empty output ({detail})")]
    EmptyOutput { op: &'static str, detail: String },
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("numeric instability: {0}")]
    NumericInstability(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            // NaN passes through so non-finite values are not masked
            Activation::Relu => {
                if z > 0.0 || z.is_nan() {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the activation's output `y`.
    /// relu'(0) is 0.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
