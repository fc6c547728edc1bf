//! Surrogate architectures, baselines, batched prediction and checkpoints.

mod baselines;
mod checkpoint;
mod model;
mod spec;

use thiserror::Error;

use crate::nn::NnError;

pub use baselines::{fit_linear_regression, persistence_baseline};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_FORMAT};
pub use model::{build_model, Mode, SurrogateModel};
pub use spec::{
    ArchitectureSpec, Geometry, Hyperparameters, ModelKind, Stage, DEFAULT_FILTERS, DEFAULT_KERNEL_WIDTH,
    DEFAULT_MLP_DROPOUT, DEFAULT_MLP_HIDDEN, DEFAULT_POOL_WIDTH, DEFAULT_RECURRENT_HIDDEN,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    Spec(String),
    #[error("geometry mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("normal equations are singular with ridge {lambda}; retry with a ridge term > 0")]
    Singular { lambda: f64 },
    #[error("parameters are frozen while the model is in inference mode")]
    Frozen,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
