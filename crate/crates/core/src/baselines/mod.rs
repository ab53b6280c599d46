//! Supervised comparators: Gaussian-process classification on flattened
//! images and a CNN sharing the discriminator's architecture.

mod cnn;
mod gp;

pub use cnn::{cnn_predict, cnn_train_supervised};
pub use gp::{
    cholesky_with_jitter, gp_fit_laplace, gp_predict, gp_select_hyperparameters, kernel_matrix, se_kernel, GpHyper,
    GpModel,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("labels must be -1 or +1, found {0}")]
    BadLabel(f64),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("cholesky factorization failed even with jitter 1e-6")]
    Cholesky,
    #[error("gp model format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
