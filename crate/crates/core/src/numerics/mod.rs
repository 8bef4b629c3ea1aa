//! Minimal reverse-mode autodiff over dense arrays, plus the layers,
//! distributions, optimizer, special functions, and checkpointing the rest
//! of the crate is built on.

pub mod checkpoint;
pub mod distributions;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod special;
pub mod tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("digamma domain error: x must be > 0, got {0}")]
    DigammaDomain(f64),
    #[error("input is not a probability vector (sum = {0})")]
    NotNormalized(f64),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub use distributions::{bernoulli_entropy, categorical_sample_st, entropy_categorical, gaussian_sample};
pub use gradcheck::{check_param_gradients, GradCheckReport};
pub use layers::{GruCell, Mlp};
pub use optim::{AdamConfig, ParamSet};
pub use special::digamma;
pub use tensor::{log_softmax_vec, no_grad, softmax_vec, Tensor};
