//! Conditional diffusion: schedule coefficients, the `x₀`-predicting denoiser,
//! the identity-aware training loss and its exact gradient, training, and
//! checkpoints.

mod checkpoint;
mod denoiser;
mod loss;
mod schedule;
mod train;

use thiserror::Error;

pub use checkpoint::{fnv1a_hex, Checkpoint, CheckpointError};
pub use denoiser::{time_features, Architecture, Denoiser, DenoiserParams, FnDenoiser, ForwardCache, PosteriorMeanDenoiser};
pub use loss::{
    batch_loss_gradient, loss_and_gradient_at, loss_at, loss_gradient, LossBreakdown, LossConfig, LossDraw,
    TrainingExample,
};
pub use schedule::{lambda_kappa_at, prior_kl, DiffusionSchedule};
pub use train::{draw_example, eval_set, evaluate, train, write_log, Adam, LogRow, OptimConfig, TrainConfig, TrainError, TrainReport};


use crate::sphere::SphereError;
use crate::toyworld::WorldError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid diffusion configuration: {0}")]
    Config(String),
    #[error("step {t} outside {min}..={max}")]
    Index { t: usize, min: usize, max: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite value: {0}")]
    Numerical(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

impl From<SphereError> for DiffusionError {
    fn from(e: SphereError) -> Self {
        DiffusionError::World(WorldError::Sphere(e))
    }
}
