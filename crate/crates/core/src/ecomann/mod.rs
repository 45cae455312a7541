//! The implicit-function network, its losses, training and projection.

mod loss;
mod model;
mod project;
mod train;

pub use loss::{
    alignment_from_jacobian, grad_fraction, grad_norm, grad_reflection, grad_similar,
    loss_alignment, loss_fraction, loss_norm, loss_reflection, loss_similar, FRACTION_DELTA,
};
pub use model::{load_model, save_model, DenseLayer, Gradients, MlpModel, Trace, HIDDEN_DIMS};
pub use project::{damped_step, project, ProjectionParams, ProjectionResult};
pub use train::{
    common_frames, prepare, train, train_prepared, Ablation, LossWeights, Prepared, TrainConfig, TrainOutput,
};
