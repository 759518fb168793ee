//! Minimal differentiable feedforward approximator.

mod adam;
mod checkpoint;
mod gradcheck;
mod heads;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{NetCheckpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Objective};
pub use heads::{log_softmax_grad, masked_log_softmax};
pub use mlp::{Activation, Dense, ForwardCache, Gradients, Mlp, LEAKY_SLOPE};
