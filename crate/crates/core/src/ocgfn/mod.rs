//! Outcome-conditioned GFlowNets and their reward-free contrastive pre-training.

mod model;
mod pretrain;
mod replay;

pub use model::{
    conditional_reward, conditioned_rollouts, oc_loss, oc_residuals, CondFlowModel,
    ConditionalFlow, ConstantConditional, OcItem, OcVariant, FAILURE_REWARD,
};
pub use pretrain::{
    conditioned_rollout, fraction, pretrain_step, success_rate, PretrainConfig, PretrainMetrics,
};
pub use replay::{ReplayDataset, Transition};
