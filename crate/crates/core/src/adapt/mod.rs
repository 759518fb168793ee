//! Downstream adaptation of a frozen conditional model: exact or Monte-Carlo
//! conversion and the amortized numerator/outcome-sampler pair.

mod finetune;
mod mc;
mod numerator;
mod sampler;

pub use finetune::{
    amortized_loss, amortized_residual, finetune_step, Amortized, AmortizedBatch, AmortizedExample,
    FinetuneConfig, FinetuneMetrics,
};
pub use mc::{conversion_numerators, mc_policy, normalize_log, OutcomeSource, ENUMERATION_LIMIT};
pub use numerator::{extract_policy, Numerator, NumeratorNet, NumeratorTable};
pub use sampler::{OutcomeSamplerNet, QRows, SamplerKind};
