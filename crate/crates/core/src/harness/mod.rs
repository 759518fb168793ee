//! Experiment orchestration: configuration, metrics and phase runners.

mod config;
mod metrics;
mod run;

pub use config::{FinetuneModel, Phase, RunConfig, TaskKind, OUTPUT_ROOT_VAR};
pub use metrics::{count_modes, top_k_score, MetricsConfig, ModeRule, SampleLog};
pub use run::{
    eval_outcomes, eval_rng, metrics_path, read_metrics, run_phase, sample_terminals, MetricsRow,
    MetricsWriter, PhaseSummary, PretrainArtifact, SeedSummary, ARTIFACT_FORMAT, ARTIFACT_VERSION,
};
