//! Exact dynamic programs over enumerated task DAGs, used as ground truth
//! for flows, conversion policies and sampling distributions.

mod dag;
mod exact;

pub use dag::{DagEdge, EnumeratedDag, DEFAULT_EDGE_CAP};
pub use exact::{
    capture_conditional, capture_forward, check_amortized_optimum, check_conversion_match,
    check_mc_consistency, check_reachability, check_reward_scale, empirical_distribution,
    exact_conversion_policy, exact_terminal_distribution, l1_distance, log_sum_exp,
    numerator_edge_probs, reward_distribution, terminal_log_mass, uniform_backward,
    AnalyticConditional, AnalyticFlow, OracleReport, ScaledReward, TerminalDistribution,
};
