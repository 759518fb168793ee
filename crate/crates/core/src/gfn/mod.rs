//! Unconditional GFlowNets: detailed and trajectory balance, and the
//! intrinsically motivated explorer used for reward-free pre-training.

mod flow;
mod losses;
mod model;
mod rnd;
mod sampling;

pub(crate) use flow::log_add_exp;
pub use flow::{
    edge_balance_loss, edge_balance_value, evaluate_rows, trajectory_balance_loss,
    trajectory_balance_value, EdgeBatch, EdgeTerm, FlowEval, FlowFunctions, HeadLayout, HeadValues,
    NetSpec, RowBatch, TbTerm,
};
pub use losses::{
    db_edge_residual, db_loss, db_residual, gafn_residual, tb_loss, trajectory_tb_loss,
};
pub(crate) use model::check_loss;
pub use model::{FlowModel, GafnModel, TbModel};
pub use rnd::RndPair;
pub use sampling::{
    draw_action, rollout_batch, sample_trajectories, sample_trajectory, ExplorationConfig,
    ForwardPolicy, Trajectory,
};
