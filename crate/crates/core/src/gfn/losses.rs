//! Scalar balance residuals and per-trajectory losses.

use super::flow::{log_add_exp, FlowEval, FlowFunctions};
use super::sampling::Trajectory;
use crate::env::TaskGraph;
use crate::error::{Error, Result};

fn finite_prob(log_p: f64, what: &str) -> Result<f64> {
    if log_p == f64::NEG_INFINITY {
        Err(Error::ZeroProbability(what.to_string()))
    } else {
        Ok(log_p)
    }
}

/// `log F(s) + log P_F(s'|s) - log F(s') - log P_B(s|s')`.
pub fn db_residual(log_flow: f64, log_pf: f64, log_flow_next: f64, log_pb: f64) -> Result<f64> {
    let log_pf = finite_prob(log_pf, "forward transition")?;
    let log_pb = finite_prob(log_pb, "backward transition")?;
    Ok(log_flow + log_pf - log_flow_next - log_pb)
}

/// Detailed-balance residual of one edge. Edges into a terminal state use
/// `terminal_log_reward` in place of the destination flow.
pub fn db_edge_residual(
    src: &FlowEval,
    action: usize,
    dst: &FlowEval,
    bwd_slot: usize,
    terminal_log_reward: Option<f64>,
) -> Result<f64> {
    db_residual(
        src.log_flow,
        src.log_pf[action],
        terminal_log_reward.unwrap_or(dst.log_flow),
        dst.log_pb[bwd_slot],
    )
}

/// Augmented detailed balance `F(s)P_F(s'|s) = F(s')P_B(s|s') + r_i`, compared
/// in log space: `log F(s)P_F - log(F(s')P_B + r_i)`.
pub fn gafn_residual(
    log_flow: f64,
    log_pf: f64,
    log_flow_next: f64,
    log_pb: f64,
    intrinsic: f64,
) -> Result<f64> {
    if !(intrinsic >= 0.0) {
        return Err(Error::Config(format!(
            "intrinsic reward must be >= 0, got {intrinsic}"
        )));
    }
    if intrinsic == 0.0 {
        if log_flow_next + log_pb == f64::NEG_INFINITY {
            return Err(Error::ZeroProbability(
                "both right-hand terms vanish".into(),
            ));
        }
        return db_residual(log_flow, log_pf, log_flow_next, log_pb);
    }
    let log_pf = finite_prob(log_pf, "forward transition")?;
    let rhs = log_add_exp(log_flow_next + log_pb, intrinsic.ln());
    if rhs == f64::NEG_INFINITY {
        return Err(Error::ZeroProbability(
            "both right-hand terms vanish".into(),
        ));
    }
    Ok(log_flow + log_pf - rhs)
}

/// `(log Z + sum log P_F - log R(x) - sum log P_B)^2`.
pub fn tb_loss(log_z: f64, sum_log_pf: f64, reward: f64, sum_log_pb: f64) -> Result<f64> {
    if !(reward > 0.0) {
        return Err(Error::NonPositiveReward(reward));
    }
    let d = log_z + sum_log_pf - reward.ln() - sum_log_pb;
    Ok(d * d)
}

/// Mean squared detailed-balance residual over a trajectory.
pub fn db_loss(
    model: &dyn FlowFunctions,
    env: &dyn TaskGraph,
    traj: &Trajectory,
    reward: f64,
) -> Result<f64> {
    if !(reward > 0.0) {
        return Err(Error::NonPositiveReward(reward));
    }
    let states: Vec<_> = traj.states.iter().collect();
    let evals = model.evaluate(env, &states)?;
    let n = traj.len();
    let mut total = 0.0;
    for k in 0..n {
        let dst = &traj.states[k + 1];
        let boundary = dst.is_terminal().then(|| reward.ln());
        let slot = env.backward_slot(dst, traj.actions[k]);
        let d = db_edge_residual(&evals[k], traj.actions[k], &evals[k + 1], slot, boundary)?;
        total += d * d;
    }
    Ok(total / n as f64)
}

/// Trajectory-balance loss of a complete trajectory under `model`'s policies.
pub fn trajectory_tb_loss(
    model: &dyn FlowFunctions,
    log_z: f64,
    env: &dyn TaskGraph,
    traj: &Trajectory,
    reward: f64,
) -> Result<f64> {
    let states: Vec<_> = traj.states.iter().collect();
    let evals = model.evaluate(env, &states)?;
    let mut sum_pf = 0.0;
    let mut sum_pb = 0.0;
    for (k, &a) in traj.actions.iter().enumerate() {
        let slot = env.backward_slot(&traj.states[k + 1], a);
        sum_pf += finite_prob(evals[k].log_pf[a], "forward transition")?;
        sum_pb += finite_prob(evals[k + 1].log_pb[slot], "backward transition")?;
    }
    tb_loss(log_z, sum_pf, reward, sum_pb)
}
