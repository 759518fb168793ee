use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{State, TaskGraph};
use crate::error::{Error, Result};
use crate::gfn::{
    check_loss, edge_balance_loss, evaluate_rows, EdgeBatch, ExplorationConfig, FlowEval,
    HeadLayout, NetSpec, RowBatch, Trajectory,
};
use crate::nn::{Adam, Mlp, NetCheckpoint};

/// Conditional reward for a missed target; the log-domain loss needs it positive.
pub const FAILURE_REWARD: f64 = 1e-8;

/// Conditional flows and policies `F(s|y)`, `P_F(.|s,y)`, `P_B(.|s,y)`.
pub trait ConditionalFlow {
    fn evaluate_pairs(
        &self,
        env: &dyn TaskGraph,
        pairs: &[(&State, &State)],
    ) -> Result<Vec<FlowEval>>;

    /// Forward log-probabilities, one row per pair.
    fn forward_log_probs(
        &self,
        env: &dyn TaskGraph,
        pairs: &[(&State, &State)],
    ) -> Result<Array2<f64>> {
        let evals = self.evaluate_pairs(env, pairs)?;
        let width = env.num_actions();
        let mut out = Array2::zeros((pairs.len(), width));
        for (i, e) in evals.iter().enumerate() {
            out.row_mut(i)
                .iter_mut()
                .zip(&e.log_pf)
                .for_each(|(o, v)| *o = *v);
        }
        Ok(out)
    }
}

/// `R(x|y)`: 1 on success, the failure floor otherwise.
pub fn conditional_reward(x: &State, y: &State, failure: f64) -> f64 {
    if x == y {
        1.0
    } else {
        failure
    }
}

/// Where the conditional reward enters the balance constraints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcVariant {
    /// Reward on every edge, relabeled positive phase plus on-policy negative phase.
    Full,
    /// Reward only on the terminal edge.
    NoTeleport,
    /// Reward only on the terminal edge and no relabeled positive phase.
    NoTeleportNoContrast,
}

impl OcVariant {
    pub fn teleports(self) -> bool {
        self == Self::Full
    }

    pub fn contrastive(self) -> bool {
        self != Self::NoTeleportNoContrast
    }
}

/// One conditional training example.
#[derive(Clone, Copy, Debug)]
pub struct OcItem<'a> {
    pub traj: &'a Trajectory,
    pub outcome: &'a State,
    pub reward: f64,
}

/// Outcome-conditioned network over `enc(s) ++ enc(y)`.
#[derive(Clone, Debug)]
pub struct CondFlowModel {
    net: Mlp,
    adam: Adam,
    layout: HeadLayout,
}

impl CondFlowModel {
    pub fn new(env: &dyn TaskGraph, spec: &NetSpec, rng: &mut impl Rng) -> Self {
        let layout = HeadLayout::for_env(env);
        let (mut net, adam) = spec.build(2 * env.encoding_dim(), layout.width(), rng);
        net.zero_outputs(layout.bwd());
        Self { net, adam, layout }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn layout(&self) -> HeadLayout {
        self.layout
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.config.lr = lr;
    }

    pub fn checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint::capture(&self.net, Some(&self.adam))
    }

    pub fn restore(env: &dyn TaskGraph, ckpt: NetCheckpoint) -> Result<Self> {
        let (net, adam) = ckpt.restore()?;
        let layout = HeadLayout::for_env(env);
        if net.input_dim() != 2 * env.encoding_dim() || net.output_dim() != layout.width() {
            return Err(Error::Checkpoint(
                "conditional network does not fit the task".into(),
            ));
        }
        let adam = adam.unwrap_or_else(|| Adam::for_net(Default::default(), &net));
        Ok(Self { net, adam, layout })
    }

    /// Edge terms of the conditional objective for a batch of examples.
    pub fn edge_batch(
        env: &dyn TaskGraph,
        items: &[OcItem<'_>],
        teleport: bool,
    ) -> Result<EdgeBatch> {
        let trajs: Vec<&Trajectory> = items.iter().map(|it| it.traj).collect();
        let outcomes: Vec<&State> = items.iter().map(|it| it.outcome).collect();
        let mut batch = EdgeBatch::from_trajectories(env, &trajs, Some(&outcomes));
        for it in items {
            if !(it.reward > 0.0) {
                return Err(Error::NonPositiveReward(it.reward));
            }
        }
        for (e, &(i, k)) in batch.edges.iter_mut().zip(&batch.origin) {
            let log_r = items[i].reward.ln();
            let terminal_edge = items[i].traj.states[k + 1].is_terminal();
            if teleport {
                e.log_scale = log_r;
                if terminal_edge {
                    e.dst_log_flow = Some(0.0);
                }
            } else if terminal_edge {
                e.dst_log_flow = Some(log_r);
            }
        }
        Ok(batch)
    }

    /// One Adam step on the mean squared conditional edge residual.
    pub fn update(
        &mut self,
        env: &dyn TaskGraph,
        items: &[OcItem<'_>],
        teleport: bool,
    ) -> Result<f64> {
        if items.is_empty() {
            return Ok(0.0);
        }
        let batch = Self::edge_batch(env, items, teleport)?;
        let (loss, grads) = edge_balance_loss(&self.net, self.layout, &batch.rows, &batch.edges)?;
        check_loss(loss, "conditional balance")?;
        self.adam.step(&mut self.net, &grads)?;
        Ok(loss)
    }

    /// Rolls out `P_F(.|., y_i)` for every target.
    pub fn rollouts(
        &self,
        env: &dyn TaskGraph,
        targets: &[&State],
        explore: &ExplorationConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<Trajectory>> {
        conditioned_rollouts(self, env, targets, explore, rng)
    }

    /// On-policy rollouts of any conditional model.
    pub fn rollouts_with(
        env: &dyn TaskGraph,
        cond: &dyn ConditionalFlow,
        targets: &[&State],
        rng: &mut impl Rng,
    ) -> Result<Vec<Trajectory>> {
        conditioned_rollouts(cond, env, targets, &ExplorationConfig::off(), rng)
    }
}

impl ConditionalFlow for CondFlowModel {
    fn evaluate_pairs(
        &self,
        env: &dyn TaskGraph,
        pairs: &[(&State, &State)],
    ) -> Result<Vec<FlowEval>> {
        let rows = RowBatch::build(env, pairs.iter().map(|(s, y)| (*s, Some(*y))), true);
        let heads = evaluate_rows(&self.net, self.layout, &rows)?;
        Ok((0..pairs.len()).map(|i| heads.eval(i)).collect())
    }

    fn forward_log_probs(
        &self,
        env: &dyn TaskGraph,
        pairs: &[(&State, &State)],
    ) -> Result<Array2<f64>> {
        let rows = RowBatch::build(env, pairs.iter().map(|(s, y)| (*s, Some(*y))), true);
        Ok(evaluate_rows(&self.net, self.layout, &rows)?.log_pf)
    }
}

/// Rolls out `P_F(.|., y_i)` of `cond` for every target in lock-step.
pub fn conditioned_rollouts(
    cond: &dyn ConditionalFlow,
    env: &dyn TaskGraph,
    targets: &[&State],
    explore: &ExplorationConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    crate::gfn::rollout_batch(env, targets.len(), explore, rng, |active, states| {
        let pairs: Vec<(&State, &State)> = active
            .iter()
            .zip(states)
            .map(|(&i, s)| (*s, targets[i]))
            .collect();
        cond.forward_log_probs(env, &pairs)
    })
}

/// Per-edge residuals `log F(s|y) + log P_F - log F(s'|y) - log P_B - log R(x|y)`
/// with `F(x|y) = 1` at the terminal.
pub fn oc_residuals(
    model: &dyn ConditionalFlow,
    env: &dyn TaskGraph,
    traj: &Trajectory,
    y: &State,
    reward: f64,
) -> Result<Vec<f64>> {
    if !(reward > 0.0) {
        return Err(Error::NonPositiveReward(reward));
    }
    let pairs: Vec<(&State, &State)> = traj.states.iter().map(|s| (s, y)).collect();
    let evals = model.evaluate_pairs(env, &pairs)?;
    let log_r = reward.ln();
    (0..traj.len())
        .map(|k| {
            let dst = &traj.states[k + 1];
            let a = traj.actions[k];
            let slot = env.backward_slot(dst, a);
            let pf = evals[k].log_pf[a];
            let pb = evals[k + 1].log_pb[slot];
            if pf == f64::NEG_INFINITY || pb == f64::NEG_INFINITY {
                return Err(Error::ZeroProbability(format!(
                    "edge {k} of {}",
                    env.render(dst)
                )));
            }
            let next = if dst.is_terminal() {
                0.0
            } else {
                evals[k + 1].log_flow
            };
            Ok(evals[k].log_flow + pf - next - pb - log_r)
        })
        .collect()
}

/// Sum over edges of the squared teleported residual.
pub fn oc_loss(
    model: &dyn ConditionalFlow,
    env: &dyn TaskGraph,
    traj: &Trajectory,
    y: &State,
    reward: f64,
) -> Result<f64> {
    Ok(oc_residuals(model, env, traj, y, reward)?
        .iter()
        .map(|d| d * d)
        .sum())
}

/// A conditional model returning fixed values, for hand-checked examples.
#[derive(Clone, Debug)]
pub struct ConstantConditional {
    pub log_flow: f64,
    pub log_pf: Vec<f64>,
    pub log_pb: Vec<f64>,
}

impl ConditionalFlow for ConstantConditional {
    fn evaluate_pairs(
        &self,
        env: &dyn TaskGraph,
        pairs: &[(&State, &State)],
    ) -> Result<Vec<FlowEval>> {
        Ok(pairs
            .iter()
            .map(|(s, _)| {
                let fwd = env.forward_mask(s);
                let bwd = env.backward_mask(s);
                FlowEval {
                    log_flow: self.log_flow,
                    log_pf: self
                        .log_pf
                        .iter()
                        .zip(&fwd)
                        .map(|(&v, &l)| if l { v } else { f64::NEG_INFINITY })
                        .collect(),
                    log_pb: self
                        .log_pb
                        .iter()
                        .zip(&bwd)
                        .map(|(&v, &l)| if l { v } else { f64::NEG_INFINITY })
                        .collect(),
                }
            })
            .collect())
    }
}
