use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{conditional_reward, CondFlowModel, OcItem, OcVariant};
use super::replay::ReplayDataset;
use crate::env::{State, TaskGraph};
use crate::error::{Error, Result};
use crate::gfn::{ExplorationConfig, GafnModel, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub explore: ExplorationConfig,
    pub variant: OcVariant,
    pub failure_reward: f64,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.explore.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.failure_reward > 0.0 && self.failure_reward < 1.0) {
            return Err(Error::Config(format!(
                "failure reward must be in (0,1), got {}",
                self.failure_reward
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainMetrics {
    /// Loss of the relabeled phase (absent when contrast is disabled).
    pub positive_loss: Option<f64>,
    pub negative_loss: f64,
    pub gafn_loss: f64,
    pub rnd_loss: f64,
    /// Conditioned rollouts that reached their target.
    pub successes: usize,
    pub batch: usize,
}

impl PretrainMetrics {
    pub fn success_fraction(&self) -> f64 {
        self.successes as f64 / self.batch.max(1) as f64
    }
}

/// One reward-free pre-training iteration: explore, relabel, contrast,
/// update the explorer and its novelty model, and store the exploration batch.
pub fn pretrain_step(
    cond: &mut CondFlowModel,
    gafn: &mut GafnModel,
    env: &dyn TaskGraph,
    replay: &mut ReplayDataset,
    config: &PretrainConfig,
    rng: &mut impl Rng,
) -> Result<PretrainMetrics> {
    let teleport = config.variant.teleports();
    let mut positive = gafn.sample(env, config.batch_size, &config.explore, rng)?;
    gafn.attach_intrinsic(env, &mut positive)?;
    let targets: Vec<&State> = positive.iter().map(Trajectory::terminal).collect();

    let positive_loss = if config.variant.contrastive() {
        let items: Vec<OcItem<'_>> = positive
            .iter()
            .map(|t| OcItem {
                traj: t,
                outcome: t.terminal(),
                reward: 1.0,
            })
            .collect();
        Some(cond.update(env, &items, teleport)?)
    } else {
        None
    };

    let negative = cond.rollouts(env, &targets, &config.explore, rng)?;
    let rewards: Vec<f64> = negative
        .iter()
        .zip(&targets)
        .map(|(t, y)| conditional_reward(t.terminal(), y, config.failure_reward))
        .collect();
    let successes = rewards.iter().filter(|&&r| r == 1.0).count();
    let items: Vec<OcItem<'_>> = negative
        .iter()
        .zip(&targets)
        .zip(&rewards)
        .map(|((t, y), &reward)| OcItem {
            traj: t,
            outcome: y,
            reward,
        })
        .collect();
    let negative_loss = cond.update(env, &items, teleport)?;

    let refs: Vec<&Trajectory> = positive.iter().collect();
    let gafn_loss = gafn.update(env, &refs)?;
    let rnd_loss = gafn.update_rnd(env, &refs)?;
    for t in positive {
        replay.push(t)?;
    }
    Ok(PretrainMetrics {
        positive_loss,
        negative_loss,
        gafn_loss,
        rnd_loss,
        successes,
        batch: config.batch_size,
    })
}

/// Single conditioned rollout towards `y`.
pub fn conditioned_rollout(
    model: &CondFlowModel,
    y: &State,
    env: &dyn TaskGraph,
    explore: &ExplorationConfig,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    Ok(model.rollouts(env, &[y], explore, rng)?.remove(0))
}

/// Fraction of on-policy conditioned rollouts (no exploration noise) that
/// end exactly at their target, `trials` rollouts per outcome.
pub fn success_rate(
    model: &CondFlowModel,
    outcomes: &[State],
    env: &dyn TaskGraph,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if outcomes.is_empty() || trials == 0 {
        return Err(Error::Config(
            "success rate needs outcomes and trials".into(),
        ));
    }
    let targets: Vec<&State> = outcomes
        .iter()
        .flat_map(|y| std::iter::repeat(y).take(trials))
        .collect();
    let mut hits = 0usize;
    for chunk in targets.chunks(256) {
        let trajs = model.rollouts(env, chunk, &ExplorationConfig::off(), rng)?;
        hits += trajs
            .iter()
            .zip(chunk)
            .filter(|(t, y)| t.terminal() == **y)
            .count();
    }
    Ok(fraction(hits, targets.len()))
}

pub fn fraction(hits: usize, total: usize) -> f64 {
    hits as f64 / total as f64
}
