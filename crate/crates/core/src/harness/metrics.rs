use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::env::{RewardFn, State, TaskGraph};
use crate::error::{Error, Result};

/// When a terminal state counts as a mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModeRule {
    /// Reward at least the threshold.
    Threshold(f64),
    /// Within `radius` (Hamming) of a center and reward at least `min_reward`.
    NearCenters {
        centers: Vec<Vec<u16>>,
        radius: usize,
        min_reward: f64,
    },
}

impl ModeRule {
    pub fn validate(&self) -> Result<()> {
        let t = match self {
            Self::Threshold(t) => *t,
            Self::NearCenters { min_reward, .. } => *min_reward,
        };
        if !(t > 0.0) {
            return Err(Error::Config(format!(
                "mode threshold must be > 0, got {t}"
            )));
        }
        Ok(())
    }

    pub fn is_mode(&self, x: &State, reward: f64) -> bool {
        match self {
            Self::Threshold(t) => reward >= *t,
            Self::NearCenters {
                centers,
                radius,
                min_reward,
            } => {
                reward >= *min_reward
                    && centers
                        .iter()
                        .any(|c| crate::env::hamming_distance(c, x.cells()) <= *radius)
            }
        }
    }

    /// Number of terminal states satisfying the rule, by enumeration (of the
    /// whole space, or of the Hamming balls around the centers).
    pub fn total_modes(&self, env: &dyn TaskGraph, reward: &dyn RewardFn) -> Result<usize> {
        let candidates: Vec<State> = match self {
            Self::Threshold(_) => env
                .enumerate_terminals(1 << 22)
                .ok_or(Error::CapExceeded { cap: 1 << 22 })?,
            Self::NearCenters {
                centers, radius, ..
            } => {
                let arity: Vec<u16> = env
                    .outcome_ranges(&env.initial_state())
                    .iter()
                    .map(|r| r.end)
                    .collect();
                let mut set = HashSet::new();
                for c in centers {
                    hamming_ball(c, &arity, *radius, &mut set);
                }
                let mut v: Vec<State> = set
                    .into_iter()
                    .map(|cells| State::new(cells, true))
                    .collect();
                v.sort();
                v
            }
        };
        let mut n = 0;
        for x in &candidates {
            if self.is_mode(x, reward.reward(x)?) {
                n += 1;
            }
        }
        Ok(n)
    }
}

fn hamming_ball(center: &[u16], arity: &[u16], radius: usize, out: &mut HashSet<Vec<u16>>) {
    out.insert(center.to_vec());
    if radius == 0 {
        return;
    }
    for pos in 0..center.len() {
        for v in 0..arity[pos] {
            if v != center[pos] {
                let mut c = center.to_vec();
                c[pos] = v;
                hamming_ball(&c, arity, radius - 1, out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub mode_rule: ModeRule,
    pub top_k: usize,
    /// Steps between evaluations.
    pub eval_every: usize,
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        self.mode_rule.validate()?;
        if self.top_k == 0 {
            return Err(Error::Config("top-k needs K >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("evaluation cadence must be positive".into()));
        }
        Ok(())
    }
}

/// Number of distinct modes among the samples.
pub fn count_modes(samples: &[(State, f64)], rule: &ModeRule) -> usize {
    samples
        .iter()
        .filter(|(x, r)| rule.is_mode(x, *r))
        .map(|(x, _)| x)
        .collect::<HashSet<_>>()
        .len()
}

/// Mean reward of the `k` best distinct states.
pub fn top_k_score(samples: &[(State, f64)], k: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::DegenerateSupport("empty sample log".into()));
    }
    let distinct: HashMap<&State, f64> = samples.iter().map(|(x, r)| (x, *r)).collect();
    let mut rewards: Vec<f64> = distinct.into_values().collect();
    rewards.sort_by(|a, b| b.total_cmp(a));
    rewards.truncate(k);
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// Cumulative record of distinct sampled terminals.
#[derive(Clone, Debug, Default)]
pub struct SampleLog {
    seen: HashMap<State, f64>,
    modes: HashSet<State>,
    total: usize,
}

impl SampleLog {
    pub fn record(&mut self, x: &State, reward: f64, rule: &ModeRule) {
        self.total += 1;
        if !self.seen.contains_key(x) {
            self.seen.insert(x.clone(), reward);
            if rule.is_mode(x, reward) {
                self.modes.insert(x.clone());
            }
        }
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn num_distinct(&self) -> usize {
        self.seen.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn top_k(&self, k: usize) -> Option<f64> {
        if self.seen.is_empty() {
            return None;
        }
        let mut rewards: Vec<f64> = self.seen.values().copied().collect();
        rewards.sort_by(|a, b| b.total_cmp(a));
        rewards.truncate(k);
        Some(rewards.iter().sum::<f64>() / rewards.len() as f64)
    }
}
