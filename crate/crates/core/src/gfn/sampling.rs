use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{outcome_of, Action, Outcome, State, TaskGraph};
use crate::error::{Error, Result};

/// Behavior-policy perturbation: tempered logits mixed with uniform-random
/// legal actions with probability `epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub epsilon: f64,
    pub temperature: f64,
}

impl ExplorationConfig {
    pub fn new(epsilon: f64, temperature: f64) -> Result<Self> {
        let c = Self {
            epsilon,
            temperature,
        };
        c.validate()?;
        Ok(c)
    }

    /// On-policy sampling.
    pub fn off() -> Self {
        Self {
            epsilon: 0.0,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must be in [0,1], got {}",
                self.epsilon
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A complete or partial trajectory `s_0 -> ... -> s_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    /// Behavior-policy log-probability of each action.
    pub log_probs: Vec<f64>,
    /// Intrinsic reward attached to each edge (empty when unused).
    pub intrinsic: Vec<f64>,
}

impl Trajectory {
    pub fn start(s0: State) -> Self {
        Self {
            states: vec![s0],
            actions: vec![],
            log_probs: vec![],
            intrinsic: vec![],
        }
    }

    /// Rebuilds a trajectory from actions, validating each step.
    pub fn from_actions(env: &dyn TaskGraph, actions: &[Action]) -> Result<Self> {
        let mut t = Self::start(env.initial_state());
        for &a in actions {
            let next = env.step(t.terminal(), a)?;
            t.push(a, next, 0.0);
        }
        Ok(t)
    }

    pub fn push(&mut self, action: Action, next: State, log_prob: f64) {
        self.actions.push(action);
        self.states.push(next);
        self.log_probs.push(log_prob);
    }

    /// Number of edges.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Last state reached.
    pub fn terminal(&self) -> &State {
        self.states.last().expect("trajectories hold s_0")
    }

    pub fn is_complete(&self) -> bool {
        self.terminal().is_terminal()
    }

    pub fn outcome(&self) -> Result<Outcome> {
        outcome_of(self.terminal())
    }

    /// Checks that consecutive states are linked by legal actions and that
    /// the trajectory ends in a terminal state.
    pub fn validate(&self, env: &dyn TaskGraph) -> Result<()> {
        if self.states.first() != Some(&env.initial_state()) {
            return Err(Error::Config("trajectory does not start at s_0".into()));
        }
        for (k, &a) in self.actions.iter().enumerate() {
            if env.step(&self.states[k], a)? != self.states[k + 1] {
                return Err(Error::IllegalAction {
                    state: env.render(&self.states[k]),
                    action: a,
                });
            }
        }
        if !self.is_complete() {
            return Err(Error::NotTerminal(env.render(self.terminal())));
        }
        Ok(())
    }
}

/// A forward policy over a batch of states.
pub trait ForwardPolicy {
    /// Log-probabilities per forward slot, one row per state; illegal slots `-inf`.
    fn log_probs(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Array2<f64>>;
}

/// Draws an action from policy log-probabilities under the exploration
/// settings. Returns the action and its behavior log-probability.
pub fn draw_action(
    log_p: &[f64],
    legal: &[bool],
    explore: &ExplorationConfig,
    rng: &mut impl Rng,
) -> Result<(Action, f64)> {
    let n_legal = legal.iter().filter(|l| **l).count();
    if n_legal == 0 {
        return Err(Error::DegenerateSupport("no legal action".into()));
    }
    let inv_t = 1.0 / explore.temperature;
    let max = log_p
        .iter()
        .zip(legal)
        .filter(|(_, &l)| l)
        .map(|(&v, _)| v * inv_t)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = log_p
        .iter()
        .zip(legal)
        .map(|(&v, &l)| {
            if l && max > f64::NEG_INFINITY {
                (v * inv_t - max).exp()
            } else {
                0.0
            }
        })
        .collect();
    let z: f64 = probs.iter().sum();
    let uniform = 1.0 / n_legal as f64;
    for (p, &l) in probs.iter_mut().zip(legal) {
        let policy = if z > 0.0 {
            *p / z
        } else if l {
            uniform
        } else {
            0.0
        };
        *p = if l {
            (1.0 - explore.epsilon) * policy + explore.epsilon * uniform
        } else {
            0.0
        };
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = None;
    for (a, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        chosen = Some(a);
        if u < acc {
            break;
        }
    }
    let a = chosen.expect("at least one action has mass");
    Ok((a, probs[a].ln()))
}

/// Rolls out `n` trajectories in lock-step. `policy` receives the indices of
/// the still-active trajectories together with their current states.
pub fn rollout_batch<R, P>(
    env: &dyn TaskGraph,
    n: usize,
    explore: &ExplorationConfig,
    rng: &mut R,
    mut policy: P,
) -> Result<Vec<Trajectory>>
where
    R: Rng,
    P: FnMut(&[usize], &[&State]) -> Result<Array2<f64>>,
{
    explore.validate()?;
    let mut trajs: Vec<Trajectory> = (0..n)
        .map(|_| Trajectory::start(env.initial_state()))
        .collect();
    let limit = env.max_trajectory_len();
    for _ in 0..limit {
        let active: Vec<usize> = (0..n).filter(|&i| !trajs[i].is_complete()).collect();
        if active.is_empty() {
            break;
        }
        let log_p = {
            let states: Vec<&State> = active.iter().map(|&i| trajs[i].terminal()).collect();
            policy(&active, &states)?
        };
        for (row, &i) in active.iter().enumerate() {
            let s = trajs[i].terminal().clone();
            let legal = env.forward_mask(&s);
            let (a, lp) = draw_action(log_p.row(row).as_slice().unwrap(), &legal, explore, rng)?;
            let next = env.step(&s, a)?;
            trajs[i].push(a, next, lp);
        }
    }
    debug_assert!(trajs.iter().all(Trajectory::is_complete));
    Ok(trajs)
}

/// Samples `n` trajectories from a forward policy.
pub fn sample_trajectories(
    policy: &dyn ForwardPolicy,
    env: &dyn TaskGraph,
    n: usize,
    explore: &ExplorationConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    rollout_batch(env, n, explore, rng, |_, states| {
        policy.log_probs(env, states)
    })
}

pub fn sample_trajectory(
    policy: &dyn ForwardPolicy,
    env: &dyn TaskGraph,
    explore: &ExplorationConfig,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    Ok(sample_trajectories(policy, env, 1, explore, rng)?.remove(0))
}
