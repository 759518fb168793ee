//! Metropolis-Hastings sampling over terminal states.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{RewardFn, State, TaskGraph};
use crate::error::{Error, Result};

/// `min(1, R(x') / R(x))`.
pub fn acceptance_probability(proposed: f64, current: f64) -> Result<f64> {
    if !(proposed > 0.0) {
        return Err(Error::NonPositiveReward(proposed));
    }
    if !(current > 0.0) {
        return Err(Error::NonPositiveReward(current));
    }
    Ok((proposed / current).min(1.0))
}

/// One Metropolis-Hastings chain with single-site symmetric proposals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcChain {
    pub current: State,
    pub current_reward: f64,
    pub steps: u64,
    pub accepted: u64,
}

impl McmcChain {
    pub fn new(x: State, reward: &dyn RewardFn) -> Result<Self> {
        let r = reward.reward(&x)?;
        if !(r > 0.0) {
            return Err(Error::NonPositiveReward(r));
        }
        Ok(Self {
            current: x,
            current_reward: r,
            steps: 0,
            accepted: 0,
        })
    }

    pub fn random(env: &dyn TaskGraph, reward: &dyn RewardFn, rng: &mut impl Rng) -> Result<Self> {
        Self::new(env.random_terminal(rng), reward)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }
}

/// Proposes a mutation of the current state and accepts it with the
/// Metropolis ratio. Returns whether the proposal was accepted.
pub fn mh_step(
    chain: &mut McmcChain,
    env: &dyn TaskGraph,
    reward: &dyn RewardFn,
    rng: &mut impl Rng,
) -> Result<bool> {
    let proposal = env.mutate_terminal(&chain.current, rng);
    let r = reward.reward(&proposal)?;
    let a = acceptance_probability(r, chain.current_reward)?;
    chain.steps += 1;
    let accept = a >= 1.0 || rng.gen::<f64>() < a;
    if accept {
        chain.current = proposal;
        chain.current_reward = r;
        chain.accepted += 1;
    }
    Ok(accept)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainRun {
    /// Post-burn-in states with their rewards.
    pub samples: Vec<(State, f64)>,
    pub acceptance_rate: f64,
}

/// Runs one chain from a uniformly random start for `steps` transitions and
/// logs the states after `burn_in`.
pub fn run_chain(
    env: &dyn TaskGraph,
    reward: &dyn RewardFn,
    steps: usize,
    burn_in: usize,
    rng: &mut impl Rng,
) -> Result<ChainRun> {
    if burn_in > steps {
        return Err(Error::Config(format!(
            "burn-in {burn_in} exceeds {steps} steps"
        )));
    }
    let mut chain = McmcChain::random(env, reward, rng)?;
    let mut samples = Vec::with_capacity(steps - burn_in);
    for t in 0..steps {
        mh_step(&mut chain, env, reward, rng)?;
        if t >= burn_in {
            samples.push((chain.current.clone(), chain.current_reward));
        }
    }
    Ok(ChainRun {
        samples,
        acceptance_rate: chain.acceptance_rate(),
    })
}

/// Parallel chains advanced in lock-step; `on_round` sees every chain's
/// state after each round.
pub fn run_chains(
    env: &dyn TaskGraph,
    reward: &dyn RewardFn,
    chains: usize,
    rounds: usize,
    rng: &mut impl Rng,
    mut on_round: impl FnMut(usize, &[McmcChain]),
) -> Result<Vec<McmcChain>> {
    let mut all: Vec<McmcChain> = (0..chains)
        .map(|_| McmcChain::random(env, reward, rng))
        .collect::<Result<_>>()?;
    for round in 0..rounds {
        for c in all.iter_mut() {
            mh_step(c, env, reward, rng)?;
        }
        on_round(round, &all);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BaseLandscape, SeqSpec, SequenceReward, SequenceTask};
    use crate::oracle::{empirical_distribution, l1_distance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn acceptance_examples() {
        assert_eq!(acceptance_probability(2.0, 1.0).unwrap(), 1.0);
        assert_eq!(acceptance_probability(1.0, 2.0).unwrap(), 0.5);
        assert_eq!(acceptance_probability(3.0, 3.0).unwrap(), 1.0);
        assert_eq!(
            acceptance_probability(10.0, 20.0).unwrap(),
            acceptance_probability(1.0, 2.0).unwrap()
        );
        assert!(acceptance_probability(0.0, 1.0).is_err());
    }

    fn toy() -> (SequenceTask, SequenceReward) {
        let env = SequenceTask::new(SeqSpec::new(5, 1).unwrap());
        let table: HashMap<Vec<u16>, f64> =
            (0..5u16).map(|i| (vec![i], f64::from(i + 1))).collect();
        (
            env,
            SequenceReward::new(BaseLandscape::Table(table), 1.0, 1e-6),
        )
    }

    #[test]
    fn uniform_reward_always_accepts() {
        let env = SequenceTask::new(SeqSpec::new(3, 2).unwrap());
        let table: HashMap<Vec<u16>, f64> = env
            .enumerate_terminals(9)
            .unwrap()
            .into_iter()
            .map(|x| (x.cells().to_vec(), 0.3))
            .collect();
        let r = SequenceReward::new(BaseLandscape::Table(table), 1.0, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = run_chain(&env, &r, 500, 0, &mut rng).unwrap();
        assert_eq!(run.acceptance_rate, 1.0);
    }

    #[test]
    fn burn_in_equal_to_steps_logs_nothing() {
        let (env, r) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(run_chain(&env, &r, 10, 10, &mut rng)
            .unwrap()
            .samples
            .is_empty());
        assert!(run_chain(&env, &r, 10, 11, &mut rng).is_err());
    }

    #[test]
    fn converges_to_reward_distribution() {
        let (env, r) = toy();
        let support = env.enumerate_terminals(5).unwrap();
        let target: Vec<f64> = (1..=5).map(|i| i as f64 / 15.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let run = run_chain(&env, &r, 100_000, 0, &mut rng).unwrap();
        let emp = empirical_distribution(&support, run.samples.iter().map(|(x, _)| x)).unwrap();
        assert!(l1_distance(&emp, &target).unwrap() < 0.05);
    }
}
