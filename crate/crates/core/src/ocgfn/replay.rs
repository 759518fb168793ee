use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, State, TaskGraph};
use crate::error::{Error, Result};
use crate::gfn::Trajectory;

/// Bounded FIFO pool of complete explorer trajectories.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayDataset {
    capacity: usize,
    trajs: VecDeque<Trajectory>,
    pushed: u64,
}

/// A single transition `s --a--> s'`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub src: State,
    pub action: Action,
    pub dst: State,
}

impl ReplayDataset {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            trajs: VecDeque::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
        })
    }

    pub fn push(&mut self, t: Trajectory) -> Result<()> {
        if !t.is_complete() {
            return Err(Error::NotTerminal(t.terminal().to_string()));
        }
        if self.trajs.len() == self.capacity {
            self.trajs.pop_front();
        }
        self.trajs.push_back(t);
        self.pushed += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of trajectories ever pushed.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajs.iter()
    }

    /// Distinct terminal states in sorted order.
    pub fn outcomes(&self) -> Vec<State> {
        self.trajs
            .iter()
            .map(|t| t.terminal().clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Uniform transitions drawn from uniformly chosen stored trajectories.
    pub fn sample_transitions(&self, n: usize, rng: &mut impl Rng) -> Vec<Transition> {
        if self.trajs.is_empty() {
            return vec![];
        }
        (0..n)
            .map(|_| {
                let t = &self.trajs[rng.gen_range(0..self.trajs.len())];
                let k = rng.gen_range(0..t.len());
                Transition {
                    src: t.states[k].clone(),
                    action: t.actions[k],
                    dst: t.states[k + 1].clone(),
                }
            })
            .collect()
    }

    pub fn sample_trajectories(&self, n: usize, rng: &mut impl Rng) -> Vec<&Trajectory> {
        let all: Vec<&Trajectory> = self.trajs.iter().collect();
        (0..n).filter_map(|_| all.choose(rng).copied()).collect()
    }

    /// Checks the stored trajectories against `env`.
    pub fn validate(&self, env: &dyn TaskGraph) -> Result<()> {
        self.trajs.iter().try_for_each(|t| t.validate(env))
    }
}
