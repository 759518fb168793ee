//! DAG-structured generation environments and their reward functions.
//!
//! Every environment is a pure value type: a [`TaskGraph`] maps states to
//! their legal children/parents, encodes states as network inputs and
//! enumerates its terminal space when that is small enough to be useful.

mod grid;
mod reward;
mod sequence;

pub use grid::{GridSpec, GridWorld};
pub use reward::{
    format_reward_table, gridworld_reward, hamming_distance, load_reward_table, parse_reward_table,
    BaseLandscape, GridReward, RewardFn, RewardKind, RewardSpec, SequenceReward, REWARD_FLOOR,
};
pub use sequence::{Alphabet, SeqSpec, SequenceTask};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Index of a forward action slot.
pub type Action = usize;

/// A node of the generation DAG.
///
/// For grids `cells` holds one coordinate per dimension; for sequences it
/// holds the symbols generated so far.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    cells: Vec<u16>,
    terminal: bool,
}

impl State {
    pub fn new(cells: Vec<u16>, terminal: bool) -> Self {
        Self { cells, terminal }
    }

    pub fn cells(&self) -> &[u16] {
        &self.cells
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub(crate) fn with_terminal(&self, terminal: bool) -> Self {
        Self {
            cells: self.cells.clone(),
            terminal,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.cells.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")?;
        if self.terminal {
            write!(f, "*")?;
        }
        Ok(())
    }
}

/// A conditioning target. Outcomes are terminal states under the identity map.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Outcome(State);

impl Outcome {
    pub fn state(&self) -> &State {
        &self.0
    }

    pub fn into_state(self) -> State {
        self.0
    }
}

impl PartialEq<State> for Outcome {
    fn eq(&self, other: &State) -> bool {
        &self.0 == other
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Identity outcome map `f`.
pub fn outcome_of(x: &State) -> Result<Outcome> {
    if !x.is_terminal() {
        return Err(Error::NotTerminal(x.to_string()));
    }
    Ok(Outcome(x.clone()))
}

/// An enumerable DAG environment.
pub trait TaskGraph: Send + Sync {
    fn initial_state(&self) -> State;

    /// Number of forward action slots (policy head width).
    fn num_actions(&self) -> usize;

    /// Number of backward slots (backward policy head width).
    fn num_backward_actions(&self) -> usize;

    /// Applies a forward action.
    fn step(&self, s: &State, action: Action) -> Result<State>;

    /// Legality mask over forward slots. All-false for terminal states.
    fn forward_mask(&self, s: &State) -> Vec<bool>;

    /// Legality mask over backward slots. All-false for the initial state.
    fn backward_mask(&self, s: &State) -> Vec<bool>;

    /// Backward slot of the edge reaching `child` through forward `action`.
    fn backward_slot(&self, child: &State, action: Action) -> usize;

    fn parents(&self, s: &State) -> Result<Vec<(State, Action)>>;

    fn encoding_dim(&self) -> usize;

    fn encode_into(&self, s: &State, out: &mut [f64]);

    /// Upper bound on the number of edges of any complete trajectory.
    fn max_trajectory_len(&self) -> usize;

    /// Number of terminal states (as f64; may be astronomically large).
    fn num_terminals(&self) -> f64;

    /// All terminal states in a fixed order, if there are at most `cap`.
    fn enumerate_terminals(&self, cap: usize) -> Option<Vec<State>>;

    /// Draws a terminal state uniformly at random.
    fn random_terminal(&self, rng: &mut dyn rand::RngCore) -> State;

    /// Single-site symmetric mutation of a terminal state (used by MCMC).
    fn mutate_terminal(&self, x: &State, rng: &mut dyn rand::RngCore) -> State;

    /// Per outcome component, the values still reachable from `s`. The set of
    /// outcomes reachable from `s` is the product of these ranges.
    fn outcome_ranges(&self, s: &State) -> Vec<Range<u16>>;

    fn render(&self, s: &State) -> String {
        s.to_string()
    }

    /// Whether terminal `x` is a descendant of (or equal to) `s`.
    fn reaches(&self, s: &State, x: &State) -> bool {
        x.is_terminal()
            && x.cells().len() == self.outcome_ranges(s).len()
            && self
                .outcome_ranges(s)
                .iter()
                .zip(x.cells())
                .all(|(r, c)| r.contains(c))
    }

    fn is_terminal(&self, s: &State) -> bool {
        s.is_terminal()
    }

    fn children(&self, s: &State) -> Result<Vec<(Action, State)>> {
        if s.is_terminal() {
            return Err(Error::TerminalState(self.render(s)));
        }
        self.forward_mask(s)
            .iter()
            .enumerate()
            .filter(|(_, legal)| **legal)
            .map(|(a, _)| Ok((a, self.step(s, a)?)))
            .collect()
    }

    fn encode(&self, s: &State) -> Vec<f64> {
        let mut out = vec![0.0; self.encoding_dim()];
        self.encode_into(s, &mut out);
        out
    }

    fn enumerate_outcomes(&self, cap: usize) -> Option<Vec<Outcome>> {
        self.enumerate_terminals(cap)
            .map(|xs| xs.into_iter().map(Outcome).collect())
    }
}

/// Outcome with the given components.
pub fn outcome_from_cells(cells: Vec<u16>) -> Outcome {
    Outcome(State::new(cells, true))
}
