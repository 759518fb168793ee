use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SeqSpec, SequenceTask, State, TaskGraph};
use crate::error::{Error, Result};

/// Additive constant of the hypergrid reward; also the default reward floor.
pub const REWARD_FLOOR: f64 = 1e-6;

/// A strictly positive reward on terminal states.
pub trait RewardFn: Send + Sync {
    fn reward(&self, x: &State) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    Gridworld,
    LookupTable,
    SyntheticLandscape,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub beta: f64,
    pub floor: f64,
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 1.0) {
            return Err(Error::Config(format!(
                "reward exponent must be >= 1, got {}",
                self.beta
            )));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config(format!(
                "reward floor must be > 0, got {}",
                self.floor
            )));
        }
        Ok(())
    }
}

/// Hypergrid reward with four corner modes (for two dimensions):
/// `0.5 * prod 1[0.25 < |x/H - 0.5|] + 2 * prod 1[0.3 < |x/H - 0.5| < 0.4] + 1e-6`.
pub fn gridworld_reward(x: &State, side: usize) -> Result<f64> {
    if !x.is_terminal() {
        return Err(Error::NotTerminal(x.to_string()));
    }
    let h = side as f64;
    let dev = |c: u16| (c as f64 / h - 0.5).abs();
    let outer = x.cells().iter().all(|&c| 0.25 < dev(c));
    let ring = x.cells().iter().all(|&c| {
        let d = dev(c);
        0.3 < d && d < 0.4
    });
    Ok(0.5 * f64::from(u8::from(outer)) + 2.0 * f64::from(u8::from(ring)) + REWARD_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GridReward {
    side: usize,
    beta: f64,
}

impl GridReward {
    pub fn new(side: usize) -> Self {
        Self { side, beta: 1.0 }
    }

    pub fn with_beta(side: usize, beta: f64) -> Self {
        Self { side, beta }
    }
}

impl RewardFn for GridReward {
    fn reward(&self, x: &State) -> Result<f64> {
        let r = gridworld_reward(x, self.side)?;
        Ok(if self.beta == 1.0 {
            r
        } else {
            r.powf(self.beta)
        })
    }
}

/// Unexponentiated reward surface of a sequence task.
#[derive(Clone, Debug)]
pub enum BaseLandscape {
    Table(HashMap<Vec<u16>, f64>),
    /// `max_c decay^hamming(x, c)` over the mode centers `c`.
    Bumps {
        centers: Vec<Vec<u16>>,
        decay: f64,
    },
}

/// `max(base(x), floor)^beta`.
#[derive(Clone, Debug)]
pub struct SequenceReward {
    base: BaseLandscape,
    beta: f64,
    floor: f64,
}

impl SequenceReward {
    pub fn new(base: BaseLandscape, beta: f64, floor: f64) -> Self {
        Self { base, beta, floor }
    }

    /// Hamming-bump landscape with `num_modes` distinct centers drawn from `seed`.
    pub fn landscape(
        spec: &SeqSpec,
        seed: u64,
        num_modes: usize,
        decay: f64,
        beta: f64,
        floor: f64,
    ) -> Result<Self> {
        if num_modes == 0 || (num_modes as f64) > (spec.vocab_size as f64).powi(spec.length as i32)
        {
            return Err(Error::Config(format!(
                "cannot plant {num_modes} distinct modes"
            )));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!(
                "landscape decay must be in (0,1), got {decay}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut centers = Vec::with_capacity(num_modes);
        while centers.len() < num_modes {
            let c: Vec<u16> = (0..spec.length)
                .map(|_| rng.gen_range(0..spec.vocab_size) as u16)
                .collect();
            if seen.insert(c.clone()) {
                centers.push(c);
            }
        }
        Ok(Self::new(
            BaseLandscape::Bumps { centers, decay },
            beta,
            floor,
        ))
    }

    pub fn centers(&self) -> Option<&[Vec<u16>]> {
        match &self.base {
            BaseLandscape::Bumps { centers, .. } => Some(centers),
            BaseLandscape::Table(_) => None,
        }
    }

    pub fn base(&self, x: &State) -> Result<f64> {
        match &self.base {
            BaseLandscape::Table(table) => table
                .get(x.cells())
                .copied()
                .ok_or_else(|| Error::MissingTableEntry(x.to_string())),
            BaseLandscape::Bumps { centers, decay } => Ok(centers
                .iter()
                .map(|c| decay.powi(hamming_distance(c, x.cells()) as i32))
                .fold(0.0, f64::max)),
        }
    }
}

impl RewardFn for SequenceReward {
    fn reward(&self, x: &State) -> Result<f64> {
        if !x.is_terminal() {
            return Err(Error::NotTerminal(x.to_string()));
        }
        Ok(self.base(x)?.max(self.floor).powf(self.beta))
    }
}

pub fn hamming_distance(a: &[u16], b: &[u16]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Parses `sequence<TAB>value` lines. Blank lines and `#` comments are skipped.
pub fn parse_reward_table(text: &str, task: &SequenceTask) -> Result<HashMap<Vec<u16>, f64>> {
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::TableFormat {
            line: i + 1,
            reason,
        };
        let (seq, value) = line
            .split_once('\t')
            .ok_or_else(|| err("expected sequence<TAB>value".into()))?;
        let state = task.parse(seq.trim()).map_err(|e| err(e.to_string()))?;
        if !state.is_terminal() {
            return Err(err(format!("{seq} is not a complete sequence")));
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| err(format!("bad value {value:?}")))?;
        if !value.is_finite() || value < 0.0 {
            return Err(err(format!(
                "value {value} must be finite and non-negative"
            )));
        }
        table.insert(state.cells().to_vec(), value);
    }
    Ok(table)
}

pub fn load_reward_table(
    path: impl AsRef<Path>,
    task: &SequenceTask,
) -> Result<HashMap<Vec<u16>, f64>> {
    parse_reward_table(&std::fs::read_to_string(path)?, task)
}

/// Renders a table in the `sequence<TAB>value` format.
pub fn format_reward_table<'a>(
    task: &SequenceTask,
    entries: impl IntoIterator<Item = (&'a State, f64)>,
) -> String {
    entries
        .into_iter()
        .map(|(s, v)| format!("{}\t{}\n", task.render(s), v))
        .collect()
}
