use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, State, TaskGraph};
use crate::error::{Error, Result};

/// Hypergrid dimensions: `side` cells along each of `ndim` axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side: usize,
    pub ndim: usize,
}

impl GridSpec {
    pub fn new(side: usize, ndim: usize) -> Result<Self> {
        if side < 4 {
            return Err(Error::Config(format!("grid side must be >= 4, got {side}")));
        }
        if ndim < 1 {
            return Err(Error::Config("grid needs at least one dimension".into()));
        }
        if side > u16::MAX as usize {
            return Err(Error::Config(format!("grid side {side} too large")));
        }
        Ok(Self { side, ndim })
    }
}

/// Monotone hypergrid: each step increments one coordinate or terminates.
///
/// Forward slots `0..ndim` increment the matching coordinate; slot `ndim`
/// terminates. Backward slot `d` undoes an increment of dimension `d`;
/// terminal states have a single parent through backward slot 0.
#[derive(Clone, Debug)]
pub struct GridWorld {
    spec: GridSpec,
}

impl GridWorld {
    pub fn new(spec: GridSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn terminate_action(&self) -> Action {
        self.spec.ndim
    }

    pub fn cell(&self, coords: &[u16], terminal: bool) -> State {
        State::new(coords.to_vec(), terminal)
    }

    fn index_of(&self, s: &State) -> usize {
        s.cells()
            .iter()
            .fold(0, |acc, &c| acc * self.spec.side + c as usize)
    }
}

impl TaskGraph for GridWorld {
    fn initial_state(&self) -> State {
        State::new(vec![0; self.spec.ndim], false)
    }

    fn num_actions(&self) -> usize {
        self.spec.ndim + 1
    }

    fn num_backward_actions(&self) -> usize {
        self.spec.ndim
    }

    fn step(&self, s: &State, action: Action) -> Result<State> {
        let legal = self.forward_mask(s);
        if !legal.get(action).copied().unwrap_or(false) {
            return Err(Error::IllegalAction {
                state: s.to_string(),
                action,
            });
        }
        if action == self.spec.ndim {
            return Ok(s.with_terminal(true));
        }
        let mut next = s.clone();
        next.cells[action] += 1;
        Ok(next)
    }

    fn forward_mask(&self, s: &State) -> Vec<bool> {
        let mut mask = vec![false; self.num_actions()];
        if s.is_terminal() {
            return mask;
        }
        for (d, &c) in s.cells().iter().enumerate() {
            mask[d] = (c as usize) + 1 < self.spec.side;
        }
        mask[self.spec.ndim] = true;
        mask
    }

    fn backward_mask(&self, s: &State) -> Vec<bool> {
        let mut mask = vec![false; self.num_backward_actions()];
        if s.is_terminal() {
            mask[0] = true;
            return mask;
        }
        for (d, &c) in s.cells().iter().enumerate() {
            mask[d] = c > 0;
        }
        mask
    }

    fn backward_slot(&self, child: &State, action: Action) -> usize {
        if child.is_terminal() {
            0
        } else {
            action
        }
    }

    fn parents(&self, s: &State) -> Result<Vec<(State, Action)>> {
        if s.is_terminal() {
            return Ok(vec![(s.with_terminal(false), self.terminate_action())]);
        }
        if s.cells().iter().all(|&c| c == 0) {
            return Err(Error::InitialState);
        }
        Ok(s.cells()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(d, _)| {
                let mut p = s.clone();
                p.cells[d] -= 1;
                (p, d)
            })
            .collect())
    }

    fn encoding_dim(&self) -> usize {
        self.spec.ndim * self.spec.side + 1
    }

    fn encode_into(&self, s: &State, out: &mut [f64]) {
        out.fill(0.0);
        for (d, &c) in s.cells().iter().enumerate() {
            out[d * self.spec.side + c as usize] = 1.0;
        }
        if s.is_terminal() {
            out[self.spec.ndim * self.spec.side] = 1.0;
        }
    }

    fn max_trajectory_len(&self) -> usize {
        self.spec.ndim * (self.spec.side - 1) + 1
    }

    fn num_terminals(&self) -> f64 {
        (self.spec.side as f64).powi(self.spec.ndim as i32)
    }

    fn enumerate_terminals(&self, cap: usize) -> Option<Vec<State>> {
        if self.num_terminals() > cap as f64 {
            return None;
        }
        let n = self.num_terminals() as usize;
        Some(
            (0..n)
                .map(|mut idx| {
                    let mut cells = vec![0u16; self.spec.ndim];
                    for d in (0..self.spec.ndim).rev() {
                        cells[d] = (idx % self.spec.side) as u16;
                        idx /= self.spec.side;
                    }
                    State::new(cells, true)
                })
                .collect(),
        )
    }

    fn random_terminal(&self, rng: &mut dyn rand::RngCore) -> State {
        let cells = (0..self.spec.ndim)
            .map(|_| rng.gen_range(0..self.spec.side) as u16)
            .collect();
        State::new(cells, true)
    }

    fn outcome_ranges(&self, s: &State) -> Vec<std::ops::Range<u16>> {
        let side = self.spec.side as u16;
        s.cells()
            .iter()
            .map(|&c| if s.is_terminal() { c..c + 1 } else { c..side })
            .collect()
    }

    fn mutate_terminal(&self, x: &State, rng: &mut dyn rand::RngCore) -> State {
        let mut next = x.clone();
        let d = rng.gen_range(0..self.spec.ndim);
        next.cells[d] = rng.gen_range(0..self.spec.side) as u16;
        next
    }
}

impl GridWorld {
    /// Row-major index of a cell, used by flat categorical outcome heads.
    pub fn outcome_index(&self, s: &State) -> usize {
        self.index_of(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(side: usize) -> GridWorld {
        GridWorld::new(GridSpec::new(side, 2).unwrap())
    }

    #[test]
    fn children_of_interior_cell() {
        let g = grid(16);
        let kids = g.children(&State::new(vec![3, 5], false)).unwrap();
        assert_eq!(
            kids,
            vec![
                (0, State::new(vec![4, 5], false)),
                (1, State::new(vec![3, 6], false)),
                (2, State::new(vec![3, 5], true)),
            ]
        );
    }

    #[test]
    fn corner_only_terminates() {
        let g = grid(16);
        let kids = g.children(&State::new(vec![15, 15], false)).unwrap();
        assert_eq!(kids, vec![(2, State::new(vec![15, 15], true))]);
    }

    #[test]
    fn terminal_has_no_children() {
        let g = grid(16);
        assert!(matches!(
            g.children(&State::new(vec![3, 5], true)),
            Err(Error::TerminalState(_))
        ));
    }

    #[test]
    fn parents_invert_increments() {
        let g = grid(16);
        let ps = g.parents(&State::new(vec![4, 5], false)).unwrap();
        assert_eq!(
            ps,
            vec![
                (State::new(vec![3, 5], false), 0),
                (State::new(vec![4, 4], false), 1)
            ]
        );
        let ps = g.parents(&State::new(vec![3, 5], true)).unwrap();
        assert_eq!(ps, vec![(State::new(vec![3, 5], false), 2)]);
        assert!(matches!(
            g.parents(&g.initial_state()),
            Err(Error::InitialState)
        ));
    }

    #[test]
    fn parent_child_duality_exhaustive() {
        for side in 4..=8 {
            let g = grid(side);
            for x in g.enumerate_terminals(usize::MAX).unwrap() {
                for s in [x.with_terminal(false), x.clone()] {
                    if s == g.initial_state() {
                        continue;
                    }
                    let ps = g.parents(&s).unwrap();
                    let bmask = g.backward_mask(&s);
                    assert_eq!(bmask.iter().filter(|b| **b).count(), ps.len());
                    for (p, a) in ps {
                        assert_eq!(g.step(&p, a).unwrap(), s);
                        assert!(bmask[g.backward_slot(&s, a)]);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_small_side() {
        assert!(GridSpec::new(3, 2).is_err());
        assert!(GridSpec::new(4, 0).is_err());
    }

    #[test]
    fn encoding_is_one_hot() {
        let g = grid(4);
        let e = g.encode(&State::new(vec![1, 3], true));
        assert_eq!(e, vec![0., 1., 0., 0., 0., 0., 0., 1., 1.]);
    }
}
