use std::collections::{HashMap, VecDeque};

use crate::env::{Action, State, TaskGraph};
use crate::error::{Error, Result};

/// Default refusal threshold on the number of edges.
pub const DEFAULT_EDGE_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DagEdge {
    pub src: usize,
    pub dst: usize,
    pub action: Action,
    pub bwd_slot: usize,
}

/// Every state and edge of a task, in topological order (`s_0` first).
#[derive(Clone, Debug)]
pub struct EnumeratedDag {
    states: Vec<State>,
    index: HashMap<State, usize>,
    edges: Vec<DagEdge>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    terminals: Vec<usize>,
    num_actions: usize,
}

impl EnumeratedDag {
    pub fn build(env: &dyn TaskGraph, edge_cap: usize) -> Result<Self> {
        let s0 = env.initial_state();
        let mut found = vec![s0.clone()];
        let mut index = HashMap::from([(s0, 0usize)]);
        let mut raw_edges = Vec::new();
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            let s = found[i].clone();
            if s.is_terminal() {
                continue;
            }
            for (a, child) in env.children(&s)? {
                let j = match index.get(&child) {
                    Some(&j) => j,
                    None => {
                        let j = found.len();
                        index.insert(child.clone(), j);
                        found.push(child.clone());
                        queue.push_back(j);
                        j
                    }
                };
                raw_edges.push(DagEdge {
                    src: i,
                    dst: j,
                    action: a,
                    bwd_slot: env.backward_slot(&child, a),
                });
                if raw_edges.len() > edge_cap {
                    return Err(Error::CapExceeded { cap: edge_cap });
                }
            }
        }
        // Kahn's algorithm, processing ready states in discovery order.
        let n = found.len();
        let mut indegree = vec![0usize; n];
        let mut out_raw = vec![Vec::new(); n];
        for (k, e) in raw_edges.iter().enumerate() {
            indegree[e.dst] += 1;
            out_raw[e.src].push(k);
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        while let Some(i) = ready.pop_front() {
            order.push(i);
            for &k in &out_raw[i] {
                let d = raw_edges[k].dst;
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.push_back(d);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Config("environment graph has a cycle".into()));
        }
        let mut rank = vec![0usize; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        let states: Vec<State> = order.iter().map(|&i| found[i].clone()).collect();
        let index: HashMap<State, usize> = states
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let mut edges: Vec<DagEdge> = raw_edges
            .into_iter()
            .map(|e| DagEdge {
                src: rank[e.src],
                dst: rank[e.dst],
                ..e
            })
            .collect();
        edges.sort_by_key(|e| (e.src, e.action));
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            out_edges[e.src].push(k);
            in_edges[e.dst].push(k);
        }
        let terminals = (0..n).filter(|&i| states[i].is_terminal()).collect();
        Ok(Self {
            states,
            index,
            edges,
            out_edges,
            in_edges,
            terminals,
            num_actions: env.num_actions(),
        })
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &State {
        &self.states[i]
    }

    pub fn index_of(&self, s: &State) -> Result<usize> {
        self.index
            .get(s)
            .copied()
            .ok_or_else(|| Error::MissingTableEntry(s.to_string()))
    }

    pub fn edges(&self) -> &[DagEdge] {
        &self.edges
    }

    pub fn out_edges(&self, i: usize) -> &[usize] {
        &self.out_edges[i]
    }

    pub fn in_edges(&self, i: usize) -> &[usize] {
        &self.in_edges[i]
    }

    /// Terminal state indices in topological order.
    pub fn terminals(&self) -> &[usize] {
        &self.terminals
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Child index of `s` through `action`, if legal.
    pub fn child(&self, s: usize, action: Action) -> Option<usize> {
        self.out_edges[s]
            .iter()
            .map(|&k| &self.edges[k])
            .find(|e| e.action == action)
            .map(|e| e.dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridSpec, GridWorld, SeqSpec, SequenceTask};

    #[test]
    fn grid_counts_and_order() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let dag = EnumeratedDag::build(&env, DEFAULT_EDGE_CAP).unwrap();
        assert_eq!(dag.num_states(), 32);
        assert_eq!(dag.terminals().len(), 16);
        // 16 terminate edges + 2 * 12 increments.
        assert_eq!(dag.edges().len(), 40);
        assert_eq!(dag.state(0), &env.initial_state());
        assert!(dag.edges().iter().all(|e| e.src < e.dst));
    }

    #[test]
    fn cap_refuses() {
        let env = SequenceTask::new(SeqSpec::new(2, 6).unwrap());
        assert!(matches!(
            EnumeratedDag::build(&env, 10),
            Err(Error::CapExceeded { cap: 10 })
        ));
        let dag = EnumeratedDag::build(&env, DEFAULT_EDGE_CAP).unwrap();
        assert_eq!(dag.num_states(), 127);
    }
}
