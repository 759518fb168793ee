use std::collections::HashMap;
use std::fmt;

use super::dag::EnumeratedDag;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapt::{
    conversion_numerators, extract_policy, mc_policy, normalize_log, Numerator, NumeratorTable,
    OutcomeSource,
};
use crate::env::{RewardFn, State, TaskGraph};
use crate::error::{Error, Result};
use crate::gfn::{log_add_exp, FlowEval, FlowFunctions, ForwardPolicy};
use crate::ocgfn::ConditionalFlow;

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(f64::NEG_INFINITY, log_add_exp)
}

/// Log forward probability of every DAG edge under an unconditional policy.
pub fn capture_forward(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    policy: &dyn ForwardPolicy,
) -> Result<Vec<f64>> {
    capture_rows(dag, |states| policy.log_probs(env, states))
}

/// Log forward probability of every DAG edge under `P_F(.|., y)`.
pub fn capture_conditional(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    cond: &dyn ConditionalFlow,
    y: &State,
) -> Result<Vec<f64>> {
    capture_rows(dag, |states| {
        let pairs: Vec<(&State, &State)> = states.iter().map(|s| (*s, y)).collect();
        cond.forward_log_probs(env, &pairs)
    })
}

fn capture_rows(
    dag: &EnumeratedDag,
    mut rows: impl FnMut(&[&State]) -> Result<ndarray::Array2<f64>>,
) -> Result<Vec<f64>> {
    let sources: Vec<usize> = (0..dag.num_states())
        .filter(|&i| !dag.state(i).is_terminal())
        .collect();
    let mut out = vec![f64::NEG_INFINITY; dag.edges().len()];
    for chunk in sources.chunks(4096) {
        let states: Vec<&State> = chunk.iter().map(|&i| dag.state(i)).collect();
        let lp = rows(&states)?;
        for (r, &i) in chunk.iter().enumerate() {
            for &k in dag.out_edges(i) {
                out[k] = lp[(r, dag.edges()[k].action)];
            }
        }
    }
    Ok(out)
}

/// Unnormalized log mass reaching each terminal (in `dag.terminals()` order).
pub fn terminal_log_mass(dag: &EnumeratedDag, edge_log_probs: &[f64]) -> Result<Vec<f64>> {
    if edge_log_probs.len() != dag.edges().len() {
        return Err(Error::Shape {
            what: "edge probabilities",
            expected: dag.edges().len(),
            got: edge_log_probs.len(),
        });
    }
    let mut mass = vec![f64::NEG_INFINITY; dag.num_states()];
    mass[0] = 0.0;
    for i in 0..dag.num_states() {
        if mass[i] == f64::NEG_INFINITY {
            continue;
        }
        for &k in dag.out_edges(i) {
            let d = dag.edges()[k].dst;
            mass[d] = log_add_exp(mass[d], mass[i] + edge_log_probs[k]);
        }
    }
    Ok(dag.terminals().iter().map(|&t| mass[t]).collect())
}

/// Exact distribution over terminal states induced by a forward policy.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalDistribution {
    pub states: Vec<State>,
    pub probs: Vec<f64>,
}

impl TerminalDistribution {
    pub fn prob_of(&self, x: &State) -> Option<f64> {
        self.states
            .iter()
            .position(|s| s == x)
            .map(|i| self.probs[i])
    }
}

pub fn exact_terminal_distribution(
    dag: &EnumeratedDag,
    edge_log_probs: &[f64],
) -> Result<TerminalDistribution> {
    let log_mass = terminal_log_mass(dag, edge_log_probs)?;
    let probs = normalize_log(&log_mass)?;
    Ok(TerminalDistribution {
        states: dag
            .terminals()
            .iter()
            .map(|&t| dag.state(t).clone())
            .collect(),
        probs,
    })
}

/// Uniform backward policy: `-ln |parents(dst)|` per edge.
pub fn uniform_backward(dag: &EnumeratedDag) -> Vec<f64> {
    dag.edges()
        .iter()
        .map(|e| -(dag.in_edges(e.dst).len() as f64).ln())
        .collect()
}

/// Flows solving the balance constraints exactly for given terminal flows:
/// `F(s) = sum_{s'} F(s') P_B(s|s')` and `P_F(s'|s) = F(s') P_B(s|s') / F(s)`.
#[derive(Clone, Debug)]
pub struct AnalyticFlow<'a> {
    dag: &'a EnumeratedDag,
    log_flow: Vec<f64>,
    edge_log_pf: Vec<f64>,
    edge_log_pb: Vec<f64>,
}

impl<'a> AnalyticFlow<'a> {
    /// `terminal_log_flow` follows `dag.terminals()` order.
    pub fn balanced(
        dag: &'a EnumeratedDag,
        terminal_log_flow: &[f64],
        edge_log_pb: Vec<f64>,
    ) -> Result<Self> {
        if terminal_log_flow.len() != dag.terminals().len() {
            return Err(Error::Shape {
                what: "terminal flows",
                expected: dag.terminals().len(),
                got: terminal_log_flow.len(),
            });
        }
        let mut log_flow = vec![f64::NEG_INFINITY; dag.num_states()];
        for (&t, &f) in dag.terminals().iter().zip(terminal_log_flow) {
            log_flow[t] = f;
        }
        for i in (0..dag.num_states()).rev() {
            if dag.state(i).is_terminal() {
                continue;
            }
            log_flow[i] = log_sum_exp(
                dag.out_edges(i)
                    .iter()
                    .map(|&k| log_flow[dag.edges()[k].dst] + edge_log_pb[k]),
            );
        }
        let mut edge_log_pf = vec![f64::NEG_INFINITY; dag.edges().len()];
        for (k, e) in dag.edges().iter().enumerate() {
            edge_log_pf[k] = if log_flow[e.src] == f64::NEG_INFINITY {
                -(dag.out_edges(e.src).len() as f64).ln()
            } else {
                log_flow[e.dst] + edge_log_pb[k] - log_flow[e.src]
            };
        }
        Ok(Self {
            dag,
            log_flow,
            edge_log_pf,
            edge_log_pb,
        })
    }

    pub fn log_flow(&self) -> &[f64] {
        &self.log_flow
    }

    pub fn edge_log_pf(&self) -> &[f64] {
        &self.edge_log_pf
    }

    pub fn edge_log_pb(&self) -> &[f64] {
        &self.edge_log_pb
    }

    fn eval(&self, env: &dyn TaskGraph, s: &State) -> Result<FlowEval> {
        let i = self.dag.index_of(s)?;
        let mut log_pf = vec![f64::NEG_INFINITY; env.num_actions()];
        for &k in self.dag.out_edges(i) {
            log_pf[self.dag.edges()[k].action] = self.edge_log_pf[k];
        }
        let mut log_pb = vec![f64::NEG_INFINITY; env.num_backward_actions()];
        for &k in self.dag.in_edges(i) {
            log_pb[self.dag.edges()[k].bwd_slot] = self.edge_log_pb[k];
        }
        Ok(FlowEval {
            log_flow: self.log_flow[i],
            log_pf,
            log_pb,
        })
    }
}

impl FlowFunctions for AnalyticFlow<'_> {
    fn evaluate(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Vec<FlowEval>> {
        states.iter().map(|s| self.eval(env, s)).collect()
    }
}

impl ForwardPolicy for AnalyticFlow<'_> {
    fn log_probs(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<ndarray::Array2<f64>> {
        let mut out =
            ndarray::Array2::from_elem((states.len(), env.num_actions()), f64::NEG_INFINITY);
        for (r, s) in states.iter().enumerate() {
            let i = self.dag.index_of(s)?;
            for &k in self.dag.out_edges(i) {
                out[(r, self.dag.edges()[k].action)] = self.edge_log_pf[k];
            }
        }
        Ok(out)
    }
}

/// Exactly balanced conditional flows with indicator terminal rewards
/// (one [`AnalyticFlow`] per outcome, uniform backward policy).
#[derive(Clone, Debug)]
pub struct AnalyticConditional<'a> {
    dag: &'a EnumeratedDag,
    outcome_index: HashMap<State, usize>,
    flows: Vec<AnalyticFlow<'a>>,
}

impl<'a> AnalyticConditional<'a> {
    pub fn indicator(dag: &'a EnumeratedDag) -> Result<Self> {
        let pb = uniform_backward(dag);
        let n = dag.terminals().len();
        let mut flows = Vec::with_capacity(n);
        let mut outcome_index = HashMap::with_capacity(n);
        for j in 0..n {
            let terminal: Vec<f64> = (0..n)
                .map(|t| if t == j { 0.0 } else { f64::NEG_INFINITY })
                .collect();
            flows.push(AnalyticFlow::balanced(dag, &terminal, pb.clone())?);
            outcome_index.insert(dag.state(dag.terminals()[j]).clone(), j);
        }
        Ok(Self {
            dag,
            outcome_index,
            flows,
        })
    }

    pub fn flow_for(&self, y: &State) -> Result<&AnalyticFlow<'a>> {
        self.outcome_index
            .get(y)
            .map(|&j| &self.flows[j])
            .ok_or_else(|| Error::MissingTableEntry(y.to_string()))
    }

    pub fn dag(&self) -> &'a EnumeratedDag {
        self.dag
    }
}

impl ConditionalFlow for AnalyticConditional<'_> {
    fn evaluate_pairs(
        &self,
        env: &dyn TaskGraph,
        pairs: &[(&State, &State)],
    ) -> Result<Vec<FlowEval>> {
        pairs
            .iter()
            .map(|(s, y)| self.flow_for(y)?.eval(env, s))
            .collect()
    }
}

/// Exact conversion numerators `log sum_y r(y) F(s|y) P_F(s'|s,y)` for every
/// non-terminal state, summing over the whole outcome space.
pub fn exact_conversion_policy(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    cond: &dyn ConditionalFlow,
    reward: &dyn RewardFn,
) -> Result<NumeratorTable> {
    let outcomes: Vec<&State> = dag.terminals().iter().map(|&t| dag.state(t)).collect();
    let mut rows = HashMap::new();
    for s in dag.states().iter().filter(|s| !s.is_terminal()) {
        rows.insert(
            s.clone(),
            conversion_numerators(env, cond, reward, s, &outcomes)?,
        );
    }
    Ok(NumeratorTable { rows })
}

/// Edge log-probabilities of the policy a numerator table induces.
pub fn numerator_edge_probs(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    numer: &dyn Numerator,
) -> Result<Vec<f64>> {
    capture_rows(dag, |states| {
        let raw = numer.log_numerators(env, states)?;
        let mut out = raw.clone();
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            let total = log_sum_exp(raw.row(r).iter().copied());
            row.iter_mut().for_each(|v| *v -= total);
        }
        Ok(out)
    })
}

/// A structured oracle result.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub check: String,
    pub task: String,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "check={} task={} cases={} max_deviation={:.3e} tolerance={:.1e} status={}",
            self.check,
            self.task,
            self.cases,
            self.max_deviation,
            self.tolerance,
            if self.passed() { "pass" } else { "fail" }
        )
    }
}

/// Builds the analytic indicator-reward conditional flows and measures, for
/// every outcome, how far the probability of reaching it is from 1.
pub fn check_reachability(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    task: &str,
) -> Result<OracleReport> {
    let cond = AnalyticConditional::indicator(dag)?;
    let mut worst: f64 = 0.0;
    for (j, &t) in dag.terminals().iter().enumerate() {
        let y = dag.state(t);
        let probs = capture_conditional(dag, env, &cond, y)?;
        let mass = terminal_log_mass(dag, &probs)?;
        worst = worst.max((1.0 - mass[j].exp()).abs());
    }
    Ok(OracleReport {
        check: "reach-target".into(),
        task: task.into(),
        cases: dag.terminals().len(),
        max_deviation: worst,
        tolerance: 1e-9,
    })
}

/// Maximum relative error of `numer` against the exact conversion numerators
/// over every edge.
pub fn check_conversion_match(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    cond: &dyn ConditionalFlow,
    reward: &dyn RewardFn,
    numer: &dyn Numerator,
    task: &str,
) -> Result<OracleReport> {
    let exact = exact_conversion_policy(dag, env, cond, reward)?;
    let mut worst: f64 = 0.0;
    let sources: Vec<&State> = dag.states().iter().filter(|s| !s.is_terminal()).collect();
    let mut cases = 0;
    for chunk in sources.chunks(4096) {
        let got = numer.log_numerators(env, chunk)?;
        let want = exact.log_numerators(env, chunk)?;
        for r in 0..chunk.len() {
            for (g, w) in got.row(r).iter().zip(want.row(r)) {
                if *w == f64::NEG_INFINITY {
                    continue;
                }
                cases += 1;
                worst = worst.max(((g - w).exp() - 1.0).abs());
            }
        }
    }
    Ok(OracleReport {
        check: "numerator".into(),
        task: task.into(),
        cases,
        max_deviation: worst,
        tolerance: 0.05,
    })
}

/// Squared amortized residual at the optimum: `N` from `numer` and `Q` the
/// exact posterior over outcomes reachable from `s'`, normalized directly
/// from `r(y) F(s|y) P_F(s'|s,y)`. Worst value over every edge and outcome.
pub fn check_amortized_optimum(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    cond: &dyn ConditionalFlow,
    reward: &dyn RewardFn,
    numer: &dyn Numerator,
    task: &str,
) -> Result<OracleReport> {
    let outcomes: Vec<&State> = dag.terminals().iter().map(|&t| dag.state(t)).collect();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (i, s) in dag.states().iter().enumerate() {
        if s.is_terminal() {
            continue;
        }
        let log_n = numer.log_numerators(env, &[s])?;
        let reachable: Vec<&State> = outcomes
            .iter()
            .copied()
            .filter(|y| env.reaches(s, y))
            .collect();
        let pairs: Vec<(&State, &State)> = reachable.iter().map(|y| (s, *y)).collect();
        let evals = cond.evaluate_pairs(env, &pairs)?;
        let log_r: Vec<f64> = reachable
            .iter()
            .map(|y| reward.reward(y).map(f64::ln))
            .collect::<Result<_>>()?;
        for &e in dag.out_edges(i) {
            let edge = dag.edges()[e];
            let dst = dag.state(edge.dst);
            let w: Vec<(usize, f64)> = reachable
                .iter()
                .enumerate()
                .filter(|(_, y)| env.reaches(dst, y))
                .map(|(k, _)| {
                    (
                        k,
                        log_r[k] + evals[k].log_flow + evals[k].log_pf[edge.action],
                    )
                })
                .collect();
            let total = log_sum_exp(w.iter().map(|(_, v)| *v));
            for (_, v) in &w {
                let d = log_n[(0, edge.action)] + (v - total) - v;
                worst = worst.max(d * d);
                cases += 1;
            }
        }
    }
    Ok(OracleReport {
        check: "amortized-optimum".into(),
        task: task.into(),
        cases,
        max_deviation: worst,
        tolerance: 1e-12,
    })
}

/// `factor * r(x)`.
pub struct ScaledReward<'a> {
    pub inner: &'a dyn RewardFn,
    pub factor: f64,
}

impl RewardFn for ScaledReward<'_> {
    fn reward(&self, x: &State) -> Result<f64> {
        Ok(self.factor * self.inner.reward(x)?)
    }
}

fn max_policy_gap(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    mut left: impl FnMut(&State) -> Result<Vec<f64>>,
    mut right: impl FnMut(&State) -> Result<Vec<f64>>,
) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for s in dag.states().iter().filter(|s| !s.is_terminal()) {
        let (a, b) = (left(s)?, right(s)?);
        if a.len() != b.len() || a.len() != env.num_actions() {
            return Err(Error::SupportMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
            cases += 1;
        }
    }
    Ok((cases, worst))
}

/// Elementwise gap between the policy extracted from exact numerators and
/// the Monte-Carlo conversion policy with full outcome enumeration.
pub fn check_mc_consistency(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    cond: &dyn ConditionalFlow,
    reward: &dyn RewardFn,
    task: &str,
) -> Result<OracleReport> {
    let exact = exact_conversion_policy(dag, env, cond, reward)?;
    let source = OutcomeSource::Enumerate(
        dag.terminals()
            .iter()
            .map(|&t| dag.state(t).clone())
            .collect(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (cases, worst) = max_policy_gap(
        dag,
        env,
        |s| extract_policy(&exact, env, s),
        |s| mc_policy(env, s, cond, reward, &source, &mut rng),
    )?;
    Ok(OracleReport {
        check: "mc-vs-exact".into(),
        task: task.into(),
        cases,
        max_deviation: worst,
        tolerance: 1e-9,
    })
}

/// Gap between conversion policies for `r` and `factor * r`.
pub fn check_reward_scale(
    dag: &EnumeratedDag,
    env: &dyn TaskGraph,
    cond: &dyn ConditionalFlow,
    reward: &dyn RewardFn,
    factor: f64,
    task: &str,
) -> Result<OracleReport> {
    let scaled = ScaledReward {
        inner: reward,
        factor,
    };
    let source = OutcomeSource::Enumerate(
        dag.terminals()
            .iter()
            .map(|&t| dag.state(t).clone())
            .collect(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rng2 = ChaCha8Rng::seed_from_u64(0);
    let (cases, worst) = max_policy_gap(
        dag,
        env,
        |s| mc_policy(env, s, cond, reward, &source, &mut rng),
        |s| mc_policy(env, s, cond, &scaled, &source, &mut rng2),
    )?;
    Ok(OracleReport {
        check: "reward-scale".into(),
        task: task.into(),
        cases,
        max_deviation: worst,
        tolerance: 1e-12,
    })
}

/// `sum |p - q|` over a shared support.
pub fn l1_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

/// Empirical frequencies of `samples` over `support`.
pub fn empirical_distribution<'a>(
    support: &[State],
    samples: impl IntoIterator<Item = &'a State>,
) -> Result<Vec<f64>> {
    let index: HashMap<&State, usize> = support.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut counts = vec![0usize; support.len()];
    let mut total = 0usize;
    for s in samples {
        let i = index
            .get(s)
            .ok_or_else(|| Error::MissingTableEntry(s.to_string()))?;
        counts[*i] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::DegenerateSupport("no samples".into()));
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / total as f64)
        .collect())
}

/// Target distribution `R(x) / Z` over the DAG's terminals.
pub fn reward_distribution(dag: &EnumeratedDag, reward: &dyn RewardFn) -> Result<Vec<f64>> {
    let log_r: Vec<f64> = dag
        .terminals()
        .iter()
        .map(|&t| Ok(reward.reward(dag.state(t))?.ln()))
        .collect::<Result<_>>()?;
    normalize_log(&log_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{extract_policy, mc_policy, OutcomeSource};
    use crate::env::{GridReward, GridSpec, GridWorld, SeqSpec, SequenceTask};
    use crate::oracle::DEFAULT_EDGE_CAP;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge_probs(dag: &EnumeratedDag, f: impl Fn(&State, usize) -> f64) -> Vec<f64> {
        dag.edges()
            .iter()
            .map(|e| f(dag.state(e.src), e.action).ln())
            .collect()
    }

    #[test]
    fn two_leaf_tree() {
        let env = SequenceTask::new(SeqSpec::new(2, 1).unwrap());
        let dag = EnumeratedDag::build(&env, DEFAULT_EDGE_CAP).unwrap();
        let p = edge_probs(&dag, |_, a| if a == 0 { 0.3 } else { 0.7 });
        let d = exact_terminal_distribution(&dag, &p).unwrap();
        assert!((d.prob_of(&env.state(&[0])).unwrap() - 0.3).abs() < 1e-15);
        assert!((d.prob_of(&env.state(&[1])).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn diamond_paths_sum() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let dag = EnumeratedDag::build(&env, DEFAULT_EDGE_CAP).unwrap();
        let p = edge_probs(&dag, |s, a| match (s.cells(), a) {
            ([0, 0], 0 | 1) => 0.5,
            ([1, 0], 1) | ([0, 1], 0) | ([1, 1], 2) => 1.0,
            ([0, 0] | [1, 0] | [0, 1] | [1, 1], _) => 0.0,
            (_, _) => 1.0 / 3.0,
        });
        let d = exact_terminal_distribution(&dag, &p).unwrap();
        assert!((d.prob_of(&env.cell(&[1, 1], true)).unwrap() - 1.0).abs() < 1e-15);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reach_probability_is_one() {
        let grid = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let dag = EnumeratedDag::build(&grid, DEFAULT_EDGE_CAP).unwrap();
        let report = check_reachability(&dag, &grid, "grid-4x4").unwrap();
        assert_eq!(report.cases, 16);
        assert!(report.passed(), "{report}");
        let seq = SequenceTask::new(SeqSpec::new(2, 4).unwrap());
        let dag = EnumeratedDag::build(&seq, DEFAULT_EDGE_CAP).unwrap();
        let report = check_reachability(&dag, &seq, "bits-4").unwrap();
        assert!(report.passed() && report.cases == 16, "{report}");
        let tree = SequenceTask::new(SeqSpec::new(2, 1).unwrap());
        let dag = EnumeratedDag::build(&tree, DEFAULT_EDGE_CAP).unwrap();
        assert!(
            check_reachability(&dag, &tree, "tree")
                .unwrap()
                .max_deviation
                < 1e-12
        );
    }

    #[test]
    fn balanced_flows_sample_proportionally_to_reward() {
        let env = GridWorld::new(GridSpec::new(5, 2).unwrap());
        let reward = GridReward::new(5);
        let dag = EnumeratedDag::build(&env, DEFAULT_EDGE_CAP).unwrap();
        let log_r: Vec<f64> = dag
            .terminals()
            .iter()
            .map(|&t| reward.reward(dag.state(t)).unwrap().ln())
            .collect();
        let flow = AnalyticFlow::balanced(&dag, &log_r, uniform_backward(&dag)).unwrap();
        // Every edge residual vanishes.
        for (k, e) in dag.edges().iter().enumerate() {
            let d = flow.log_flow()[e.src] + flow.edge_log_pf()[k]
                - flow.log_flow()[e.dst]
                - flow.edge_log_pb()[k];
            assert!(d.abs() < 1e-12);
        }
        let got = exact_terminal_distribution(&dag, flow.edge_log_pf()).unwrap();
        let want = reward_distribution(&dag, &reward).unwrap();
        assert!(l1_distance(&got.probs, &want).unwrap() < 1e-9);
    }

    #[test]
    fn analytic_pairs_have_zero_conditional_loss() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let dag = EnumeratedDag::build(&env, DEFAULT_EDGE_CAP).unwrap();
        let cond = AnalyticConditional::indicator(&dag).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &t in dag.terminals() {
            let y = dag.state(t);
            let traj = crate::ocgfn::CondFlowModel::rollouts_with(&env, &cond, &[y], &mut rng)
                .unwrap()
                .remove(0);
            assert_eq!(traj.terminal(), y);
            let loss = crate::ocgfn::oc_loss(&cond, &env, &traj, y, 1.0).unwrap();
            assert!(loss < 1e-20, "{loss}");
        }
    }

    #[test]
    fn numerator_checks() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let reward = GridReward::new(4);
        let dag = EnumeratedDag::build(&env, DEFAULT_EDGE_CAP).unwrap();
        let cond = AnalyticConditional::indicator(&dag).unwrap();
        let exact = exact_conversion_policy(&dag, &env, &cond, &reward).unwrap();
        assert_eq!(
            check_conversion_match(&dag, &env, &cond, &reward, &exact, "g")
                .unwrap()
                .max_deviation,
            0.0
        );
        let doubled = NumeratorTable {
            rows: exact
                .rows
                .iter()
                .map(|(s, r)| (s.clone(), r.iter().map(|v| v + 2f64.ln()).collect()))
                .collect(),
        };
        let dev = check_conversion_match(&dag, &env, &cond, &reward, &doubled, "g")
            .unwrap()
            .max_deviation;
        assert!((dev - 1.0).abs() < 1e-12);
        assert!(check_mc_consistency(&dag, &env, &cond, &reward, "g")
            .unwrap()
            .passed());
        assert!(check_reward_scale(&dag, &env, &cond, &reward, 10.0, "g")
            .unwrap()
            .passed());
        let opt = check_amortized_optimum(&dag, &env, &cond, &reward, &exact, "g").unwrap();
        assert!(opt.passed() && opt.cases > 0, "{opt}");
        let off = check_amortized_optimum(&dag, &env, &cond, &reward, &doubled, "g").unwrap();
        assert!((off.max_deviation - 2f64.ln().powi(2)).abs() < 1e-9);
        // Exact conversion of exactly balanced flows samples R/Z.
        let probs = numerator_edge_probs(&dag, &env, &exact).unwrap();
        let got = exact_terminal_distribution(&dag, &probs).unwrap();
        let want = reward_distribution(&dag, &reward).unwrap();
        assert!(l1_distance(&got.probs, &want).unwrap() < 1e-9);
        // Matches the Monte-Carlo policy with full enumeration.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let source = OutcomeSource::for_task(&env, vec![], 0);
        for s in dag.states().iter().filter(|s| !s.is_terminal()) {
            let a = extract_policy(&exact, &env, s).unwrap();
            let b = mc_policy(&env, s, &cond, &reward, &source, &mut rng).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn converted_flows_are_balanced() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let reward = GridReward::new(4);
        let dag = EnumeratedDag::build(&env, DEFAULT_EDGE_CAP).unwrap();
        let cond = AnalyticConditional::indicator(&dag).unwrap();
        let exact = exact_conversion_policy(&dag, &env, &cond, &reward).unwrap();
        // F^r(s) = sum_y r(y) F(s|y), P_B^r(s|s') = sum_y r F(s'|y) P_B(s|s',y) / F^r(s').
        let outcomes: Vec<&State> = dag.terminals().iter().map(|&t| dag.state(t)).collect();
        let log_r: Vec<f64> = outcomes
            .iter()
            .map(|y| reward.reward(y).unwrap().ln())
            .collect();
        let fr = |i: usize| {
            log_sum_exp(
                outcomes
                    .iter()
                    .zip(&log_r)
                    .map(|(y, lr)| lr + cond.flow_for(y).unwrap().log_flow()[i]),
            )
        };
        for (k, e) in dag.edges().iter().enumerate() {
            let p = normalize_log(&exact.rows[dag.state(e.src)]).unwrap()[e.action].ln();
            let pb = log_sum_exp(outcomes.iter().zip(&log_r).map(|(y, lr)| {
                let f = cond.flow_for(y).unwrap();
                lr + f.log_flow()[e.dst] + f.edge_log_pb()[k]
            })) - fr(e.dst);
            let d = fr(e.src) + p - fr(e.dst) - pb;
            assert!(d.abs() < 1e-9, "edge {k}: {d}");
        }
    }

    #[test]
    fn l1_examples() {
        assert!((l1_distance(&[0.3, 0.7], &[0.5, 0.5]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(l1_distance(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(l1_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(matches!(
            l1_distance(&[1.0], &[0.5, 0.5]),
            Err(Error::SupportMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn uniform_policy_matches_rollouts() {
        struct Uniform;
        impl ForwardPolicy for Uniform {
            fn log_probs(
                &self,
                env: &dyn TaskGraph,
                states: &[&State],
            ) -> Result<ndarray::Array2<f64>> {
                let mut out = ndarray::Array2::zeros((states.len(), env.num_actions()));
                for (i, s) in states.iter().enumerate() {
                    let m = env.forward_mask(s);
                    crate::nn::masked_log_softmax(
                        &vec![0.0; m.len()],
                        &m,
                        out.row_mut(i).as_slice_mut().unwrap(),
                    );
                }
                Ok(out)
            }
        }
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let dag = EnumeratedDag::build(&env, DEFAULT_EDGE_CAP).unwrap();
        let exact =
            exact_terminal_distribution(&dag, &capture_forward(&dag, &env, &Uniform).unwrap())
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trajs = crate::gfn::sample_trajectories(
            &Uniform,
            &env,
            100_000,
            &crate::gfn::ExplorationConfig::off(),
            &mut rng,
        )
        .unwrap();
        let emp =
            empirical_distribution(&exact.states, trajs.iter().map(|t| t.terminal())).unwrap();
        assert!(l1_distance(&emp, &exact.probs).unwrap() < 0.02);
    }
}
