use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{RewardFn, State, TaskGraph};
use crate::error::{Error, Result};
use crate::gfn::log_add_exp;
use crate::ocgfn::ConditionalFlow;

/// Outcome space above which conversion falls back to sampling.
pub const ENUMERATION_LIMIT: usize = 1 << 16;

/// Outcomes the conversion sums run over.
#[derive(Clone, Debug)]
pub enum OutcomeSource {
    /// Exact sum over every listed outcome.
    Enumerate(Vec<State>),
    /// Self-normalized estimate from `m` uniform draws of the pool.
    Sample { pool: Vec<State>, m: usize },
}

impl OutcomeSource {
    /// Full enumeration when the outcome space is small, otherwise sampling
    /// from `pool` (typically the replay outcomes).
    pub fn for_task(env: &dyn TaskGraph, pool: Vec<State>, m: usize) -> Self {
        match env.enumerate_terminals(ENUMERATION_LIMIT) {
            Some(all) => Self::Enumerate(all),
            None => Self::Sample { pool, m },
        }
    }

    fn draw<'a>(&'a self, rng: &mut impl Rng) -> Result<Vec<&'a State>> {
        match self {
            Self::Enumerate(all) => Ok(all.iter().collect()),
            Self::Sample { pool, m } => {
                if pool.is_empty() || *m == 0 {
                    return Err(Error::DegenerateSupport("empty outcome pool".into()));
                }
                Ok((0..*m)
                    .map(|_| pool.choose(rng).expect("nonempty pool"))
                    .collect())
            }
        }
    }
}

/// `log sum_y r(y) F(s|y) P_F(a|s,y)` per forward slot, over the outcomes
/// reachable from `s` (others have zero conditional flow). `-inf` on
/// illegal slots.
pub fn conversion_numerators(
    env: &dyn TaskGraph,
    cond: &dyn ConditionalFlow,
    reward: &dyn RewardFn,
    s: &State,
    outcomes: &[&State],
) -> Result<Vec<f64>> {
    if s.is_terminal() {
        return Err(Error::TerminalState(env.render(s)));
    }
    let reachable: Vec<&State> = outcomes
        .iter()
        .copied()
        .filter(|y| env.reaches(s, y))
        .collect();
    let mut numer = vec![f64::NEG_INFINITY; env.num_actions()];
    for chunk in reachable.chunks(4096) {
        let pairs: Vec<(&State, &State)> = chunk.iter().map(|y| (s, *y)).collect();
        let evals = cond.evaluate_pairs(env, &pairs)?;
        for (y, e) in chunk.iter().zip(&evals) {
            let w = reward.reward(y)?.ln() + e.log_flow;
            for (n, &lp) in numer.iter_mut().zip(&e.log_pf) {
                *n = log_add_exp(*n, w + lp);
            }
        }
    }
    Ok(numer)
}

/// Normalizes log-domain weights into probabilities.
pub fn normalize_log(weights: &[f64]) -> Result<Vec<f64>> {
    let total = weights
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &w| log_add_exp(acc, w));
    if !total.is_finite() {
        return Err(Error::DegenerateSupport("all numerators are zero".into()));
    }
    Ok(weights.iter().map(|&w| (w - total).exp()).collect())
}

/// Converted forward policy at `s`: `sum_y r F P_F / sum_y r F`.
pub fn mc_policy(
    env: &dyn TaskGraph,
    s: &State,
    cond: &dyn ConditionalFlow,
    reward: &dyn RewardFn,
    source: &OutcomeSource,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let outcomes = source.draw(rng)?;
    normalize_log(&conversion_numerators(env, cond, reward, s, &outcomes)?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::env::{SeqSpec, SequenceTask};
    use crate::gfn::FlowEval;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    /// Hand-set conditional values at the root of a one-symbol task.
    pub(crate) struct Table(pub HashMap<State, (f64, Vec<f64>)>);

    impl ConditionalFlow for Table {
        fn evaluate_pairs(
            &self,
            _env: &dyn TaskGraph,
            pairs: &[(&State, &State)],
        ) -> Result<Vec<FlowEval>> {
            Ok(pairs
                .iter()
                .map(|(_, y)| {
                    let (f, pf) = &self.0[*y];
                    FlowEval {
                        log_flow: f.ln(),
                        log_pf: pf.iter().map(|p| p.ln()).collect(),
                        log_pb: vec![0.0],
                    }
                })
                .collect())
        }
    }

    pub(crate) struct Rewards(pub HashMap<State, f64>);

    impl RewardFn for Rewards {
        fn reward(&self, x: &State) -> Result<f64> {
            Ok(self.0[x])
        }
    }

    pub(crate) fn two_outcome_case() -> (SequenceTask, Table, Rewards) {
        let env = SequenceTask::new(SeqSpec::new(2, 1).unwrap());
        let (y1, y2) = (env.state(&[0]), env.state(&[1]));
        let table = Table(HashMap::from([
            (y1.clone(), (1.0, vec![1.0, 1e-300])),
            (y2.clone(), (1.0, vec![0.5, 0.5])),
        ]));
        let r = Rewards(HashMap::from([(y1, 1.0), (y2, 3.0)]));
        (env, table, r)
    }

    #[test]
    fn two_outcome_hand_value() {
        let (env, table, r) = two_outcome_case();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let source = OutcomeSource::for_task(&env, vec![], 0);
        let s0 = env.initial_state();
        let numer =
            conversion_numerators(&env, &table, &r, &s0, &[&env.state(&[0]), &env.state(&[1])])
                .unwrap();
        assert!((numer[0].exp() - 2.5).abs() < 1e-12);
        let p = mc_policy(&env, &s0, &table, &r, &source, &mut rng).unwrap();
        assert!((p[0] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn single_outcome_returns_its_policy() {
        let (env, table, r) = two_outcome_case();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let source = OutcomeSource::Enumerate(vec![env.state(&[1])]);
        let p = mc_policy(&env, &env.initial_state(), &table, &r, &source, &mut rng).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_support_is_degenerate() {
        let (env, table, r) = two_outcome_case();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let source = OutcomeSource::Sample { pool: vec![], m: 4 };
        assert!(matches!(
            mc_policy(&env, &env.initial_state(), &table, &r, &source, &mut rng),
            Err(Error::DegenerateSupport(_))
        ));
    }
}
