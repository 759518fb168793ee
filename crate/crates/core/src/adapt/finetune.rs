use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::numerator::{encode_states, NumeratorNet};
use super::sampler::{OutcomeSamplerNet, QRows};
use crate::env::{Action, RewardFn, State, TaskGraph};
use crate::error::{Error, Result};
use crate::gfn::{check_loss, rollout_batch, ExplorationConfig, ForwardPolicy, Trajectory};
use crate::nn::{Gradients, Mlp};
use crate::ocgfn::{ConditionalFlow, ReplayDataset};

/// `(log N(s'|s) + log Q(y|s',s) - log r(y) - log F(s|y) - log P_F(s'|s,y))^2`.
pub fn amortized_residual(log_n: f64, log_q: f64, r: f64, flow: f64, pf: f64) -> Result<f64> {
    for (v, what) in [
        (r, "reward"),
        (flow, "conditional flow"),
        (pf, "conditional forward probability"),
    ] {
        if !(v > 0.0) {
            return Err(Error::ZeroProbability(format!("{what} is {v}")));
        }
    }
    Ok(log_n + log_q - r.ln() - flow.ln() - pf.ln())
}

/// One amortized training example `(s, a, s', y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmortizedExample {
    pub src: State,
    pub action: Action,
    pub dst: State,
    pub outcome: State,
}

/// Prepared inputs of an amortized loss evaluation over a batch.
#[derive(Clone, Debug)]
pub struct AmortizedBatch {
    pub n_inputs: Array2<f64>,
    pub actions: Vec<Action>,
    pub q_rows: QRows,
    /// `log r(y) + log F(s|y) + log P_F(s'|s,y)` per example.
    pub targets: Vec<f64>,
}

impl AmortizedBatch {
    pub fn build(
        env: &dyn TaskGraph,
        sampler: &OutcomeSamplerNet,
        cond: &dyn ConditionalFlow,
        reward: &dyn RewardFn,
        examples: &[AmortizedExample],
    ) -> Result<Self> {
        let srcs: Vec<&State> = examples.iter().map(|e| &e.src).collect();
        let pairs: Vec<(&State, &State)> = examples.iter().map(|e| (&e.src, &e.outcome)).collect();
        let evals = cond.evaluate_pairs(env, &pairs)?;
        let targets = examples
            .iter()
            .zip(&evals)
            .map(|(e, ev)| {
                let pf = ev.log_pf[e.action];
                if !ev.log_flow.is_finite() || pf == f64::NEG_INFINITY {
                    return Err(Error::ZeroProbability(format!(
                        "conditional factor at {} for {}",
                        env.render(&e.src),
                        env.render(&e.outcome)
                    )));
                }
                Ok(reward.reward(&e.outcome)?.ln() + ev.log_flow + pf)
            })
            .collect::<Result<Vec<f64>>>()?;
        let triples: Vec<(&State, &State, &State)> = examples
            .iter()
            .map(|e| (&e.src, &e.dst, &e.outcome))
            .collect();
        Ok(Self {
            n_inputs: encode_states(env, &srcs),
            actions: examples.iter().map(|e| e.action).collect(),
            q_rows: sampler.rows(env, &triples)?,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Mean squared residual.
    pub fn value(&self, n_net: &Mlp, q_net: &Mlp) -> Result<f64> {
        let out = n_net.predict(self.n_inputs.view())?;
        let logq = OutcomeSamplerNet::log_q_rows(q_net, &self.q_rows)?;
        let b = self.len() as f64;
        Ok((0..self.len())
            .map(|i| {
                let d = out[(i, self.actions[i])] + logq[i] - self.targets[i];
                d * d
            })
            .sum::<f64>()
            / b)
    }

    /// Mean squared residual and the gradients for both networks.
    pub fn loss_and_grads(&self, n_net: &Mlp, q_net: &Mlp) -> Result<(f64, Gradients, Gradients)> {
        let (out, cache) = n_net.forward(self.n_inputs.view())?;
        let b = self.len() as f64;
        let mut deltas = Vec::new();
        let (_, q_grads) = OutcomeSamplerNet::log_q_and_grad(q_net, &self.q_rows, |logq| {
            deltas = (0..logq.len())
                .map(|i| out[(i, self.actions[i])] + logq[i] - self.targets[i])
                .collect();
            deltas.iter().map(|d| 2.0 * d / b).collect()
        })?;
        let mut grad = Array2::zeros(out.dim());
        for (i, d) in deltas.iter().enumerate() {
            grad[(i, self.actions[i])] = 2.0 * d / b;
        }
        let n_grads = n_net.backward(&cache, grad.view())?;
        let loss = deltas.iter().map(|d| d * d).sum::<f64>() / b;
        Ok((loss, n_grads, q_grads))
    }
}

/// Squared residual of a single example.
pub fn amortized_loss(
    numerator: &NumeratorNet,
    sampler: &OutcomeSamplerNet,
    cond: &dyn ConditionalFlow,
    reward: &dyn RewardFn,
    env: &dyn TaskGraph,
    example: &AmortizedExample,
) -> Result<f64> {
    let batch = AmortizedBatch::build(env, sampler, cond, reward, std::slice::from_ref(example))?;
    batch.value(&numerator.net, &sampler.net)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    /// Exploration noise of the numerator-derived rollout policy.
    pub explore: ExplorationConfig,
    /// Tempering and uniform mixing of `Q` when drawing training outcomes.
    pub q_explore: ExplorationConfig,
    /// Transitions drawn from the replay dataset per step.
    pub replay_transitions: usize,
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.explore.validate()?;
        self.q_explore.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneMetrics {
    pub loss: f64,
    /// Trajectories collected with the numerator policy this step.
    pub trajectories: Vec<Trajectory>,
}

/// Amortized predictor pair trained against a frozen conditional model.
#[derive(Clone, Debug)]
pub struct Amortized {
    pub numerator: NumeratorNet,
    pub sampler: OutcomeSamplerNet,
}

impl Amortized {
    pub fn rollouts(
        &self,
        env: &dyn TaskGraph,
        n: usize,
        explore: &ExplorationConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<Trajectory>> {
        rollout_batch(env, n, explore, rng, |_, states| {
            self.numerator.log_probs(env, states)
        })
    }

    /// Sets the Adam step size of both networks.
    pub fn set_lr(&mut self, lr: f64) {
        self.numerator.adam.config.lr = lr;
        self.sampler.adam.config.lr = lr;
    }

    /// One Adam step for both networks on a prepared batch.
    pub fn train_on(&mut self, batch: &AmortizedBatch) -> Result<f64> {
        let (loss, gn, gq) = batch.loss_and_grads(&self.numerator.net, &self.sampler.net)?;
        check_loss(loss, "amortized")?;
        self.numerator.adam.step(&mut self.numerator.net, &gn)?;
        self.sampler.adam.step(&mut self.sampler.net, &gq)?;
        Ok(loss)
    }

    /// Draws an outcome for every transition from the tempered sampler.
    pub fn examples(
        &self,
        env: &dyn TaskGraph,
        transitions: Vec<(State, Action, State)>,
        q_explore: &ExplorationConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<AmortizedExample>> {
        let pairs: Vec<(&State, &State)> = transitions.iter().map(|(s, _, n)| (s, n)).collect();
        let ys = self.sampler.sample(env, &pairs, q_explore, rng)?;
        Ok(transitions
            .into_iter()
            .zip(ys)
            .map(|((src, action, dst), outcome)| AmortizedExample {
                src,
                action,
                dst,
                outcome,
            })
            .collect())
    }
}

/// One supervised fine-tuning iteration: roll out the numerator policy,
/// optionally add replay transitions, draw outcomes from the tempered
/// sampler and take one Adam step on the amortized residual.
pub fn finetune_step(
    model: &mut Amortized,
    cond: &dyn ConditionalFlow,
    reward: &dyn RewardFn,
    env: &dyn TaskGraph,
    replay: Option<&ReplayDataset>,
    config: &FinetuneConfig,
    rng: &mut impl Rng,
) -> Result<FinetuneMetrics> {
    let trajectories = model.rollouts(env, config.batch_size, &config.explore, rng)?;
    let mut transitions: Vec<(State, Action, State)> = trajectories
        .iter()
        .flat_map(|t| {
            (0..t.len()).map(move |k| (t.states[k].clone(), t.actions[k], t.states[k + 1].clone()))
        })
        .collect();
    if let Some(d) = replay {
        transitions.extend(
            d.sample_transitions(config.replay_transitions, rng)
                .into_iter()
                .map(|t| (t.src, t.action, t.dst)),
        );
    }
    let examples = model.examples(env, transitions, &config.q_explore, rng)?;
    let batch = AmortizedBatch::build(env, &model.sampler, cond, reward, &examples)?;
    let loss = model.train_on(&batch)?;
    Ok(FinetuneMetrics { loss, trajectories })
}
