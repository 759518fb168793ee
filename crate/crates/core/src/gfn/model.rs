use ndarray::Array2;
use rand::Rng;

use super::flow::{
    edge_balance_loss, evaluate_rows, trajectory_balance_loss, EdgeBatch, FlowEval, FlowFunctions,
    HeadLayout, NetSpec, RowBatch, TbTerm,
};
use super::rnd::RndPair;
use super::sampling::{rollout_batch, ExplorationConfig, ForwardPolicy, Trajectory};
use crate::env::{State, TaskGraph};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Mlp};

pub(crate) fn check_loss(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss(format!("{what}: {loss}")))
    }
}

/// Unconditional heads `log F(s)`, `P_F(.|s)`, `P_B(.|s)` in one network.
#[derive(Clone, Debug)]
pub struct FlowModel {
    net: Mlp,
    adam: Adam,
    layout: HeadLayout,
}

impl FlowModel {
    pub fn new(env: &dyn TaskGraph, spec: &NetSpec, rng: &mut impl Rng) -> Self {
        let layout = HeadLayout::for_env(env);
        let (mut net, adam) = spec.build(env.encoding_dim(), layout.width(), rng);
        net.zero_outputs(layout.bwd());
        Self { net, adam, layout }
    }

    pub fn from_parts(net: Mlp, adam: Adam, layout: HeadLayout) -> Result<Self> {
        if net.output_dim() != layout.width() {
            return Err(Error::Shape {
                what: "flow model output",
                expected: layout.width(),
                got: net.output_dim(),
            });
        }
        Ok(Self { net, adam, layout })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.config.lr = lr;
    }

    pub fn layout(&self) -> HeadLayout {
        self.layout
    }

    fn rows(env: &dyn TaskGraph, states: &[&State]) -> RowBatch {
        RowBatch::build(env, states.iter().map(|s| (*s, None)), false)
    }

    /// One Adam step on detailed balance with terminal boundary `F(x) = R(x)`.
    pub fn db_update(
        &mut self,
        env: &dyn TaskGraph,
        trajs: &[&Trajectory],
        log_rewards: &[f64],
    ) -> Result<f64> {
        let zeros: Vec<Vec<f64>> = trajs.iter().map(|t| vec![0.0; t.len()]).collect();
        self.balance_update(env, trajs, log_rewards, &zeros)
    }

    /// One Adam step on augmented detailed balance; `intrinsic[i][k]` is
    /// added to the right-hand side of edge `k` of trajectory `i`.
    pub fn balance_update(
        &mut self,
        env: &dyn TaskGraph,
        trajs: &[&Trajectory],
        log_rewards: &[f64],
        intrinsic: &[Vec<f64>],
    ) -> Result<f64> {
        let mut batch = EdgeBatch::from_trajectories(env, trajs, None);
        for (e, &(i, k)) in batch.edges.iter_mut().zip(&batch.origin) {
            let t = trajs[i];
            if t.states[k + 1].is_terminal() {
                e.dst_log_flow = Some(log_rewards[i]);
            }
            e.intrinsic = intrinsic[i][k];
        }
        let (loss, grads) = edge_balance_loss(&self.net, self.layout, &batch.rows, &batch.edges)?;
        check_loss(loss, "detailed balance")?;
        self.adam.step(&mut self.net, &grads)?;
        Ok(loss)
    }
}

impl FlowFunctions for FlowModel {
    fn evaluate(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Vec<FlowEval>> {
        let heads = evaluate_rows(&self.net, self.layout, &Self::rows(env, states))?;
        Ok((0..states.len()).map(|i| heads.eval(i)).collect())
    }
}

impl ForwardPolicy for FlowModel {
    fn log_probs(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Array2<f64>> {
        Ok(evaluate_rows(&self.net, self.layout, &Self::rows(env, states))?.log_pf)
    }
}

/// Flow model trained with trajectory balance and a learned `log Z`.
#[derive(Clone, Debug)]
pub struct TbModel {
    pub flow: FlowModel,
    pub log_z: f64,
    z_adam: Adam,
}

impl TbModel {
    pub fn new(env: &dyn TaskGraph, spec: &NetSpec, log_z_lr: f64, rng: &mut impl Rng) -> Self {
        Self {
            flow: FlowModel::new(env, spec, rng),
            log_z: 0.0,
            z_adam: Adam::new(AdamConfig::with_lr(log_z_lr), 1),
        }
    }

    /// One Adam step on the mean trajectory-balance loss.
    pub fn update(
        &mut self,
        env: &dyn TaskGraph,
        trajs: &[&Trajectory],
        log_rewards: &[f64],
    ) -> Result<f64> {
        let batch = EdgeBatch::from_trajectories(env, trajs, None);
        let w = 1.0 / trajs.len().max(1) as f64;
        let terms: Vec<TbTerm> = trajs
            .iter()
            .zip(&batch.starts)
            .zip(log_rewards)
            .map(|((t, &start), &log_reward)| TbTerm {
                start,
                actions: t.actions.clone(),
                bwd_slots: t
                    .actions
                    .iter()
                    .enumerate()
                    .map(|(k, &a)| env.backward_slot(&t.states[k + 1], a))
                    .collect(),
                log_reward,
                weight: w,
            })
            .collect();
        let (loss, grads, d_log_z) = trajectory_balance_loss(
            &self.flow.net,
            self.flow.layout,
            &batch.rows,
            &terms,
            self.log_z,
        )?;
        check_loss(loss, "trajectory balance")?;
        self.flow.adam.step(&mut self.flow.net, &grads)?;
        let mut z = [self.log_z];
        self.z_adam.step_slice(&mut z, &[d_log_z])?;
        self.log_z = z[0];
        Ok(loss)
    }

    pub fn sample(
        &self,
        env: &dyn TaskGraph,
        n: usize,
        explore: &ExplorationConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<Trajectory>> {
        rollout_batch(env, n, explore, rng, |_, states| {
            self.flow.log_probs(env, states)
        })
    }
}

/// Reward-free explorer: flow model trained on augmented detailed balance
/// with RND novelty as the only signal above the reward floor.
#[derive(Clone, Debug)]
pub struct GafnModel {
    pub flow: FlowModel,
    pub rnd: RndPair,
    /// Terminal boundary `log F(x)`.
    pub log_floor: f64,
}

impl GafnModel {
    pub fn new(
        env: &dyn TaskGraph,
        spec: &NetSpec,
        rnd_spec: &NetSpec,
        rnd_embed: usize,
        coef: f64,
        floor: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let flow = FlowModel::new(env, spec, rng);
        let rnd = RndPair::new(env.encoding_dim(), rnd_spec, rnd_embed, coef, rng);
        Self {
            flow,
            rnd,
            log_floor: floor.ln(),
        }
    }

    pub fn sample(
        &self,
        env: &dyn TaskGraph,
        n: usize,
        explore: &ExplorationConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<Trajectory>> {
        rollout_batch(env, n, explore, rng, |_, states| {
            self.flow.log_probs(env, states)
        })
    }

    /// Fills `intrinsic` of each trajectory with the novelty of every edge's
    /// destination state.
    pub fn attach_intrinsic(&self, env: &dyn TaskGraph, trajs: &mut [Trajectory]) -> Result<()> {
        let dsts: Vec<&State> = trajs.iter().flat_map(|t| t.states[1..].iter()).collect();
        let r = self.rnd.intrinsic(env, &dsts)?;
        let mut it = r.into_iter();
        for t in trajs.iter_mut() {
            t.intrinsic = it.by_ref().take(t.len()).collect();
        }
        Ok(())
    }

    pub fn update(&mut self, env: &dyn TaskGraph, trajs: &[&Trajectory]) -> Result<f64> {
        let log_rewards = vec![self.log_floor; trajs.len()];
        let intrinsic: Vec<Vec<f64>> = trajs
            .iter()
            .map(|t| {
                if t.intrinsic.len() == t.len() {
                    t.intrinsic.clone()
                } else {
                    vec![0.0; t.len()]
                }
            })
            .collect();
        self.flow
            .balance_update(env, trajs, &log_rewards, &intrinsic)
    }

    pub fn update_rnd(&mut self, env: &dyn TaskGraph, trajs: &[&Trajectory]) -> Result<f64> {
        let visited: Vec<&State> = trajs.iter().flat_map(|t| t.states[1..].iter()).collect();
        self.rnd.update(env, &visited)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridReward, GridSpec, GridWorld, RewardFn};
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_backward_at_init() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = FlowModel::new(
            &env,
            &NetSpec::new(vec![16], Activation::LeakyRelu, 1e-3),
            &mut rng,
        );
        let s = env.cell(&[1, 2], false);
        let e = m.evaluate(&env, &[&s]).unwrap().remove(0);
        assert!((e.log_pb[0] - 0.5f64.ln()).abs() < 1e-12);
        assert!((e.log_pb[1] - 0.5f64.ln()).abs() < 1e-12);
        let total: f64 = e.log_pf.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tb_training_reduces_loss() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let reward = GridReward::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = TbModel::new(
            &env,
            &NetSpec::new(vec![32, 32], Activation::LeakyRelu, 1e-2),
            0.1,
            &mut rng,
        );
        let explore = ExplorationConfig::off();
        let mut losses = vec![];
        for _ in 0..300 {
            let trajs = m.sample(&env, 16, &explore, &mut rng).unwrap();
            let lr: Vec<f64> = trajs
                .iter()
                .map(|t| reward.reward(t.terminal()).unwrap().ln())
                .collect();
            let refs: Vec<&Trajectory> = trajs.iter().collect();
            losses.push(m.update(&env, &refs, &lr).unwrap());
        }
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[280..].iter().sum::<f64>() / 20.0;
        assert!(tail < 0.2 * head, "{head} -> {tail}");
    }

    #[test]
    fn gafn_attaches_destination_novelty() {
        let env = GridWorld::new(GridSpec::new(4, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = NetSpec::new(vec![16], Activation::LeakyRelu, 1e-3);
        let g = GafnModel::new(&env, &spec, &spec, 4, 1.0, 1e-6, &mut rng);
        let mut trajs = g
            .sample(&env, 3, &ExplorationConfig::off(), &mut rng)
            .unwrap();
        g.attach_intrinsic(&env, &mut trajs).unwrap();
        for t in &trajs {
            assert_eq!(t.intrinsic.len(), t.len());
            let expect = g.rnd.intrinsic(&env, &[t.terminal()]).unwrap()[0];
            assert_eq!(*t.intrinsic.last().unwrap(), expect);
        }
    }
}
