use ndarray::Array2;
use rand::Rng;

use super::mc::normalize_log;
use crate::env::{State, TaskGraph};
use crate::error::{Error, Result};
use crate::gfn::{ForwardPolicy, NetSpec};
use crate::nn::{masked_log_softmax, Adam, Mlp, NetCheckpoint};

/// Unnormalized log numerators `log N(s'|s)` per forward slot.
pub trait Numerator {
    /// One row per state; `-inf` on illegal slots.
    fn log_numerators(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Array2<f64>>;
}

pub(crate) fn encode_states(env: &dyn TaskGraph, states: &[&State]) -> Array2<f64> {
    let mut x = Array2::zeros((states.len(), env.encoding_dim()));
    for (i, s) in states.iter().enumerate() {
        env.encode_into(s, x.row_mut(i).as_slice_mut().unwrap());
    }
    x
}

pub(crate) fn mask_illegal(env: &dyn TaskGraph, states: &[&State], out: &mut Array2<f64>) {
    for (i, s) in states.iter().enumerate() {
        for (v, legal) in out.row_mut(i).iter_mut().zip(env.forward_mask(s)) {
            if !legal {
                *v = f64::NEG_INFINITY;
            }
        }
    }
}

/// Network emitting `log N(s'|s)` for every forward slot of `s`.
#[derive(Clone, Debug)]
pub struct NumeratorNet {
    pub(crate) net: Mlp,
    pub(crate) adam: Adam,
}

impl NumeratorNet {
    pub fn new(env: &dyn TaskGraph, spec: &NetSpec, rng: &mut impl Rng) -> Self {
        let (net, adam) = spec.build(env.encoding_dim(), env.num_actions(), rng);
        Self { net, adam }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint::capture(&self.net, Some(&self.adam))
    }

    pub fn restore(env: &dyn TaskGraph, ckpt: NetCheckpoint) -> Result<Self> {
        let (net, adam) = ckpt.restore()?;
        if net.input_dim() != env.encoding_dim() || net.output_dim() != env.num_actions() {
            return Err(Error::Checkpoint(
                "numerator network does not fit the task".into(),
            ));
        }
        let adam = adam.unwrap_or_else(|| Adam::for_net(Default::default(), &net));
        Ok(Self { net, adam })
    }
}

impl Numerator for NumeratorNet {
    fn log_numerators(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Array2<f64>> {
        if states.is_empty() {
            return Ok(Array2::zeros((0, env.num_actions())));
        }
        let mut out = self.net.predict(encode_states(env, states).view())?;
        mask_illegal(env, states, &mut out);
        Ok(out)
    }
}

fn numerator_log_probs(
    numer: &dyn Numerator,
    env: &dyn TaskGraph,
    states: &[&State],
) -> Result<Array2<f64>> {
    let raw = numer.log_numerators(env, states)?;
    let mut out = Array2::zeros(raw.dim());
    for (i, s) in states.iter().enumerate() {
        let mask = env.forward_mask(s);
        masked_log_softmax(
            raw.row(i).as_slice().unwrap(),
            &mask,
            out.row_mut(i).as_slice_mut().unwrap(),
        );
    }
    Ok(out)
}

impl ForwardPolicy for NumeratorNet {
    fn log_probs(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Array2<f64>> {
        numerator_log_probs(self, env, states)
    }
}

/// `P(s'|s) = N(s'|s) / sum N(.|s)` over the legal children of `s`.
pub fn extract_policy(
    numerator: &dyn Numerator,
    env: &dyn TaskGraph,
    s: &State,
) -> Result<Vec<f64>> {
    let row = numerator.log_numerators(env, &[s])?;
    normalize_log(row.row(0).as_slice().unwrap())
}

/// Fixed numerators per state, e.g. exact conversion sums.
#[derive(Clone, Debug, Default)]
pub struct NumeratorTable {
    pub rows: std::collections::HashMap<State, Vec<f64>>,
}

impl Numerator for NumeratorTable {
    fn log_numerators(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((states.len(), env.num_actions()));
        for (i, s) in states.iter().enumerate() {
            let row = self
                .rows
                .get(*s)
                .ok_or_else(|| Error::MissingTableEntry(env.render(s)))?;
            out.row_mut(i)
                .iter_mut()
                .zip(row)
                .for_each(|(o, v)| *o = *v);
        }
        Ok(out)
    }
}

impl ForwardPolicy for NumeratorTable {
    fn log_probs(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Array2<f64>> {
        numerator_log_probs(self, env, states)
    }
}
