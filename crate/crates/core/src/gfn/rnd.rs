use ndarray::Array2;
use rand::Rng;

use super::flow::NetSpec;
use crate::env::{State, TaskGraph};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Mlp};

/// Random network distillation: a frozen random target and a trained
/// predictor whose disagreement measures novelty.
#[derive(Clone, Debug)]
pub struct RndPair {
    target: Mlp,
    predictor: Mlp,
    adam: Adam,
    pub coef: f64,
}

impl RndPair {
    pub fn new(
        input_dim: usize,
        spec: &NetSpec,
        embed_dim: usize,
        coef: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let sizes = spec.sizes(input_dim, embed_dim);
        let target = Mlp::new(&sizes, spec.activation, rng);
        let predictor = Mlp::new(&sizes, spec.activation, rng);
        let adam = Adam::for_net(AdamConfig::with_lr(spec.lr), &predictor);
        Self {
            target,
            predictor,
            adam,
            coef,
        }
    }

    pub fn from_parts(target: Mlp, predictor: Mlp, coef: f64, lr: f64) -> Result<Self> {
        if target.sizes() != predictor.sizes() {
            return Err(Error::Shape {
                what: "rnd predictor parameters",
                expected: target.num_params(),
                got: predictor.num_params(),
            });
        }
        let adam = Adam::for_net(AdamConfig::with_lr(lr), &predictor);
        Ok(Self {
            target,
            predictor,
            adam,
            coef,
        })
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn predictor(&self) -> &Mlp {
        &self.predictor
    }

    fn encode(env: &dyn TaskGraph, states: &[&State]) -> Array2<f64> {
        let d = env.encoding_dim();
        let mut x = Array2::zeros((states.len(), d));
        for (i, s) in states.iter().enumerate() {
            env.encode_into(s, x.row_mut(i).as_slice_mut().unwrap());
        }
        x
    }

    /// `coef * ||target(x) - predictor(x)||_2` per input row.
    pub fn intrinsic_rows(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.nrows() == 0 {
            return Ok(vec![]);
        }
        let diff = self.target.predict(x.view())? - self.predictor.predict(x.view())?;
        Ok(diff
            .rows()
            .into_iter()
            .map(|r| self.coef * r.dot(&r).sqrt())
            .collect())
    }

    pub fn intrinsic(&self, env: &dyn TaskGraph, states: &[&State]) -> Result<Vec<f64>> {
        self.intrinsic_rows(&Self::encode(env, states))
    }

    /// One Adam step on the mean squared target/predictor distance. Returns
    /// the loss before the step.
    pub fn update_rows(&mut self, x: &Array2<f64>) -> Result<f64> {
        if x.nrows() == 0 {
            return Ok(0.0);
        }
        let phi_bar = self.target.predict(x.view())?;
        let (phi, cache) = self.predictor.forward(x.view())?;
        let diff = &phi - &phi_bar;
        let n = x.nrows() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let grad_out = diff * (2.0 / n);
        let grads = self.predictor.backward(&cache, grad_out.view())?;
        self.adam.step(&mut self.predictor, &grads)?;
        Ok(loss)
    }

    pub fn update(&mut self, env: &dyn TaskGraph, states: &[&State]) -> Result<f64> {
        self.update_rows(&Self::encode(env, states))
    }
}
