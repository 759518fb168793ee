use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn for_net(config: AdamConfig, net: &Mlp) -> Self {
        Self::new(config, net.num_params())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of a flat parameter slice.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                what: "adam parameters",
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("param[{i}]")));
        }
        self.advance();
        let (c1, c2) = self.corrections();
        update(
            &self.config,
            params,
            grads,
            &mut self.m,
            &mut self.v,
            c1,
            c2,
        );
        Ok(())
    }

    /// One update of every network parameter.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if net.num_params() != self.m.len() {
            return Err(Error::Shape {
                what: "adam state",
                expected: self.m.len(),
                got: net.num_params(),
            });
        }
        let mut offset = 0;
        for g in &grads.layers {
            let values = g.weight.iter().chain(g.bias.iter());
            if let Some(i) = values.clone().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(net.param_name(offset + i)));
            }
            offset += g.weight.len() + g.bias.len();
        }
        self.advance();
        let (c1, c2) = self.corrections();
        let config = self.config;
        let mut offset = 0;
        for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
            let w = layer
                .weight
                .as_slice_memory_order_mut()
                .expect("contiguous weights");
            let gw = g
                .weight
                .as_slice_memory_order()
                .expect("contiguous gradients");
            let n = w.len();
            update(
                &config,
                w,
                gw,
                &mut self.m[offset..offset + n],
                &mut self.v[offset..offset + n],
                c1,
                c2,
            );
            offset += n;
            let b = layer
                .bias
                .as_slice_memory_order_mut()
                .expect("contiguous bias");
            let gb = g
                .bias
                .as_slice_memory_order()
                .expect("contiguous gradients");
            let n = b.len();
            update(
                &config,
                b,
                gb,
                &mut self.m[offset..offset + n],
                &mut self.v[offset..offset + n],
                c1,
                c2,
            );
            offset += n;
        }
        Ok(())
    }

    fn advance(&mut self) {
        self.step += 1;
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (
            1.0 - self.config.beta1.powi(t),
            1.0 - self.config.beta2.powi(t),
        )
    }
}

fn update(
    config: &AdamConfig,
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    c1: f64,
    c2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}
