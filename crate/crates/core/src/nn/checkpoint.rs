//! Text checkpoints for networks and optimizer state.
//!
//! A checkpoint is a JSON object:
//!
//! ```text
//! { "format": "ocflow-mlp", "version": 1,
//!   "sizes": [in, h1, ..., out], "activation": "leaky-relu" | "relu",
//!   "layers": [ { "weight": [row-major in*out floats], "bias": [out floats] }, ... ],
//!   "adam": null | { "config": {...}, "m": [...], "v": [...], "step": n } }
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{Activation, Dense, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ocflow-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LayerRecord {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetCheckpoint {
    format: String,
    version: u32,
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerRecord>,
    adam: Option<Adam>,
}

impl NetCheckpoint {
    pub fn capture(net: &Mlp, adam: Option<&Adam>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            sizes: net.sizes().to_vec(),
            activation: net.activation(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            adam: adam.cloned(),
        }
    }

    pub fn restore(self) -> Result<(Mlp, Option<Adam>)> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.sizes.len() < 2 || self.layers.len() + 1 != self.sizes.len() {
            return Err(Error::Checkpoint("layer count does not match sizes".into()));
        }
        let layers = self
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, rec)| {
                let shape = (self.sizes[i], self.sizes[i + 1]);
                let weight = Array2::from_shape_vec(shape, rec.weight)
                    .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
                Ok(Dense {
                    weight,
                    bias: Array1::from(rec.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Mlp::from_layers(self.sizes, self.activation, layers)?;
        if let Some(adam) = &self.adam {
            if adam.m.len() != net.num_params() || adam.v.len() != net.num_params() {
                return Err(Error::Checkpoint(
                    "optimizer state does not match parameters".into(),
                ));
            }
        }
        Ok((net, self.adam))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
