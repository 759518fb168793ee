use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => f64::from(u8::from(z > 0.0)),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

/// Affine layer. `weight` is `inputs x outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Feedforward network: affine layers with an activation between them and a
/// linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Dense>,
    version: u64,
}

/// Intermediates of a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Array2<f64>>,
}

/// Parameter gradients with the same shapes as the network layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(sizes, activation);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.weight.nrows() as f64).sqrt();
            layer.weight.mapv_inplace(|_| rng.gen_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        net
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self {
            sizes: sizes.to_vec(),
            activation,
            layers,
            version: fresh_version(),
        }
    }

    pub(crate) fn from_layers(
        sizes: Vec<usize>,
        activation: Activation,
        layers: Vec<Dense>,
    ) -> Result<Self> {
        if sizes.len() != layers.len() + 1 {
            return Err(Error::Checkpoint("layer count does not match sizes".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.dim() != (sizes[i], sizes[i + 1]) || layer.bias.len() != sizes[i + 1] {
                return Err(Error::Checkpoint(format!(
                    "layer {i} has inconsistent shape"
                )));
            }
        }
        Ok(Self {
            sizes,
            activation,
            layers,
            version: fresh_version(),
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the parameters; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version = fresh_version();
        &mut self.layers
    }

    /// Zeroes the output-layer weights and biases of the given output columns.
    pub fn zero_outputs(&mut self, columns: std::ops::Range<usize>) {
        let last = self.layers_mut().last_mut().unwrap();
        for c in columns {
            last.weight.column_mut(c).fill(0.0);
            last.bias[c] = 0.0;
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            let nw = layer.weight.len();
            if index < nw {
                let cols = layer.weight.ncols();
                return (l, Some((index / cols, index % cols)), 0);
            }
            index -= nw;
            if index < layer.bias.len() {
                return (l, None, index);
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, index: usize) -> f64 {
        match self.locate(index) {
            (l, Some((i, j)), _) => self.layers[l].weight[(i, j)],
            (l, None, k) => self.layers[l].bias[k],
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let loc = self.locate(index);
        let layers = self.layers_mut();
        match loc {
            (l, Some((i, j)), _) => layers[l].weight[(i, j)] = value,
            (l, None, k) => layers[l].bias[k] = value,
        }
    }

    pub fn param_name(&self, index: usize) -> String {
        match self.locate(index) {
            (l, Some((i, j)), _) => format!("layer{l}.weight[{i},{j}]"),
            (l, None, k) => format!("layer{l}.bias[{k}]"),
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                what: "network input",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass (one row per example) without caching.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            inputs.push(h);
            if l < last {
                let act = self.activation;
                h = z.mapv(|v| act.apply(v));
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((
            h,
            ForwardCache {
                version: self.version,
                inputs,
                pre,
            },
        ))
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect to
    /// the forward outputs is `grad_out`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let rows = cache.inputs[0].nrows();
        if grad_out.dim() != (rows, self.output_dim()) {
            return Err(Error::Shape {
                what: "output gradient",
                expected: rows * self.output_dim(),
                got: grad_out.len(),
            });
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut dz = grad_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let dw = cache.inputs[l].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            if l > 0 {
                let mut da = dz.dot(&layer.weight.t());
                let act = self.activation;
                da.zip_mut_with(&cache.pre[l - 1], |g, &z| *g *= act.derivative(z));
                dz = da;
            }
            grads.push(Dense {
                weight: dw,
                bias: db,
            });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Signs of all hidden pre-activations for the given inputs; used to
    /// detect activation kinks during finite differencing.
    pub fn kink_signature(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        let (_, cache) = self.forward(x)?;
        Ok(cache
            .pre
            .iter()
            .flat_map(|z| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect())
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    /// Gradient of parameter `index` in the same flat order as [`Mlp::param`].
    pub fn get(&self, mut index: usize) -> f64 {
        for layer in &self.layers {
            let nw = layer.weight.len();
            if index < nw {
                let cols = layer.weight.ncols();
                return layer.weight[(index / cols, index % cols)];
            }
            index -= nw;
            if index < layer.bias.len() {
                return layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("gradient index out of range");
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weight
                    .iter()
                    .chain(l.bias.iter())
                    .map(|g| g * g)
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}
