//! Dense feedforward networks with exact analytic gradients.
//!
//! Batches are row-major: a batch of `n` inputs is an `n × in` matrix, and a
//! layer computes `Z = X·Wᵀ + 1·bᵀ` followed by its activation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::TrainConfig;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// ReLU uses the subgradient 0 at exactly 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-a..a));
        Dense {
            weights,
            bias: DVector::zeros(fan_out),
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_size(&self) -> usize {
        self.weights.nrows()
    }
}

/// Parameter gradients, laid out exactly like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &FeedForwardNet) -> Self {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
            biases: net.layers.iter().map(|l| DVector::zeros(l.bias.len())).collect(),
        }
    }

    /// Flat view in the same order as [`FeedForwardNet::params_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn scale(&mut self, k: f64) {
        for w in &mut self.weights {
            *w *= k;
        }
        for b in &mut self.biases {
            *b *= k;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            *w += o;
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            *b += o;
        }
    }
}

/// Intermediate values of a batched forward pass, needed by backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: DMatrix<f64>,
    pre: Vec<DMatrix<f64>>,
    post: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.post.last().unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetCheckpoint", into = "NetCheckpoint")]
pub struct FeedForwardNet {
    layers: Vec<Dense>,
    seed: u64,
    train_config: Option<TrainConfig>,
}

/// On-disk form of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
}

impl From<FeedForwardNet> for NetCheckpoint {
    fn from(net: FeedForwardNet) -> Self {
        NetCheckpoint {
            layer_sizes: net.layer_sizes(),
            activations: net.layers.iter().map(|l| l.activation).collect(),
            params: net.params_flat(),
            seed: net.seed,
            train_config: net.train_config,
        }
    }
}

impl TryFrom<NetCheckpoint> for FeedForwardNet {
    type Error = Error;

    fn try_from(c: NetCheckpoint) -> Result<Self> {
        let mut net = FeedForwardNet::new(&c.layer_sizes, &c.activations, c.seed)?;
        net.set_params_flat(&c.params)?;
        net.train_config = c.train_config;
        Ok(net)
    }
}

impl FeedForwardNet {
    /// `sizes` lists every layer width including input and output;
    /// `activations` has one entry per weight layer.
    pub fn new(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Shape(format!(
                "{} layer sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Shape("layer sizes must be positive".into()));
        }
        let mut rng = rng::stream(&[seed, 0xFEED]);
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::init(w[0], w[1], act, &mut rng))
            .collect();
        Ok(FeedForwardNet {
            layers,
            seed,
            train_config: None,
        })
    }

    /// Hidden layers use `hidden_act`, the output layer is linear.
    pub fn mlp(sizes: &[usize], hidden_act: Activation, seed: u64) -> Result<Self> {
        let n = sizes.len().saturating_sub(1);
        let acts: Vec<_> = (0..n)
            .map(|i| if i + 1 == n { Activation::Identity } else { hidden_act })
            .collect();
        Self::new(sizes, &acts, seed)
    }

    pub fn from_layers(layers: Vec<Dense>, seed: u64) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].output_size() != w[1].input_size() {
                return Err(Error::Shape("adjacent layer sizes disagree".into()));
            }
        }
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        Ok(FeedForwardNet {
            layers,
            seed,
            train_config: None,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn train_config(&self) -> Option<&TrainConfig> {
        self.train_config.as_ref()
    }

    pub fn set_train_config(&mut self, cfg: TrainConfig) {
        self.train_config = Some(cfg);
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size()];
        s.extend(self.layers.iter().map(Dense::output_size));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].output_size()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = it.next().unwrap_or_default();
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.len(),
                self.input_size()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let mut v = DVector::from_column_slice(x);
        for layer in &self.layers {
            let mut z = &layer.bias + &layer.weights * &v;
            z.apply(|u| *u = layer.activation.apply(*u));
            v = z;
        }
        if v.iter().any(|u| !u.is_finite()) {
            return Err(Error::Numeric("non-finite activation in forward pass".into()));
        }
        Ok(v.iter().copied().collect())
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_size() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_size()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = post.last().unwrap_or(x);
            let mut z = prev * layer.weights.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.bias.transpose();
            }
            let a = z.map(|v| layer.activation.apply(v));
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite activation in forward pass".into()));
            }
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache {
            input: x.clone(),
            pre,
            post,
        })
    }

    /// Back-propagates `upstream = ∂L/∂output` (`n × out`). Returns parameter
    /// gradients summed over the batch and `∂L/∂input`.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: &DMatrix<f64>,
    ) -> Result<(Gradients, DMatrix<f64>)> {
        let out = cache.output();
        if upstream.shape() != out.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let act = layer.activation;
            let dz = delta.zip_zip_map(&cache.pre[i], &cache.post[i], |d, z, a| {
                d * act.derivative(z, a)
            });
            let input = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            grads.weights[i] = dz.transpose() * input;
            grads.biases[i] = dz.row_sum().transpose();
            delta = &dz * &layer.weights;
        }
        Ok((grads, delta))
    }

    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let batch = DMatrix::from_row_slice(1, x.len(), x);
        let cache = self.forward_batch(&batch)?;
        let up = DMatrix::from_row_slice(1, upstream.len(), upstream);
        Ok(self.backward_batch(&cache, &up)?.0)
    }

    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_batch(x)?.output().clone())
    }
}
