//! A small fully-connected network with dropout, trained by mini-batch SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    /// Linear hidden units; used to build nets that are linear past dropout.
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

    /// Derivative expressed through the activation output `a`.
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub nodes_per_layer: usize,
    pub output_dim: usize,
    pub dropout_prob: f64,
    pub activation: Activation,
}

impl MlpArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument(
                "input and output dimensions must be positive".into(),
            ));
        }
        if self.hidden_layers == 0 || self.nodes_per_layer == 0 {
            return Err(Error::InvalidArgument(
                "at least one hidden layer with one node is required".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must lie in [0, 1), got {}",
                self.dropout_prob
            )));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_layers + 2);
        w.push(self.input_dim);
        w.extend(std::iter::repeat_n(self.nodes_per_layer, self.hidden_layers));
        w.push(self.output_dim);
        w
    }

    pub fn param_count(&self) -> u64 {
        self.widths()
            .windows(2)
            .map(|p| (p[0] * p[1] + p[1]) as u64)
            .sum()
    }
}

/// One affine layer; `weights` is row-major `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::InvalidArgument(format!(
                "layer shape mismatch: {outputs}x{inputs} needs {} weights and {outputs} biases",
                inputs * outputs
            )));
        }
        Ok(Layer {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(z + self.bias[o]);
        }
    }
}

/// Weights and biases of a network. Every layer but the last is followed by
/// the activation (and dropout, when active); the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl ModelWeights {
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::InvalidArgument(format!(
                    "layer output width {} does not feed next layer input width {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(ModelWeights { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| (l.weights.len() + l.bias.len()) as u64)
            .sum()
    }

    fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights (`U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`),
/// zero biases.
pub fn init_weights(arch: &MlpArchitecture, seed: u64) -> Result<ModelWeights> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .widths()
        .windows(2)
        .map(|p| {
            let (fan_in, fan_out) = (p[0], p[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            Layer {
                inputs: fan_in,
                outputs: fan_out,
                weights,
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    ModelWeights::from_layers(layers, arch.activation)
}

pub fn forward(weights: &ModelWeights, x: &[f64]) -> Result<Vec<f64>> {
    propagate(weights, x, |_, _| 1.0)
}

/// Forward pass with a fresh dropout mask on every hidden unit: each is
/// zeroed with probability `p`, survivors are scaled by `1 / (1 - p)`.
pub fn forward_dropout<R: Rng + ?Sized>(
    weights: &ModelWeights,
    x: &[f64],
    p: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_dropout(p)?;
    if p == 0.0 {
        return forward(weights, x);
    }
    let keep_scale = 1.0 / (1.0 - p);
    propagate(weights, x, |_, _| {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep_scale
        }
    })
}

/// Forward pass with an explicit mask value (0 or `1/(1-p)`) supplied per
/// hidden unit as `mask(layer, unit)`.
pub fn forward_masked(
    weights: &ModelWeights,
    x: &[f64],
    mask: impl FnMut(usize, usize) -> f64,
) -> Result<Vec<f64>> {
    propagate(weights, x, mask)
}

fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(())
}

fn propagate(
    weights: &ModelWeights,
    x: &[f64],
    mut mask: impl FnMut(usize, usize) -> f64,
) -> Result<Vec<f64>> {
    if x.len() != weights.input_dim() {
        return Err(Error::dims(weights.input_dim(), x.len()));
    }
    let last = weights.layers.len() - 1;
    let mut a = x.to_vec();
    let mut z = Vec::new();
    for (l, layer) in weights.layers.iter().enumerate() {
        layer.affine(&a, &mut z);
        if l == last {
            return Ok(z);
        }
        a.clear();
        for (u, &zu) in z.iter().enumerate() {
            a.push(weights.activation.apply(zu) * mask(l, u));
        }
    }
    unreachable!("network has at least one layer")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Mean over samples of the per-output mean squared error, no dropout.
pub fn inner_loss(weights: &ModelWeights, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (x, z) in data.inputs.iter().zip(&data.targets) {
        let y = forward(weights, x)?;
        total += mse(&y, z);
    }
    Ok(total / data.len() as f64)
}

fn mse(y: &[f64], z: &[f64]) -> f64 {
    y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Mini-batch SGD on the mean-squared loss with dropout active on hidden units.
///
/// Weights are initialised from `cfg.seed`; batch order and dropout masks use
/// a separate stream of the same seed.
pub fn train(arch: &MlpArchitecture, data: &Dataset, cfg: &TrainingConfig) -> Result<ModelWeights> {
    arch.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if data.input_dim() != arch.input_dim || data.target_dim() != arch.output_dim {
        return Err(Error::InvalidArgument(format!(
            "dataset shape {}->{} does not match architecture {}->{}",
            data.input_dim(),
            data.target_dim(),
            arch.input_dim,
            arch.output_dim
        )));
    }
    if cfg.batch_size == 0 || cfg.batch_size > data.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} must lie in 1..={}",
            cfg.batch_size,
            data.len()
        )));
    }
    if !(cfg.learning_rate >= 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {}",
            cfg.learning_rate
        )));
    }

    let mut weights = init_weights(arch, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let p = arch.dropout_prob;
    let keep_scale = 1.0 / (1.0 - p);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(&weights);
    let mut tape = Tape::default();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                tape.record(&weights, &data.inputs[i], |_, _| {
                    if p > 0.0 && rng.random::<f64>() < p {
                        0.0
                    } else if p > 0.0 {
                        keep_scale
                    } else {
                        1.0
                    }
                });
                epoch_loss += tape.backward(&weights, &data.targets[i], batch.len(), &mut grads);
            }
            grads.apply(&mut weights, cfg.learning_rate);
        }
        if !epoch_loss.is_finite() || !weights.is_finite() {
            return Err(Error::Diverged);
        }
    }
    Ok(weights)
}

/// Per-sample activations kept for backpropagation.
#[derive(Default)]
struct Tape {
    /// Layer inputs: `inputs[l]` feeds layer `l`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    /// Post-activation (before mask) of hidden layers.
    post: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    fn record(&mut self, w: &ModelWeights, x: &[f64], mut mask: impl FnMut(usize, usize) -> f64) {
        let n = w.layers.len();
        self.inputs.resize(n, Vec::new());
        self.pre.resize(n - 1, Vec::new());
        self.post.resize(n - 1, Vec::new());
        self.masks.resize(n - 1, Vec::new());
        self.inputs[0].clear();
        self.inputs[0].extend_from_slice(x);
        let mut z = Vec::new();
        for (l, layer) in w.layers.iter().enumerate() {
            layer.affine(&self.inputs[l], &mut z);
            if l == n - 1 {
                self.output.clone_from(&z);
                break;
            }
            let post: Vec<f64> = z.iter().map(|&v| w.activation.apply(v)).collect();
            let m: Vec<f64> = (0..layer.outputs).map(|u| mask(l, u)).collect();
            self.inputs[l + 1] = post.iter().zip(&m).map(|(a, k)| a * k).collect();
            self.pre[l].clone_from(&z);
            self.post[l] = post;
            self.masks[l] = m;
        }
    }

    /// Accumulates gradients of the batch-mean loss; returns this sample's loss.
    fn backward(&self, w: &ModelWeights, target: &[f64], batch: usize, g: &mut Gradients) -> f64 {
        let out = self.output.len();
        let loss = mse(&self.output, target);
        let scale = 2.0 / (batch * out) as f64;
        let mut delta: Vec<f64> = self
            .output
            .iter()
            .zip(target)
            .map(|(y, z)| scale * (y - z))
            .collect();
        for l in (0..w.layers.len()).rev() {
            let layer = &w.layers[l];
            let input = &self.inputs[l];
            for o in 0..layer.outputs {
                g.bias[l][o] += delta[o];
                let row = &mut g.weights[l][o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += delta[o] * a;
                }
            }
            if l == 0 {
                break;
            }
            // Back through mask and activation of hidden layer l-1.
            let h = l - 1;
            let mut prev = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, wv) in prev.iter_mut().zip(row) {
                    *p += d * wv;
                }
            }
            for (u, p) in prev.iter_mut().enumerate() {
                *p *= self.masks[h][u] * w.activation.derivative(self.pre[h][u], self.post[h][u]);
            }
            delta = prev;
        }
        loss
    }
}

struct Gradients {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(w: &ModelWeights) -> Self {
        Gradients {
            weights: w.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: w.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().for_each(|g| g.fill(0.0));
        self.bias.iter_mut().for_each(|g| g.fill(0.0));
    }

    fn apply(&self, w: &mut ModelWeights, lr: f64) {
        for (l, layer) in w.layers.iter_mut().enumerate() {
            for (p, g) in layer.weights.iter_mut().zip(&self.weights[l]) {
                *p -= lr * g;
            }
            for (p, g) in layer.bias.iter_mut().zip(&self.bias[l]) {
                *p -= lr * g;
            }
        }
    }
}
