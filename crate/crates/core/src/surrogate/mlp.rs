//! Small fully connected network trained by full-batch gradient descent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Linear hidden units; only useful for testing.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation value.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GradientMethod {
    /// Adam update rule on the full batch.
    #[default]
    Adam,
    /// Plain gradient step.
    Sgd,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_epochs() -> usize {
    2000
}
fn default_lr() -> f64 {
    0.01
}
fn default_decay_epochs() -> Vec<usize> {
    vec![1000, 1500]
}
fn default_decay_factor() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    #[serde(default = "default_decay_epochs")]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default)]
    pub method: GradientMethod,
    /// L2 penalty on weights (not biases).
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: Activation::Tanh,
            epochs: default_epochs(),
            learning_rate: default_lr(),
            decay_epochs: default_decay_epochs(),
            decay_factor: default_decay_factor(),
            method: GradientMethod::Adam,
            weight_decay: 0.0,
        }
    }
}

/// Single-output network. Parameters are stored flat, layer by layer, as a
/// row-major weight matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(n_inputs: usize, hidden: &[usize], activation: Activation, seed: u64) -> Self {
        let mut layers = vec![n_inputs];
        layers.extend_from_slice(hidden);
        layers.push(1);
        let mut rng = seed::rng(seed);
        let mut params = Vec::new();
        for w in layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { layers, activation, params }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.layers
            .windows(2)
            .map(|w| {
                let o = (at, at + w[0] * w[1]);
                at += w[0] * w[1] + w[1];
                o
            })
            .collect()
    }

    /// Activations of every layer, input included.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let offsets = self.offsets();
        let n_layers = offsets.len();
        let mut acts = vec![x.to_vec()];
        for (l, (w0, b0)) in offsets.into_iter().enumerate() {
            let (n_in, n_out) = (self.layers[l], self.layers[l + 1]);
            let prev = &acts[l];
            let next: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &self.params[w0 + o * n_in..w0 + (o + 1) * n_in];
                    let z = self.params[b0 + o] + row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
                    if l + 1 == n_layers {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
            acts.push(next);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_all(x).last().expect("output layer")[0]
    }

    /// Accumulates `scale · ∂f/∂θ` into `grad`.
    fn backward(&self, acts: &[Vec<f64>], scale: f64, grad: &mut [f64]) {
        let offsets = self.offsets();
        let mut delta = vec![scale];
        for l in (0..offsets.len()).rev() {
            let (w0, b0) = offsets[l];
            let n_in = self.layers[l];
            let prev = &acts[l];
            for (o, d) in delta.iter().enumerate() {
                grad[b0 + o] += d;
                let g = &mut grad[w0 + o * n_in..w0 + (o + 1) * n_in];
                for (gi, a) in g.iter_mut().zip(prev) {
                    *gi += d * a;
                }
            }
            if l == 0 {
                break;
            }
            delta = (0..n_in)
                .map(|i| {
                    let back: f64 = delta
                        .iter()
                        .enumerate()
                        .map(|(o, d)| d * self.params[w0 + o * n_in + i])
                        .sum();
                    back * self.activation.derivative(prev[i])
                })
                .collect();
        }
    }

    /// Mean of `½(f(x) − t)²` over the batch and its parameter gradient.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ts: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let n = xs.len() as f64;
        for (x, t) in xs.iter().zip(ts) {
            let acts = self.forward_all(x);
            let r = acts.last().expect("output layer")[0] - t;
            loss += 0.5 * r * r;
            self.backward(&acts, r / n, &mut grad);
        }
        (loss / n, grad)
    }

    pub fn loss(&self, xs: &[Vec<f64>], ts: &[f64]) -> f64 {
        let n = xs.len() as f64;
        xs.iter().zip(ts).map(|(x, t)| 0.5 * (self.forward(x) - t).powi(2)).sum::<f64>() / n
    }

    /// Fits the network to `(xs, ts)` and returns it. Deterministic given the
    /// seed; fails with the epoch index if the loss stops being finite.
    pub fn train(xs: &[Vec<f64>], ts: &[f64], config: &MlpConfig, seed: u64) -> Result<Self> {
        let n_inputs = xs.first().map_or(0, Vec::len);
        let mut net = Self::init(n_inputs, &config.hidden, config.activation, seed);
        let weight_mask: Vec<bool> = {
            let mut m = vec![false; net.params.len()];
            for (w0, b0) in net.offsets() {
                m[w0..b0].iter_mut().for_each(|v| *v = true);
            }
            m
        };
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let mut m = vec![0.0; net.params.len()];
        let mut v = vec![0.0; net.params.len()];
        let mut lr = config.learning_rate;
        for epoch in 0..config.epochs {
            if config.decay_epochs.contains(&epoch) {
                lr *= config.decay_factor;
            }
            let (loss, mut grad) = net.loss_and_gradient(xs, ts);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            if config.weight_decay > 0.0 {
                for ((g, p), is_w) in grad.iter_mut().zip(&net.params).zip(&weight_mask) {
                    if *is_w {
                        *g += config.weight_decay * p;
                    }
                }
            }
            match config.method {
                GradientMethod::Sgd => {
                    for (p, g) in net.params.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                GradientMethod::Adam => {
                    let t = (epoch + 1) as i32;
                    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                    for i in 0..net.params.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                        net.params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
        let final_loss = net.loss(xs, ts);
        if !final_loss.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { epoch: config.epochs });
        }
        Ok(net)
    }

    /// Compares backpropagated gradients of `½(f(x) − t)²` against central
    /// finite differences with step `h`; returns the largest relative error
    /// `|g − ĝ| / max(|g|, |ĝ|, 1e-6)` over all parameters.
    pub fn gradient_check(&self, x: &[f64], target: f64, h: f64) -> f64 {
        let (_, grad) = self.loss_and_gradient(&[x.to_vec()], &[target]);
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for i in 0..self.params.len() {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let up = 0.5 * (probe.forward(x) - target).powi(2);
            probe.params[i] = orig - h;
            let down = 0.5 * (probe.forward(x) - target).powi(2);
            probe.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
        worst
    }
}
