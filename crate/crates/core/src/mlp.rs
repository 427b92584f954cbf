//! A small fully connected network: ReLU hidden layers, a tanh output layer,
//! He-normal initialization, exact backpropagation of the mean squared
//! error, and AdaGrad updates.
//!
//! All parameters live in one flat vector (per layer: the row-major weight
//! matrix `[fan_out × fan_in]` followed by the biases), with a parallel
//! vector of AdaGrad accumulators.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to the AdaGrad denominator.
pub const ADAGRAD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpConfig {
    pub const HIDDEN_WIDTH: usize = 16;
    pub const HIDDEN_LAYERS: usize = 3;

    /// The guidance network for a particle with `observation_points` ring
    /// points: input `3·(1 + observation_points)`, three hidden layers of 16,
    /// output 2.
    pub fn guidance(observation_points: usize) -> Self {
        let mut layer_sizes = vec![3 * (1 + observation_points)];
        layer_sizes.extend([Self::HIDDEN_WIDTH; Self::HIDDEN_LAYERS]);
        layer_sizes.push(2);
        Self::new(layer_sizes)
    }

    /// ReLU hidden layers and a tanh output with arbitrary sizes.
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("a network needs input and output layers".into()));
        }
        if self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated config")
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

fn layout(config: &MlpConfig) -> Vec<Layer> {
    let mut offset = 0;
    config
        .layer_sizes
        .windows(2)
        .map(|w| {
            let layer = Layer {
                fan_in: w[0],
                fan_out: w[1],
                weights: offset,
                biases: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            layer
        })
        .collect()
}

/// One training example: input and target slices.
pub type Example<'a> = (&'a [f64], &'a [f64]);

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Layer>,
    params: Vec<f64>,
    accumulators: Vec<f64>,
    step_count: u64,
}

impl Mlp {
    /// All parameters zero.
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let n = config.parameter_count();
        Ok(Self {
            layers: layout(&config),
            config,
            params: vec![0.0; n],
            accumulators: vec![0.0; n],
            step_count: 0,
        })
    }

    /// He-normal weights with standard deviation `sqrt(2 / fan_in)`, zero biases.
    pub fn init_he<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for layer in net.layers.clone() {
            let normal = Normal::new(0.0, (2.0 / layer.fan_in as f64).sqrt())
                .expect("positive standard deviation");
            for w in &mut net.params[layer.weights..layer.biases] {
                *w = normal.sample(rng);
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Weights of layer `index` as a row-major `[fan_out × fan_in]` slice.
    pub fn layer_weights(&self, index: usize) -> &[f64] {
        let l = self.layers[index];
        &self.params[l.weights..l.biases]
    }

    pub fn layer_biases(&self, index: usize) -> &[f64] {
        let l = self.layers[index];
        &self.params[l.biases..l.biases + l.fan_out]
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.config.input_size() {
            return Err(Error::Contract(format!(
                "network expects {} inputs, got {}",
                self.config.input_size(),
                input.len()
            )));
        }
        Ok(())
    }

    /// Activations of every layer, input first.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let act = if i == last {
                self.config.output_activation
            } else {
                self.config.hidden_activation
            };
            let prev = &acts[i];
            let w = &self.params[layer.weights..layer.biases];
            let b = &self.params[layer.biases..layer.biases + layer.fan_out];
            let out = (0..layer.fan_out)
                .map(|o| {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    let z = row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>() + b[o];
                    act.apply(z)
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.activations(input).pop().expect("output layer"))
    }

    fn check_batch(&self, batch: &[Example]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Contract("training batch is empty".into()));
        }
        for (input, target) in batch {
            self.check_input(input)?;
            if target.len() != self.config.output_size() {
                return Err(Error::Contract(format!(
                    "target has {} components, network outputs {}",
                    target.len(),
                    self.config.output_size()
                )));
            }
        }
        Ok(())
    }

    /// Mean squared error over every output component of every example.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        self.check_batch(batch)?;
        let denom = (batch.len() * self.config.output_size()) as f64;
        let mut total = 0.0;
        for (input, target) in batch {
            let out = self.activations(input).pop().expect("output layer");
            total += out.iter().zip(*target).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
        }
        Ok(total / denom)
    }

    /// Loss and its exact gradient with respect to the flat parameter vector.
    pub fn loss_and_gradient(&self, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let denom = (batch.len() * self.config.output_size()) as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let last = self.layers.len() - 1;
        for (input, target) in batch {
            let acts = self.activations(input);
            let out = &acts[last + 1];
            // dL/da for the output layer
            let mut delta: Vec<f64> = out
                .iter()
                .zip(*target)
                .map(|(o, t)| {
                    total += (o - t).powi(2);
                    2.0 * (o - t) / denom
                })
                .collect();
            for li in (0..=last).rev() {
                let layer = self.layers[li];
                let act = if li == last {
                    self.config.output_activation
                } else {
                    self.config.hidden_activation
                };
                // dL/dz
                for (d, a) in delta.iter_mut().zip(&acts[li + 1]) {
                    *d *= act.derivative_from_output(*a);
                }
                let prev = &acts[li];
                for o in 0..layer.fan_out {
                    let row = layer.weights + o * layer.fan_in;
                    for (g, a) in grad[row..row + layer.fan_in].iter_mut().zip(prev) {
                        *g += delta[o] * a;
                    }
                    grad[layer.biases + o] += delta[o];
                }
                if li > 0 {
                    let w = &self.params[layer.weights..layer.biases];
                    let mut next = vec![0.0; layer.fan_in];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                        for (n, wv) in next.iter_mut().zip(row) {
                            *n += d * wv;
                        }
                    }
                    delta = next;
                }
            }
        }
        Ok((total / denom, grad))
    }

    /// One AdaGrad step on `batch`; returns the loss before the update.
    pub fn train_batch(&mut self, batch: &[Example], lr: f64) -> Result<f64> {
        let (loss, grad) = self.loss_and_gradient(batch)?;
        for ((p, acc), g) in self.params.iter_mut().zip(&mut self.accumulators).zip(&grad) {
            *acc += g * g;
            *p -= lr * g / (acc.sqrt() + ADAGRAD_EPSILON);
        }
        self.step_count += 1;
        Ok(loss)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&WeightFile::from(self))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_weights(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_weights_json(&text)
    }

    pub fn to_weights_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&WeightFile::from(self))?)
    }

    pub fn from_weights_json(text: &str) -> Result<Self> {
        let file: WeightFile =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        file.into_mlp()
    }
}

pub const WEIGHT_FORMAT: &str = "nngpso-mlp";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

/// On-disk weight format (JSON). Weight matrices are row-major
/// `[fan_out × fan_in]`, one entry per layer transition; the accumulator
/// arrays mirror the parameter arrays.
#[derive(Debug, Serialize, Deserialize)]
struct WeightFile {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    weight_accumulators: Vec<Vec<f64>>,
    bias_accumulators: Vec<Vec<f64>>,
    step_count: u64,
}

impl From<&Mlp> for WeightFile {
    fn from(net: &Mlp) -> Self {
        let slices = |v: &[f64], weights: bool| -> Vec<Vec<f64>> {
            net.layers
                .iter()
                .map(|l| {
                    if weights {
                        v[l.weights..l.biases].to_vec()
                    } else {
                        v[l.biases..l.biases + l.fan_out].to_vec()
                    }
                })
                .collect()
        };
        Self {
            format: WEIGHT_FORMAT.to_string(),
            version: WEIGHT_FORMAT_VERSION,
            layer_sizes: net.config.layer_sizes.clone(),
            hidden_activation: net.config.hidden_activation,
            output_activation: net.config.output_activation,
            weights: slices(&net.params, true),
            biases: slices(&net.params, false),
            weight_accumulators: slices(&net.accumulators, true),
            bias_accumulators: slices(&net.accumulators, false),
            step_count: net.step_count,
        }
    }
}

impl WeightFile {
    fn into_mlp(self) -> Result<Mlp> {
        let bad = |msg: String| Err(Error::Format(msg));
        if self.format != WEIGHT_FORMAT {
            return bad(format!("unknown format tag {:?}", self.format));
        }
        if self.version != WEIGHT_FORMAT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let config = MlpConfig {
            layer_sizes: self.layer_sizes,
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
        };
        config.validate().map_err(|e| Error::Format(e.to_string()))?;
        let mut net = Mlp::zeros(config)?;
        let n_layers = net.layers.len();
        for (name, arrays) in [
            ("weights", &self.weights),
            ("biases", &self.biases),
            ("weight_accumulators", &self.weight_accumulators),
            ("bias_accumulators", &self.bias_accumulators),
        ] {
            if arrays.len() != n_layers {
                return bad(format!(
                    "{name}: {} layers recorded, layer sizes imply {n_layers}",
                    arrays.len()
                ));
            }
        }
        for (i, l) in net.layers.clone().into_iter().enumerate() {
            if self.weights[i].len() != l.fan_in * l.fan_out
                || self.weight_accumulators[i].len() != l.fan_in * l.fan_out
            {
                return bad(format!("layer {i}: weight matrix has the wrong size"));
            }
            if self.biases[i].len() != l.fan_out || self.bias_accumulators[i].len() != l.fan_out {
                return bad(format!("layer {i}: bias vector has the wrong size"));
            }
            net.params[l.weights..l.biases].copy_from_slice(&self.weights[i]);
            net.params[l.biases..l.biases + l.fan_out].copy_from_slice(&self.biases[i]);
            net.accumulators[l.weights..l.biases].copy_from_slice(&self.weight_accumulators[i]);
            net.accumulators[l.biases..l.biases + l.fan_out]
                .copy_from_slice(&self.bias_accumulators[i]);
        }
        net.step_count = self.step_count;
        Ok(net)
    }
}

/// Linear warm-up from `alpha_start` to `alpha_warm` over `warmup_steps`,
/// then cosine decay to `alpha_final` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub alpha_start: f64,
    pub alpha_warm: f64,
    pub alpha_final: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(
        alpha_start: f64,
        alpha_warm: f64,
        alpha_final: f64,
        warmup_steps: usize,
        total_steps: usize,
    ) -> Result<Self> {
        if !(alpha_start <= alpha_warm && alpha_final <= alpha_warm) {
            return Err(Error::Config(
                "warm learning rate must dominate start and final rates".into(),
            ));
        }
        if warmup_steps > total_steps {
            return Err(Error::Config("warm-up longer than the schedule".into()));
        }
        Ok(Self {
            alpha_start,
            alpha_warm,
            alpha_final,
            warmup_steps,
            total_steps,
        })
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Contract(format!(
                "step {step} is past the schedule end {}",
                self.total_steps
            )));
        }
        if step == self.warmup_steps {
            return Ok(self.alpha_warm);
        }
        if step < self.warmup_steps {
            let frac = step as f64 / self.warmup_steps as f64;
            return Ok(self.alpha_start + (self.alpha_warm - self.alpha_start) * frac);
        }
        let frac = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        Ok(self.alpha_final
            + 0.5 * (self.alpha_warm - self.alpha_final) * (1.0 + (PI * frac).cos()))
    }
}
