//! Feed-forward network with one sigmoid hidden layer and a linear output node.
//!
//! Weights are stored row-major with the bias in the last column:
//! `w_hidden` is `n_hidden x (n_inputs + 1)` and `w_out` is `n_hidden + 1` long.
//! Inputs are z-scored with a scaler fit on the training rows; the target is
//! left in its native units.

mod dataset;
mod grid;
mod train;

pub use dataset::{Dataset, Sample};
pub use grid::{grid_search, GridCell, GridSearchResult, GridSearchSpace};
pub use train::train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnnError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("expected {expected} inputs, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: mse is not finite")]
    DivergenceDetected { epoch: usize },
    #[error("invalid model document: {0}")]
    BadModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Number of epochs over which the best MSE must improve.
    pub window: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            window: 50,
            min_delta: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnConfig {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub early_stop: EarlyStop,
}

impl Default for AnnConfig {
    /// The 3-10-1 topology at learning rate 0.55.
    fn default() -> Self {
        Self {
            n_inputs: 3,
            n_hidden: 10,
            learning_rate: 0.55,
            max_epochs: 2000,
            seed: 0,
            early_stop: EarlyStop::default(),
        }
    }
}

impl AnnConfig {
    pub fn validate(&self) -> Result<(), AnnError> {
        if self.n_inputs == 0 {
            return Err(AnnError::BadConfig("n_inputs must be >= 1".into()));
        }
        if self.n_hidden == 0 {
            return Err(AnnError::BadConfig("n_hidden must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(AnnError::BadConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.early_stop.min_delta.is_finite() && self.early_stop.min_delta >= 0.0) {
            return Err(AnnError::BadConfig("early_stop.min_delta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-input z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Population mean/std per column. Constant columns get std 1 so the
    /// scaled value is zero rather than undefined.
    pub fn fit(rows: &[Sample], n_inputs: usize) -> Self {
        let m = rows.len() as f64;
        let mut mean = vec![0.0; n_inputs];
        for r in rows {
            for (acc, x) in mean.iter_mut().zip(&r.inputs) {
                *acc += x;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; n_inputs];
        for r in rows {
            for ((acc, x), mu) in var.iter_mut().zip(&r.inputs).zip(&mean) {
                *acc += (x - mu) * (x - mu);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / m).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (mu, sd))| (x - mu) / sd)
            .collect()
    }
}

/// Gradient with the same shape as the model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w_hidden: Vec<Vec<f64>>,
    pub w_out: Vec<f64>,
}

impl Gradient {
    fn zeros(n_inputs: usize, n_hidden: usize) -> Self {
        Self {
            w_hidden: vec![vec![0.0; n_inputs + 1]; n_hidden],
            w_out: vec![0.0; n_hidden + 1],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.w_hidden
            .iter()
            .flatten()
            .chain(&self.w_out)
            .fold(0.0_f64, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnModel {
    pub config: AnnConfig,
    pub w_hidden: Vec<Vec<f64>>,
    pub w_out: Vec<f64>,
    pub input_scaler: Scaler,
    #[serde(default)]
    pub training_history: Vec<f64>,
    /// Set when training ended with a higher MSE than it started with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl AnnModel {
    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, drawn from a seeded ChaCha stream.
    pub fn init(config: AnnConfig, seed: u64) -> Result<Self, AnnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r_hidden = 1.0 / ((config.n_inputs + 1) as f64).sqrt();
        let r_out = 1.0 / ((config.n_hidden + 1) as f64).sqrt();
        let w_hidden = (0..config.n_hidden)
            .map(|_| {
                (0..=config.n_inputs)
                    .map(|_| rng.random_range(-r_hidden..=r_hidden))
                    .collect()
            })
            .collect();
        let w_out = (0..=config.n_hidden)
            .map(|_| rng.random_range(-r_out..=r_out))
            .collect();
        let input_scaler = Scaler::identity(config.n_inputs);
        Ok(Self {
            config,
            w_hidden,
            w_out,
            input_scaler,
            training_history: Vec::new(),
            warning: None,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.config.n_inputs
    }

    /// Checks shapes and finiteness, e.g. after deserialization.
    pub fn validate(&self) -> Result<(), AnnError> {
        self.config.validate()?;
        let (ni, nh) = (self.config.n_inputs, self.config.n_hidden);
        if self.w_hidden.len() != nh || self.w_hidden.iter().any(|r| r.len() != ni + 1) {
            return Err(AnnError::BadModel(format!("w_hidden must be {nh}x{}", ni + 1)));
        }
        if self.w_out.len() != nh + 1 {
            return Err(AnnError::BadModel(format!("w_out must have {} entries", nh + 1)));
        }
        if self.w_hidden.iter().flatten().chain(&self.w_out).any(|w| !w.is_finite()) {
            return Err(AnnError::BadModel("non-finite weight".into()));
        }
        let sc = &self.input_scaler;
        if sc.mean.len() != ni || sc.std.len() != ni {
            return Err(AnnError::BadModel("scaler arity mismatch".into()));
        }
        if sc.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || sc.mean.iter().any(|m| !m.is_finite()) {
            return Err(AnnError::BadModel("scaler std must be finite and > 0".into()));
        }
        Ok(())
    }

    fn check_arity(&self, x: &[f64]) -> Result<(), AnnError> {
        if x.len() != self.config.n_inputs {
            return Err(AnnError::ArityMismatch {
                expected: self.config.n_inputs,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Network output for an already scaled input.
    pub fn forward(&self, x: &[f64]) -> Result<f64, AnnError> {
        self.check_arity(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn hidden_activations(&self, x: &[f64], out: &mut [f64]) {
        let ni = self.config.n_inputs;
        for (h, row) in out.iter_mut().zip(&self.w_hidden) {
            let z = row[..ni].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + row[ni];
            *h = sigmoid(z);
        }
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let nh = self.config.n_hidden;
        let mut hidden = vec![0.0; nh];
        self.hidden_activations(x, &mut hidden);
        self.w_out[..nh].iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.w_out[nh]
    }

    /// Scales a raw input vector with the stored scaler, then runs [`AnnModel::forward`].
    pub fn predict(&self, raw_x: &[f64]) -> Result<f64, AnnError> {
        self.check_arity(raw_x)?;
        Ok(self.forward_unchecked(&self.input_scaler.apply(raw_x)))
    }

    /// Mean squared error over raw (unscaled) rows.
    pub fn mse(&self, data: &[Sample]) -> Result<f64, AnnError> {
        if data.is_empty() {
            return Err(AnnError::EmptyDataset);
        }
        let mut acc = 0.0;
        for s in data {
            let e = self.predict(&s.inputs)? - s.target;
            acc += e * e;
        }
        Ok(acc / data.len() as f64)
    }

    /// Analytic gradient of the MSE over raw rows with respect to every weight.
    pub fn gradient(&self, batch: &[Sample]) -> Result<Gradient, AnnError> {
        if batch.is_empty() {
            return Err(AnnError::EmptyDataset);
        }
        for s in batch {
            self.check_arity(&s.inputs)?;
        }
        let scaled: Vec<Vec<f64>> = batch.iter().map(|s| self.input_scaler.apply(&s.inputs)).collect();
        let targets: Vec<f64> = batch.iter().map(|s| s.target).collect();
        Ok(self.gradient_scaled(&scaled, &targets).0)
    }

    /// Gradient of the MSE over pre-scaled rows. Also returns the MSE at the current weights.
    pub(crate) fn gradient_scaled(&self, xs: &[Vec<f64>], targets: &[f64]) -> (Gradient, f64) {
        let ni = self.config.n_inputs;
        let nh = self.config.n_hidden;
        let m = xs.len() as f64;
        let mut grad = Gradient::zeros(ni, nh);
        let mut hidden = vec![0.0; nh];
        let mut sq = 0.0;
        for (x, t) in xs.iter().zip(targets) {
            self.hidden_activations(x, &mut hidden);
            let y = self.w_out[..nh].iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.w_out[nh];
            let err = y - t;
            sq += err * err;
            // d(err^2)/dy = 2 err
            let delta_out = 2.0 * err;
            for j in 0..nh {
                grad.w_out[j] += delta_out * hidden[j];
                let delta_h = delta_out * self.w_out[j] * hidden[j] * (1.0 - hidden[j]);
                let row = &mut grad.w_hidden[j];
                for i in 0..ni {
                    row[i] += delta_h * x[i];
                }
                row[ni] += delta_h;
            }
            grad.w_out[nh] += delta_out;
        }
        for row in &mut grad.w_hidden {
            row.iter_mut().for_each(|g| *g /= m);
        }
        grad.w_out.iter_mut().for_each(|g| *g /= m);
        (grad, sq / m)
    }

    pub(crate) fn apply_step(&mut self, grad: &Gradient, step: f64) {
        for (row, grow) in self.w_hidden.iter_mut().zip(&grad.w_hidden) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= step * g;
            }
        }
        for (w, g) in self.w_out.iter_mut().zip(&grad.w_out) {
            *w -= step * g;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, AnnError> {
        let m: Self = serde_json::from_str(s).map_err(|e| AnnError::BadModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}
