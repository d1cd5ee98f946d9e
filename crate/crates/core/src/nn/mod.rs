//! A small deterministic MLP: dense layers, ReLU or tanh, optional batch
//! normalization between the affine map and the nonlinearity, softmax
//! cross-entropy and plain SGD. Everything is `f64`.

mod train;

pub use train::{
    activation_profile, evaluate, init_log, sgd_step, train_epoch, EpochLog, LearningRate,
    TrainConfig,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::init::WeightSet;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected {expected} per-layer rates, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("label {label} outside 0..{classes}")]
    Label { label: usize, classes: usize },
    #[error("training diverged in epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("empty dataset")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization.
    Train,
    /// Running statistics for normalization.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub weights: WeightSet,
    /// One entry per hidden layer when batch normalization is on.
    pub bn: Option<Vec<BatchNormState>>,
    pub activation: Activation,
}

/// Per-hidden-layer intermediates kept for backpropagation.
#[derive(Debug, Clone)]
struct HiddenCache {
    input: Array2<f64>,
    /// Input to the nonlinearity (after normalization when enabled).
    pre: Array2<f64>,
    bn: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Array2<f64>,
    /// Post-nonlinearity activations of each hidden layer.
    pub activations: Vec<Array2<f64>>,
    hidden: Vec<HiddenCache>,
    last_input: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Empty when batch normalization is off.
    pub gamma: Vec<Array1<f64>>,
    pub beta: Vec<Array1<f64>>,
}

impl MlpModel {
    pub fn new(weights: WeightSet, use_batchnorm: bool, activation: Activation) -> Self {
        let bn = use_batchnorm.then(|| {
            weights.matrices[..weights.layer_count() - 1]
                .iter()
                .map(|w| BatchNormState::new(w.nrows()))
                .collect()
        });
        Self {
            weights,
            bn,
            activation,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.weights.layer_count()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.matrices[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.matrices[self.layer_count() - 1].nrows()
    }

    pub fn forward(&self, batch: ArrayView2<f64>, mode: Mode) -> Result<ForwardPass, NnError> {
        if batch.ncols() != self.input_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "batch has {} features, model expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let last = self.layer_count() - 1;
        let mut x = batch.to_owned();
        let mut hidden = Vec::with_capacity(last);
        let mut activations = Vec::with_capacity(last);
        for l in 0..last {
            let z = x.dot(&self.weights.matrices[l].t()) + &self.weights.biases[l];
            let (pre, bn) = match &self.bn {
                None => (z, None),
                Some(states) => {
                    let (y, cache) = batchnorm_forward(&z, &states[l], mode);
                    (y, cache)
                }
            };
            let act = self.activation;
            let h = pre.mapv(|v| act.apply(v));
            hidden.push(HiddenCache {
                input: x,
                pre,
                bn,
            });
            activations.push(h.clone());
            x = h;
        }
        let logits = x.dot(&self.weights.matrices[last].t()) + &self.weights.biases[last];
        Ok(ForwardPass {
            logits,
            activations,
            hidden,
            last_input: x,
        })
    }

    /// Mean softmax cross-entropy over the batch and its gradient, with batch
    /// normalization (if any) in training mode.
    pub fn loss_and_grads(
        &self,
        batch: ArrayView2<f64>,
        labels: &[usize],
    ) -> Result<(f64, Gradients, ForwardPass), NnError> {
        if labels.len() != batch.nrows() {
            return Err(NnError::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                batch.nrows()
            )));
        }
        let pass = self.forward(batch, Mode::Train)?;
        let (loss, mut delta) = softmax_cross_entropy(&pass.logits, labels)?;

        let layers = self.layer_count();
        let mut g_w = vec![Array2::zeros((0, 0)); layers];
        let mut g_b = vec![Array1::zeros(0); layers];
        let mut g_gamma = Vec::new();
        let mut g_beta = Vec::new();
        if self.bn.is_some() {
            g_gamma = vec![Array1::zeros(0); layers - 1];
            g_beta = vec![Array1::zeros(0); layers - 1];
        }

        let last = layers - 1;
        g_w[last] = delta.t().dot(&pass.last_input);
        g_b[last] = delta.sum_axis(Axis(0));
        let mut upstream = delta.dot(&self.weights.matrices[last]);

        for l in (0..last).rev() {
            let cache = &pass.hidden[l];
            let act = self.activation;
            let h = &pass.activations[l];
            let mut d_pre = upstream;
            ndarray::Zip::from(&mut d_pre)
                .and(&cache.pre)
                .and(h)
                .for_each(|d, &x, &y| *d *= act.derivative(x, y));
            delta = match (&cache.bn, &self.bn) {
                (Some(bn), Some(states)) => {
                    let (dz, dg, db) = batchnorm_backward(&d_pre, bn, &states[l]);
                    g_gamma[l] = dg;
                    g_beta[l] = db;
                    dz
                }
                _ => d_pre,
            };
            g_w[l] = delta.t().dot(&cache.input);
            g_b[l] = delta.sum_axis(Axis(0));
            upstream = delta.dot(&self.weights.matrices[l]);
        }

        Ok((
            loss,
            Gradients {
                weights: g_w,
                biases: g_b,
                gamma: g_gamma,
                beta: g_beta,
            },
            pass,
        ))
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// estimates.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        let Some(states) = self.bn.as_mut() else {
            return;
        };
        let rows = pass.logits.nrows();
        for (state, cache) in states.iter_mut().zip(&pass.hidden) {
            let Some(bn) = &cache.bn else { continue };
            state.running_mean = &state.running_mean * (1.0 - BN_MOMENTUM) + &bn.batch_mean * BN_MOMENTUM;
            if rows > 1 {
                let unbiased = &bn.batch_var * (rows as f64 / (rows - 1) as f64);
                state.running_var = &state.running_var * (1.0 - BN_MOMENTUM) + unbiased * BN_MOMENTUM;
            }
        }
    }
}

fn batchnorm_forward(
    z: &Array2<f64>,
    state: &BatchNormState,
    mode: Mode,
) -> (Array2<f64>, Option<BnCache>) {
    match mode {
        Mode::Eval => {
            let inv_std = state.running_var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
            let y = (z - &state.running_mean) * &(inv_std * &state.gamma) + &state.beta;
            (y, None)
        }
        Mode::Train => {
            let rows = z.nrows() as f64;
            let mean = z.sum_axis(Axis(0)) / rows;
            let centered = z - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / rows;
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
            let normalized = &centered * &inv_std;
            let y = &normalized * &state.gamma + &state.beta;
            (
                y,
                Some(BnCache {
                    normalized,
                    inv_std,
                    batch_mean: mean,
                    batch_var: var,
                }),
            )
        }
    }
}

fn batchnorm_backward(
    dy: &Array2<f64>,
    cache: &BnCache,
    state: &BatchNormState,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let rows = dy.nrows() as f64;
    let d_gamma = (dy * &cache.normalized).sum_axis(Axis(0));
    let d_beta = dy.sum_axis(Axis(0));
    let d_norm = dy * &state.gamma;
    let sum_d = d_norm.sum_axis(Axis(0));
    let sum_dx = (&d_norm * &cache.normalized).sum_axis(Axis(0));
    let dz = (d_norm * rows - &sum_d - &cache.normalized * &sum_dx) * &(&cache.inv_std / rows);
    (dz, d_gamma, d_beta)
}

/// Row-wise softmax with the max subtracted first.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>), NnError> {
    let classes = logits.ncols();
    let rows = logits.nrows() as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(NnError::Label { label, classes });
        }
        let row = logits.row(r);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        grad[[r, label]] -= 1.0;
    }
    grad /= rows;
    Ok((loss / rows, grad))
}

/// Mean cross-entropy only; used by the finite-difference oracle and for
/// evaluation.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64, NnError> {
    softmax_cross_entropy(logits, labels).map(|(l, _)| l)
}
