use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Gradients, MlpModel, Mode, NnError};
use crate::data::Dataset;
use crate::emergence::{emergence_layered, EmergenceValue};
use crate::graph::ActivationProfile;
use crate::rng;

/// Rows per chunk when sweeping a whole dataset in evaluation mode.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "TrainConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "TrainConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Mean absolute activation a node must exceed to count as active.
    #[serde(default = "TrainConfig::default_threshold")]
    pub active_threshold: f64,
}

impl TrainConfig {
    fn default_lr() -> f64 {
        0.001
    }
    fn default_batch_size() -> usize {
        128
    }
    fn default_epochs() -> usize {
        5
    }
    fn default_threshold() -> f64 {
        0.01
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: Self::default_lr(),
            batch_size: Self::default_batch_size(),
            epochs: Self::default_epochs(),
            seed: 0,
            active_threshold: Self::default_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the untrained model.
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch losses (evaluation loss for
    /// epoch 0).
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub emergence: EmergenceValue,
    pub profile: ActivationProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearningRate {
    Global(f64),
    /// One rate per weight layer, applied to that layer's weights, bias and
    /// normalization parameters.
    PerLayer(Vec<f64>),
}

pub fn sgd_step(model: &mut MlpModel, grads: &Gradients, lr: &LearningRate) -> Result<(), NnError> {
    let layers = model.layer_count();
    let rates: Vec<f64> = match lr {
        LearningRate::Global(r) => vec![*r; layers],
        LearningRate::PerLayer(r) if r.len() == layers => r.clone(),
        LearningRate::PerLayer(r) => {
            return Err(NnError::LengthMismatch {
                expected: layers,
                got: r.len(),
            })
        }
    };
    if grads.weights.len() != layers || grads.biases.len() != layers {
        return Err(NnError::LengthMismatch {
            expected: layers,
            got: grads.weights.len(),
        });
    }
    for (l, &rate) in rates.iter().enumerate().take(layers) {
        if grads.weights[l].dim() != model.weights.matrices[l].dim() {
            return Err(NnError::ShapeMismatch(format!("weight gradient of layer {}", l + 1)));
        }
        model.weights.matrices[l].scaled_add(-rate, &grads.weights[l]);
        model.weights.biases[l].scaled_add(-rate, &grads.biases[l]);
    }
    if let Some(states) = model.bn.as_mut() {
        if grads.gamma.len() != states.len() || grads.beta.len() != states.len() {
            return Err(NnError::LengthMismatch {
                expected: states.len(),
                got: grads.gamma.len(),
            });
        }
        for (l, state) in states.iter_mut().enumerate() {
            state.gamma.scaled_add(-rates[l], &grads.gamma[l]);
            state.beta.scaled_add(-rates[l], &grads.beta[l]);
        }
    }
    Ok(())
}

fn correct(logits: &Array2<f64>, labels: &[usize]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            best == label
        })
        .count()
}

/// Evaluation-mode loss and accuracy over the whole dataset.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<(f64, f64), NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut loss = 0.0;
    let mut hits = 0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let x = data.features.slice(s![start..end, ..]);
        let labels = &data.labels[start..end];
        let pass = model.forward(x, Mode::Eval)?;
        loss += super::cross_entropy(&pass.logits, labels)? * (end - start) as f64;
        hits += correct(&pass.logits, labels);
    }
    Ok((loss / data.len() as f64, hits as f64 / data.len() as f64))
}

/// Counts, per layer, the nodes whose mean absolute activation over `data`
/// exceeds `threshold`. The input layer is always fully active; hidden
/// layers use post-nonlinearity values and the output layer its logits.
pub fn activation_profile(
    model: &MlpModel,
    data: &Dataset,
    threshold: f64,
) -> Result<ActivationProfile, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let layers = model.layer_count();
    let mut sums: Vec<ndarray::Array1<f64>> = model
        .weights
        .matrices
        .iter()
        .map(|w| ndarray::Array1::zeros(w.nrows()))
        .collect();
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let pass = model.forward(data.features.slice(s![start..end, ..]), Mode::Eval)?;
        for (l, h) in pass.activations.iter().enumerate() {
            sums[l] += &h.mapv(f64::abs).sum_axis(Axis(0));
        }
        sums[layers - 1] += &pass.logits.mapv(f64::abs).sum_axis(Axis(0));
    }
    let n = data.len() as f64;
    let mut counts = vec![model.input_dim()];
    counts.extend(
        sums.iter()
            .map(|s| s.iter().filter(|&&total| total / n > threshold).count()),
    );
    Ok(ActivationProfile(counts))
}

fn profile_and_emergence(
    model: &MlpModel,
    data: &Dataset,
    threshold: f64,
) -> Result<(ActivationProfile, EmergenceValue), NnError> {
    let profile = activation_profile(model, data, threshold)?;
    let emergence = emergence_layered(&model.weights.shape(), &profile)
        .expect("activation profiles always fit the model shape");
    Ok((profile, emergence))
}

/// Epoch-0 record describing the untrained model.
pub fn init_log(
    model: &MlpModel,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<EpochLog, NnError> {
    let (train_loss, train_accuracy) = evaluate(model, train)?;
    let test_accuracy = test.map(|t| evaluate(model, t).map(|r| r.1)).transpose()?;
    let (profile, emergence) = profile_and_emergence(model, train, config.active_threshold)?;
    Ok(EpochLog {
        epoch: 0,
        train_loss,
        train_accuracy,
        test_accuracy,
        emergence,
        profile,
    })
}

/// One pass over `train` in a seeded shuffle order. `epoch` is 1-based and
/// selects the shuffle stream.
pub fn train_epoch(
    model: &mut MlpModel,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
    lr: &LearningRate,
    epoch: usize,
) -> Result<EpochLog, NnError> {
    if train.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = rng::seeded(config.seed, rng::stream::SHUFFLE + epoch as u64);
    order.shuffle(&mut shuffle);

    let batch_size = config.batch_size.max(1);
    let mut loss_sum = 0.0;
    let mut hits = 0;
    for chunk in order.chunks(batch_size) {
        let x = train.features.select(Axis(0), chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
        let (loss, grads, pass) = model.loss_and_grads(x.view(), &labels)?;
        if !loss.is_finite() {
            return Err(NnError::Diverged { epoch });
        }
        loss_sum += loss * chunk.len() as f64;
        hits += correct(&pass.logits, &labels);
        model.update_running_stats(&pass);
        sgd_step(model, &grads, lr)?;
    }
    let train_loss = loss_sum / train.len() as f64;
    let test_accuracy = test.map(|t| evaluate(model, t).map(|r| r.1)).transpose()?;
    let (profile, emergence) = profile_and_emergence(model, train, config.active_threshold)?;
    Ok(EpochLog {
        epoch,
        train_loss,
        train_accuracy: hits as f64 / train.len() as f64,
        test_accuracy,
        emergence,
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::graph::LayeredShape;
    use crate::init::{base_init, BaseScheme};
    use crate::nn::Activation;

    fn model(sizes: &[usize], seed: u64, bn: bool) -> MlpModel {
        let ws = base_init(
            &LayeredShape::new(sizes.to_vec()).unwrap(),
            BaseScheme::KaimingNormal,
            seed,
        )
        .unwrap();
        MlpModel::new(ws, bn, Activation::Relu)
    }

    fn grads_like(m: &MlpModel, value: f64) -> Gradients {
        Gradients {
            weights: m.weights.matrices.iter().map(|w| w.mapv(|_| value)).collect(),
            biases: m.weights.biases.iter().map(|b| b.mapv(|_| value)).collect(),
            gamma: Vec::new(),
            beta: Vec::new(),
        }
    }

    #[test]
    fn sgd_zero_gradient_or_rate_is_a_no_op() {
        let m0 = model(&[3, 4, 2], 1, false);
        let mut m = m0.clone();
        sgd_step(&mut m, &grads_like(&m0, 0.0), &LearningRate::Global(0.1)).unwrap();
        assert_eq!(m, m0);
        sgd_step(&mut m, &grads_like(&m0, 3.0), &LearningRate::Global(0.0)).unwrap();
        assert_eq!(m, m0);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut m = model(&[1, 1], 0, false);
        m.weights.matrices[0][[0, 0]] = 1.0;
        let g = grads_like(&m, 0.5);
        sgd_step(&mut m, &g, &LearningRate::Global(0.1)).unwrap();
        assert_eq!(m.weights.matrices[0][[0, 0]], 0.95);
    }

    #[test]
    fn sgd_per_layer_rates() {
        let mut m = model(&[2, 2, 2], 0, false);
        let before = m.clone();
        let g = grads_like(&m, 1.0);
        sgd_step(&mut m, &g, &LearningRate::PerLayer(vec![0.0, 0.5])).unwrap();
        assert_eq!(m.weights.matrices[0], before.weights.matrices[0]);
        assert_eq!(m.weights.matrices[1], before.weights.matrices[1].mapv(|w| w - 0.5));
        assert!(matches!(
            sgd_step(&mut m, &grads_like(&before, 1.0), &LearningRate::PerLayer(vec![0.1])),
            Err(NnError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_weight_model_has_no_active_hidden_nodes() {
        let mut m = model(&[2, 5, 5, 3], 0, false);
        for w in &mut m.weights.matrices {
            w.fill(0.0);
        }
        let data = gen_blobs(3, 20, 2, 0.5, 0);
        let p = activation_profile(&m, &data, 0.01).unwrap();
        assert_eq!(p.counts(), &[2, 0, 0, 0]);
    }

    #[test]
    fn huge_threshold_deactivates_everything_but_input() {
        let m = model(&[2, 5, 5, 3], 0, false);
        let data = gen_blobs(3, 20, 2, 0.5, 0);
        let p = activation_profile(&m, &data, 1e300).unwrap();
        assert_eq!(p.counts(), &[2, 0, 0, 0]);
        assert_eq!(
            activation_profile(&m, &data, 0.01).unwrap(),
            activation_profile(&m, &data, 0.01).unwrap()
        );
    }

    #[test]
    fn epochs_are_reproducible() {
        let data = gen_blobs(3, 50, 2, 0.3, 4);
        let cfg = TrainConfig {
            batch_size: 16,
            seed: 7,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = model(&[2, 8, 8, 3], 3, true);
            (1..=2)
                .map(|e| train_epoch(&mut m, &data, None, &cfg, &LearningRate::Global(0.01), e).unwrap())
                .collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        for log in &a {
            assert_eq!(
                log.emergence,
                emergence_layered(&LayeredShape::new(vec![2, 8, 8, 3]).unwrap(), &log.profile).unwrap()
            );
        }
    }

    #[test]
    fn zero_rate_epoch_reports_initial_loss() {
        let data = gen_blobs(3, 40, 2, 0.3, 1);
        let mut m = model(&[2, 6, 3], 2, false);
        let (initial, _) = evaluate(&m, &data).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            ..TrainConfig::default()
        };
        let log = train_epoch(&mut m, &data, None, &cfg, &LearningRate::Global(0.0), 1).unwrap();
        assert!((log.train_loss - initial).abs() < 1e-12);
    }

    #[test]
    fn separable_blobs_loss_decreases() {
        let data = gen_blobs(3, 200, 2, 0.1, 5);
        let mut m = model(&[2, 16, 16, 3], 5, false);
        let cfg = TrainConfig::default();
        let losses: Vec<f64> = (1..=3)
            .map(|e| {
                train_epoch(&mut m, &data, None, &cfg, &LearningRate::Global(cfg.lr), e)
                    .unwrap()
                    .train_loss
            })
            .collect();
        assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
    }
}
