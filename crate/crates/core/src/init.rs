//! Weight initialization: Xavier and Kaiming base schemes, the layer-wise
//! α-scaling that pushes activity from early layers to late ones, and the
//! heuristics for picking α and per-layer learning rates.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::LayeredShape;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("schedule has {schedule} entries for {layers} weight layers")]
    LengthMismatch { schedule: usize, layers: usize },
    #[error("{name} must be positive and finite, got {value}")]
    Domain { name: &'static str, value: f64 },
    #[error("explicit center {center} outside [1, {layers}]")]
    Center { center: f64, layers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseScheme {
    XavierUniform,
    XavierNormal,
    KaimingNormal,
}

impl BaseScheme {
    pub fn variance(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            BaseScheme::XavierUniform | BaseScheme::XavierNormal => {
                2.0 / (fan_in + fan_out) as f64
            }
            BaseScheme::KaimingNormal => 2.0 / fan_in as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseScheme::XavierUniform => "xavier_uniform",
            BaseScheme::XavierNormal => "xavier_normal",
            BaseScheme::KaimingNormal => "kaiming_normal",
        }
    }
}

impl std::str::FromStr for BaseScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xavier_uniform" | "xavier" => Ok(Self::XavierUniform),
            "xavier_normal" => Ok(Self::XavierNormal),
            "kaiming_normal" | "kaiming" => Ok(Self::KaimingNormal),
            other => Err(format!(
                "unknown base scheme `{other}` (expected xavier_uniform, xavier_normal or kaiming_normal)"
            )),
        }
    }
}

/// Where the exponent sequence crosses zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PivotMode {
    /// Symmetric around `(L + 1) / 2`.
    #[default]
    Auto,
    /// Exponent of layer `l` is `l − center`.
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub base_scheme: BaseScheme,
    pub alpha: f64,
    #[serde(default)]
    pub pivot_mode: PivotMode,
    pub seed: u64,
}

/// Dense layer parameters. `matrices[l]` is `fan_out × fan_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub matrices: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl WeightSet {
    /// Checks that consecutive layers chain and that biases match.
    pub fn validate(&self) -> Result<(), InitError> {
        if self.matrices.is_empty() {
            return Err(InitError::InvalidShape("no layers".into()));
        }
        if self.matrices.len() != self.biases.len() {
            return Err(InitError::InvalidShape(format!(
                "{} matrices but {} bias vectors",
                self.matrices.len(),
                self.biases.len()
            )));
        }
        for (l, (w, b)) in self.matrices.iter().zip(&self.biases).enumerate() {
            if b.len() != w.nrows() {
                return Err(InitError::InvalidShape(format!(
                    "layer {}: bias length {} for {} rows",
                    l + 1,
                    b.len(),
                    w.nrows()
                )));
            }
        }
        for (l, pair) in self.matrices.windows(2).enumerate() {
            if pair[1].ncols() != pair[0].nrows() {
                return Err(InitError::InvalidShape(format!(
                    "layer {} has {} inputs but layer {} has {} outputs",
                    l + 2,
                    pair[1].ncols(),
                    l + 1,
                    pair[0].nrows()
                )));
            }
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.matrices.len()
    }

    /// Node counts, input first.
    pub fn shape(&self) -> LayeredShape {
        let mut sizes = vec![self.matrices[0].ncols()];
        sizes.extend(self.matrices.iter().map(|w| w.nrows()));
        LayeredShape::new(sizes).expect("a validated weight set has nonempty layers")
    }
}

pub fn base_init(
    shape: &LayeredShape,
    scheme: BaseScheme,
    seed: u64,
) -> Result<WeightSet, InitError> {
    let sizes = shape.sizes();
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(InitError::InvalidShape(format!("{sizes:?}")));
    }
    let mut matrices = Vec::with_capacity(sizes.len() - 1);
    let mut biases = Vec::with_capacity(sizes.len() - 1);
    for (l, pair) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut rng = rng::seeded(seed, rng::stream::WEIGHTS + l as u64);
        let var = scheme.variance(fan_in, fan_out);
        let data: Vec<f64> = match scheme {
            BaseScheme::XavierUniform => {
                let bound = (3.0 * var).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                dist.sample_iter(&mut rng).take(fan_in * fan_out).collect()
            }
            BaseScheme::XavierNormal | BaseScheme::KaimingNormal => {
                let dist = Normal::new(0.0, var.sqrt()).expect("finite std");
                dist.sample_iter(&mut rng).take(fan_in * fan_out).collect()
            }
        };
        matrices.push(Array2::from_shape_vec((fan_out, fan_in), data).expect("sized buffer"));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(WeightSet { matrices, biases })
}

/// Per-layer factors `α^{e_l}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub multipliers: Vec<f64>,
    pub exponents: Vec<f64>,
}

impl ScaleSchedule {
    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    pub fn exponent_sum(&self) -> f64 {
        self.exponents.iter().sum()
    }
}

fn alpha_pow(alpha: f64, e: f64) -> f64 {
    // integral exponents go through powi so powers of two stay exact
    if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
        alpha.powi(e as i32)
    } else {
        alpha.powf(e)
    }
}

/// Exponents `e_l = l − c` for `l = 1..=L`, with `c = (L + 1) / 2` in auto
/// mode. For odd `L` and auto mode that is `−n, …, 0, …, n`; for even `L`
/// the exponents are half-integers and still sum to zero.
pub fn scale_schedule(
    layers: usize,
    alpha: f64,
    pivot_mode: PivotMode,
) -> Result<ScaleSchedule, InitError> {
    if layers == 0 {
        return Err(InitError::InvalidShape("schedule needs at least one layer".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(InitError::Domain {
            name: "alpha",
            value: alpha,
        });
    }
    let center = match pivot_mode {
        PivotMode::Auto => (layers as f64 + 1.0) / 2.0,
        PivotMode::Explicit(c) => {
            if !(1.0..=layers as f64).contains(&c) {
                return Err(InitError::Center { center: c, layers });
            }
            c
        }
    };
    let exponents: Vec<f64> = (1..=layers).map(|l| l as f64 - center).collect();
    let multipliers = exponents.iter().map(|&e| alpha_pow(alpha, e)).collect();
    Ok(ScaleSchedule {
        multipliers,
        exponents,
    })
}

/// Multiplies every entry of `W_l` by the schedule's `l`-th factor. Biases
/// are left alone.
pub fn apply_emergence_scaling(
    weights: &WeightSet,
    schedule: &ScaleSchedule,
) -> Result<WeightSet, InitError> {
    if schedule.len() != weights.layer_count() {
        return Err(InitError::LengthMismatch {
            schedule: schedule.len(),
            layers: weights.layer_count(),
        });
    }
    let matrices = weights
        .matrices
        .iter()
        .zip(&schedule.multipliers)
        .map(|(w, &m)| w.mapv(|x| x * m))
        .collect();
    Ok(WeightSet {
        matrices,
        biases: weights.biases.clone(),
    })
}

/// Base init followed by the α-scaling described by `config`.
pub fn emergence_init(shape: &LayeredShape, config: &InitConfig) -> Result<WeightSet, InitError> {
    let base = base_init(shape, config.base_scheme, config.seed)?;
    let schedule = scale_schedule(base.layer_count(), config.alpha, config.pivot_mode)?;
    apply_emergence_scaling(&base, &schedule)
}

fn positive(name: &'static str, value: f64) -> Result<f64, InitError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(InitError::Domain { name, value })
    }
}

/// Re-targets α for a new learning rate, assuming the initial gradient grows
/// like `α^N`: `α = α₀ (η₀ / η)^{1/N}`.
pub fn alpha_for_learning_rate(alpha0: f64, eta0: f64, eta: f64, layers: f64) -> Result<f64, InitError> {
    let alpha0 = positive("alpha0", alpha0)?;
    let eta0 = positive("eta0", eta0)?;
    let eta = positive("eta", eta)?;
    let layers = positive("layers", layers)?;
    Ok(alpha0 * (eta0 / eta).powf(1.0 / layers))
}

/// Rates proportional to `1/√g_l`, rescaled so their mean is `base_lr`.
pub fn layerwise_learning_rates(grad_sq_norms: &[f64], base_lr: f64) -> Result<Vec<f64>, InitError> {
    let base_lr = positive("base_lr", base_lr)?;
    if grad_sq_norms.is_empty() {
        return Err(InitError::InvalidShape("no gradient norms".into()));
    }
    let inv: Vec<f64> = grad_sq_norms
        .iter()
        .map(|&g| positive("grad_sq_norm", g).map(|g| 1.0 / g.sqrt()))
        .collect::<Result<_, _>>()?;
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    Ok(inv.iter().map(|r| base_lr * r / mean).collect())
}

/// Heuristic α: 2 for ordinary stacks, 10 for two-layer blocks or when batch
/// normalization keeps the activations in check.
pub fn recommended_alpha(layers: usize, with_batchnorm: bool) -> f64 {
    if layers <= 2 || with_batchnorm {
        10.0
    } else {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(v: &[usize]) -> LayeredShape {
        LayeredShape::new(v.to_vec()).unwrap()
    }

    #[test]
    fn scheme_variances() {
        assert_eq!(BaseScheme::KaimingNormal.variance(50, 7), 0.04);
        assert_eq!(BaseScheme::XavierUniform.variance(100, 100), 0.01);
        assert_eq!(BaseScheme::XavierNormal.variance(100, 100), 0.01);
    }

    fn empirical_variance(ws: &WeightSet) -> f64 {
        let w = &ws.matrices[0];
        let n = w.len() as f64;
        let mean = w.sum() / n;
        w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn empirical_variance_tracks_target() {
        let s = shape(&[100, 100]);
        for scheme in [BaseScheme::XavierUniform, BaseScheme::XavierNormal] {
            let ws = base_init(&s, scheme, 11).unwrap();
            let v = empirical_variance(&ws);
            assert!((v - 0.01).abs() < 0.001, "{scheme:?}: {v}");
        }
        let ws = base_init(&shape(&[50, 200]), BaseScheme::KaimingNormal, 3).unwrap();
        let v = empirical_variance(&ws);
        assert!((v - 0.04).abs() < 0.004, "{v}");
    }

    #[test]
    fn base_init_is_deterministic_and_seed_sensitive() {
        let s = shape(&[3, 5, 2]);
        let a = base_init(&s, BaseScheme::KaimingNormal, 9).unwrap();
        let b = base_init(&s, BaseScheme::KaimingNormal, 9).unwrap();
        let c = base_init(&s, BaseScheme::KaimingNormal, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate().unwrap();
        assert_eq!(a.matrices[0].dim(), (5, 3));
        assert_eq!(a.matrices[1].dim(), (2, 5));
        assert!(a.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
        assert_eq!(a.shape(), s);
    }

    #[test]
    fn schedule_examples() {
        let s = scale_schedule(5, 2.0, PivotMode::Auto).unwrap();
        assert_eq!(s.multipliers, vec![0.25, 0.5, 1.0, 2.0, 4.0]);
        assert_eq!(s.exponent_sum(), 0.0);

        let s = scale_schedule(4, 2.0, PivotMode::Auto).unwrap();
        assert_eq!(s.exponents, vec![-1.5, -0.5, 0.5, 1.5]);
        let expected = [2f64.powf(-1.5), 2f64.powf(-0.5), 2f64.powf(0.5), 2f64.powf(1.5)];
        assert_eq!(s.multipliers, expected);

        let s = scale_schedule(7, 1.0, PivotMode::Auto).unwrap();
        assert!(s.multipliers.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn explicit_center_shifts_exponents() {
        let s = scale_schedule(4, 2.0, PivotMode::Explicit(1.0)).unwrap();
        assert_eq!(s.exponents, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(s.multipliers, vec![1.0, 2.0, 4.0, 8.0]);
        assert!(matches!(
            scale_schedule(4, 2.0, PivotMode::Explicit(5.0)),
            Err(InitError::Center { .. })
        ));
    }

    #[test]
    fn schedule_rejects_bad_alpha() {
        assert!(scale_schedule(3, 0.0, PivotMode::Auto).is_err());
        assert!(scale_schedule(3, -2.0, PivotMode::Auto).is_err());
        assert!(scale_schedule(3, f64::NAN, PivotMode::Auto).is_err());
        assert!(scale_schedule(0, 2.0, PivotMode::Auto).is_err());
    }

    #[test]
    fn scaling_is_elementwise() {
        let ws = base_init(&shape(&[2, 3, 3, 2]), BaseScheme::XavierUniform, 1).unwrap();
        let mut ws = ws;
        ws.matrices[2][[0, 0]] = 0.5;
        let schedule = ScaleSchedule {
            multipliers: vec![1.0, 1.0, 2.0],
            exponents: vec![0.0, 0.0, 1.0],
        };
        let scaled = apply_emergence_scaling(&ws, &schedule).unwrap();
        assert_eq!(scaled.matrices[2][[0, 0]], 1.0);
        assert_eq!(scaled.matrices[0], ws.matrices[0]);
        assert_eq!(scaled.biases, ws.biases);
    }

    #[test]
    fn unit_alpha_is_bitwise_identity() {
        let ws = base_init(&shape(&[4, 6, 6, 3]), BaseScheme::KaimingNormal, 5).unwrap();
        let s = scale_schedule(3, 1.0, PivotMode::Auto).unwrap();
        let out = apply_emergence_scaling(&ws, &s).unwrap();
        for (a, b) in ws.matrices.iter().zip(&out.matrices) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn scaling_length_mismatch() {
        let ws = base_init(&shape(&[2, 2, 2]), BaseScheme::KaimingNormal, 0).unwrap();
        let s = scale_schedule(3, 2.0, PivotMode::Auto).unwrap();
        assert_eq!(
            apply_emergence_scaling(&ws, &s),
            Err(InitError::LengthMismatch {
                schedule: 3,
                layers: 2
            })
        );
    }

    #[test]
    fn alpha_for_learning_rate_examples() {
        let a = alpha_for_learning_rate(2.0, 1e-3, 1e-4, 2.0).unwrap();
        assert!((a - 6.32).abs() <= 0.01, "{a}");
        assert_eq!(alpha_for_learning_rate(2.0, 1e-3, 1e-3, 3.0).unwrap(), 2.0);
        let a = alpha_for_learning_rate(2.0, 1e-3, 1e-5, 2.0).unwrap();
        assert!((a - 20.0).abs() < 1e-9);
        assert!(alpha_for_learning_rate(2.0, 0.0, 1e-5, 2.0).is_err());
        assert!(alpha_for_learning_rate(-1.0, 1e-3, 1e-5, 2.0).is_err());
    }

    #[test]
    fn layerwise_rates() {
        assert_eq!(
            layerwise_learning_rates(&[3.0, 3.0, 3.0], 0.01).unwrap(),
            vec![0.01, 0.01, 0.01]
        );
        let r = layerwise_learning_rates(&[1.0, 4.0], 0.001).unwrap();
        assert!((r[0] - 0.001_333_333_333_333_333).abs() < 1e-15);
        assert!((r[1] - 0.000_666_666_666_666_666_7).abs() < 1e-15);
        assert!((r[0] / r[1] - 2.0).abs() < 1e-12);
        assert!(layerwise_learning_rates(&[1.0, 0.0], 0.001).is_err());
        assert!(layerwise_learning_rates(&[], 0.001).is_err());
    }

    #[test]
    fn recommended_alpha_values() {
        assert_eq!(recommended_alpha(5, false), 2.0);
        assert_eq!(recommended_alpha(2, false), 10.0);
        assert_eq!(recommended_alpha(5, true), 10.0);
    }
}
