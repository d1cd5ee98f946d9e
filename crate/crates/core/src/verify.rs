//! Randomized oracle battery: closed forms against path enumeration, the
//! derived-functor dimension against the network measure, and
//! backpropagation against central finite differences.
//!
//! Each check reports the first counterexample it finds.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::emergence::{
    derived_functor_dim_within, emergence_layered, emergence_network, EmergenceValue,
};
use crate::graph::{
    build_layered_quiver, enumerate_paths, ActivationProfile, LayeredShape, QuiverRep, VertexSet,
};
use crate::init::{base_init, BaseScheme};
use crate::nn::{cross_entropy, Activation, Gradients, MlpModel, Mode};
use crate::rng;

/// Largest bounds `verify` accepts; enumeration is exponential in depth.
pub const MAX_LAYERS: usize = 6;
pub const MAX_WIDTH: usize = 8;

pub const FD_EPSILON: f64 = 1e-5;
pub const GRAD_REL_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so entries that are zero
/// analytically are compared against finite-difference noise in absolute
/// terms.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub max_layers: usize,
    pub max_width: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            max_layers: 5,
            max_width: 6,
            trials: 200,
            seed: 0,
        }
    }
}

impl VerifyOptions {
    pub fn check_bounds(&self) -> Result<(), String> {
        if self.max_layers < 2 || self.max_layers > MAX_LAYERS {
            return Err(format!("--max-layers must be in 2..={MAX_LAYERS}"));
        }
        if self.max_width < 1 || self.max_width > MAX_WIDTH {
            return Err(format!("--max-width must be in 1..={MAX_WIDTH}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub counterexample: Option<String>,
}

impl PropertyOutcome {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

pub fn random_shape(rng: &mut ChaCha8Rng, max_layers: usize, max_width: usize) -> LayeredShape {
    let depth = rng.random_range(2..=max_layers);
    LayeredShape::new((0..depth).map(|_| rng.random_range(1..=max_width)).collect())
        .expect("nonzero widths")
}

pub fn random_profile(rng: &mut ChaCha8Rng, shape: &LayeredShape) -> ActivationProfile {
    ActivationProfile(shape.sizes().iter().map(|&n| rng.random_range(0..=n)).collect())
}

/// Emergence by brute force: for every edge leaving the inactive set into
/// the active set, enumerate the active paths from its head.
pub fn enumerated_emergence(shape: &LayeredShape, profile: &ActivationProfile) -> EmergenceValue {
    let lq = build_layered_quiver(shape);
    let active = lq.active_set(profile);
    let mut total = num_bigint::BigUint::default();
    for e in lq.quiver.edges() {
        if !active.contains(&e.tail) && active.contains(&e.head) {
            let source: VertexSet = [e.head].into_iter().collect();
            total += enumerate_paths(&lq.quiver, &source, &active)
                .expect("layered graphs are acyclic")
                .0;
        }
    }
    total.into()
}

/// Checks `formula` against the network measure and brute-force
/// enumeration. Takes the formula as a parameter so the harness itself can
/// be tested with a deliberately broken one.
pub fn check_layered_formula(
    opts: &VerifyOptions,
    formula: impl Fn(&LayeredShape, &ActivationProfile) -> EmergenceValue,
) -> PropertyOutcome {
    let mut rng = rng::seeded(opts.seed, rng::stream::PROBE);
    for case in 0..opts.trials {
        let shape = random_shape(&mut rng, opts.max_layers, opts.max_width);
        let profile = random_profile(&mut rng, &shape);
        let closed = formula(&shape, &profile);
        let lq = build_layered_quiver(&shape);
        let network = emergence_network(&lq.quiver, &lq.active_set(&profile))
            .expect("layered graphs are acyclic");
        let brute = enumerated_emergence(&shape, &profile);
        if closed != network || closed != brute {
            return PropertyOutcome {
                name: "layered closed form == network measure == enumeration",
                cases: case + 1,
                counterexample: Some(format!(
                    "layers {:?} profile {:?}: closed form {closed}, network {network}, enumeration {brute}",
                    shape.sizes(),
                    profile.counts()
                )),
            };
        }
    }
    PropertyOutcome {
        name: "layered closed form == network measure == enumeration",
        cases: opts.trials,
        counterexample: None,
    }
}

pub fn check_derived_functor(opts: &VerifyOptions) -> PropertyOutcome {
    let name = "derived functor (unit dims) == network measure";
    let mut rng = rng::seeded(opts.seed, rng::stream::PROBE + 1);
    for case in 0..opts.trials {
        let shape = random_shape(&mut rng, opts.max_layers, opts.max_width);
        let profile = random_profile(&mut rng, &shape);
        let lq = build_layered_quiver(&shape);
        let active = lq.active_set(&profile);
        let deleted = lq.edges_out_of_complement(&active);
        let rep = QuiverRep::unit(lq.quiver.clone());
        let dim = derived_functor_dim_within(&rep, &deleted, &active).expect("acyclic");
        let network = emergence_network(&lq.quiver, &active).expect("acyclic");
        if dim != network {
            return PropertyOutcome {
                name,
                cases: case + 1,
                counterexample: Some(format!(
                    "layers {:?} profile {:?}: derived functor {dim}, network {network}",
                    shape.sizes(),
                    profile.counts()
                )),
            };
        }
    }
    PropertyOutcome {
        name,
        cases: opts.trials,
        counterexample: None,
    }
}

pub fn check_trivial_zeros(opts: &VerifyOptions) -> PropertyOutcome {
    let name = "emergence of all-active and all-inactive profiles is 0";
    let mut rng = rng::seeded(opts.seed, rng::stream::PROBE + 2);
    for case in 0..opts.trials {
        let shape = random_shape(&mut rng, opts.max_layers.max(2) * 2, opts.max_width * 8);
        let full = emergence_layered(&shape, &shape.full_profile()).expect("fits");
        let none = emergence_layered(&shape, &ActivationProfile::zeros(shape.depth())).expect("fits");
        if full != EmergenceValue::zero() || none != EmergenceValue::zero() {
            return PropertyOutcome {
                name,
                cases: case + 1,
                counterexample: Some(format!("layers {:?}: full {full}, empty {none}", shape.sizes())),
            };
        }
    }
    PropertyOutcome {
        name,
        cases: opts.trials,
        counterexample: None,
    }
}

/// Central-difference gradient of the training-mode loss with respect to
/// every parameter, one perturbation at a time.
pub fn finite_difference_grads(
    model: &MlpModel,
    batch: &Array2<f64>,
    labels: &[usize],
    eps: f64,
) -> Gradients {
    let loss = |m: &MlpModel| {
        let pass = m.forward(batch.view(), Mode::Train).expect("shapes checked by caller");
        cross_entropy(&pass.logits, labels).expect("labels checked by caller")
    };
    let central = |m: &mut MlpModel, get: &dyn Fn(&mut MlpModel) -> &mut f64| {
        let orig = *get(m);
        *get(m) = orig + eps;
        let up = loss(m);
        *get(m) = orig - eps;
        let down = loss(m);
        *get(m) = orig;
        (up - down) / (2.0 * eps)
    };
    let mut m = model.clone();
    let layers = m.layer_count();
    let mut grads = Gradients {
        weights: m.weights.matrices.iter().map(|w| Array2::zeros(w.dim())).collect(),
        biases: m.weights.biases.iter().map(|b| ndarray::Array1::zeros(b.len())).collect(),
        gamma: Vec::new(),
        beta: Vec::new(),
    };
    for l in 0..layers {
        let (rows, cols) = m.weights.matrices[l].dim();
        for r in 0..rows {
            for c in 0..cols {
                grads.weights[l][[r, c]] = central(&mut m, &|m| &mut m.weights.matrices[l][[r, c]]);
            }
            grads.biases[l][r] = central(&mut m, &|m| &mut m.weights.biases[l][r]);
        }
    }
    if let Some(states) = model.bn.as_ref() {
        for (l, state) in states.iter().enumerate() {
            let n = state.gamma.len();
            let mut g = ndarray::Array1::zeros(n);
            let mut b = ndarray::Array1::zeros(n);
            for k in 0..n {
                g[k] = central(&mut m, &|m| &mut m.bn.as_mut().expect("bn").get_mut(l).expect("layer").gamma[k]);
                b[k] = central(&mut m, &|m| &mut m.bn.as_mut().expect("bn").get_mut(l).expect("layer").beta[k]);
            }
            grads.gamma.push(g);
            grads.beta.push(b);
        }
    }
    grads
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_REL_FLOOR)
}

/// Largest elementwise relative error between two gradient sets, with the
/// name of the offending parameter.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> (f64, String) {
    let mut worst = (0.0, String::from("none"));
    let mut visit = |name: String, a: &mut dyn Iterator<Item = (f64, f64)>| {
        for (i, (x, y)) in a.enumerate() {
            let e = rel_err(x, y);
            if e > worst.0 || e.is_nan() {
                worst = (e, format!("{name}[{i}]: backprop {x:e}, finite difference {y:e}"));
            }
        }
    };
    for (l, (a, n)) in analytic.weights.iter().zip(&numeric.weights).enumerate() {
        visit(format!("W{}", l + 1), &mut a.iter().copied().zip(n.iter().copied()));
    }
    for (l, (a, n)) in analytic.biases.iter().zip(&numeric.biases).enumerate() {
        visit(format!("b{}", l + 1), &mut a.iter().copied().zip(n.iter().copied()));
    }
    for (l, (a, n)) in analytic.gamma.iter().zip(&numeric.gamma).enumerate() {
        visit(format!("gamma{}", l + 1), &mut a.iter().copied().zip(n.iter().copied()));
    }
    for (l, (a, n)) in analytic.beta.iter().zip(&numeric.beta).enumerate() {
        visit(format!("beta{}", l + 1), &mut a.iter().copied().zip(n.iter().copied()));
    }
    worst
}

/// A random model no larger than `(6, 8, 8, 4)` with a random batch.
/// Batch normalization parameters are perturbed away from their identity
/// initialization so their gradients are exercised.
pub fn random_gradient_case(
    rng: &mut ChaCha8Rng,
    batchnorm: bool,
    activation: Activation,
) -> (MlpModel, Array2<f64>, Vec<usize>) {
    let sizes = vec![
        rng.random_range(1..=6),
        rng.random_range(1..=8),
        rng.random_range(1..=8),
        rng.random_range(2..=4),
    ];
    let shape = LayeredShape::new(sizes.clone()).expect("nonzero widths");
    let mut ws = base_init(&shape, BaseScheme::XavierNormal, rng.random()).expect("valid shape");
    for b in &mut ws.biases {
        b.mapv_inplace(|_| 0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    let mut model = MlpModel::new(ws, batchnorm, activation);
    if let Some(states) = model.bn.as_mut() {
        for s in states {
            s.gamma.mapv_inplace(|g| g + 0.3 * rng.sample::<f64, _>(StandardNormal));
            s.beta.mapv_inplace(|_| 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let rows = rng.random_range(2..=6);
    let batch = Array2::from_shape_fn((rows, sizes[0]), |_| rng.sample(StandardNormal));
    let labels = (0..rows).map(|_| rng.random_range(0..sizes[3])).collect();
    (model, batch, labels)
}

pub fn check_gradients(trials: usize, seed: u64) -> PropertyOutcome {
    let name = "backprop == central finite differences";
    let mut rng = rng::seeded(seed, rng::stream::PROBE + 3);
    for case in 0..trials {
        let batchnorm = case % 2 == 1;
        let activation = if case % 4 < 2 { Activation::Relu } else { Activation::Tanh };
        let (model, batch, labels) = random_gradient_case(&mut rng, batchnorm, activation);
        let (_, analytic, _) = model
            .loss_and_grads(batch.view(), &labels)
            .expect("generated cases are consistent");
        let numeric = finite_difference_grads(&model, &batch, &labels, FD_EPSILON);
        let (err, at) = max_relative_error(&analytic, &numeric);
        if err.is_nan() || err > GRAD_REL_TOLERANCE {
            return PropertyOutcome {
                name,
                cases: case + 1,
                counterexample: Some(format!(
                    "shape {:?}, batchnorm {batchnorm}, {activation:?}: relative error {err:e} at {at}",
                    model.weights.shape().sizes()
                )),
            };
        }
    }
    PropertyOutcome {
        name,
        cases: trials,
        counterexample: None,
    }
}

pub fn run_battery(opts: &VerifyOptions) -> Vec<PropertyOutcome> {
    vec![
        check_layered_formula(opts, |s, p| emergence_layered(s, p).expect("generated profiles fit")),
        check_derived_functor(opts),
        check_trivial_zeros(opts),
        check_gradients(opts.trials.clamp(1, 20), opts.seed),
    ]
}
