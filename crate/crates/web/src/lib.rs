//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function takes plain strings and numbers and returns a JSON
//! string; the page does its own rendering. The same logic is available as
//! ordinary Rust functions for native tests.

use emergence_core::data::gen_blobs;
use emergence_core::emergence::{choose_pivot, emergence_layered, emergence_layered_terms};
use emergence_core::init::{
    apply_emergence_scaling, base_init, recommended_alpha, scale_schedule, PivotMode,
};
use emergence_core::nn::{activation_profile, Activation, MlpModel, Mode, TrainConfig};
use emergence_core::{ActivationProfile, BaseScheme, LayeredShape, PivotReport};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Keeps a careless input from freezing the tab.
pub const MAX_WEIGHTS: usize = 2_000_000;
const SAMPLES_PER_CLASS: usize = 64;

fn counts(text: &str, what: &str) -> Result<Vec<usize>, String> {
    text.split([',', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("{what}: `{s}` is not a count")))
        .collect()
}

fn shape(text: &str) -> Result<LayeredShape, String> {
    LayeredShape::new(counts(text, "layers")?).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Term {
    pub i: usize,
    pub j: usize,
    pub paths: String,
}

#[derive(Debug, Serialize)]
pub struct EmergenceReport {
    pub emergence: String,
    pub terms: Vec<Term>,
    pub pivot: PivotReport,
}

pub fn emergence_report(layers: &str, profile: &str) -> Result<EmergenceReport, String> {
    let shape = shape(layers)?;
    let profile = ActivationProfile(counts(profile, "profile")?);
    let terms = emergence_layered_terms(&shape, &profile).map_err(|e| e.to_string())?;
    let total = emergence_layered(&shape, &profile).map_err(|e| e.to_string())?;
    Ok(EmergenceReport {
        emergence: total.to_string(),
        terms: terms
            .into_iter()
            .map(|t| Term {
                i: t.from_layer,
                j: t.to_layer,
                paths: t.paths.to_string(),
            })
            .collect(),
        pivot: choose_pivot(&shape),
    })
}

#[derive(Debug, Serialize)]
pub struct ScheduleReport {
    pub multipliers: Vec<f64>,
    pub exponents: Vec<f64>,
    pub exponent_sum: f64,
    pub recommended_alpha: f64,
}

pub fn schedule_report(weight_layers: usize, alpha: f64, batchnorm: bool) -> Result<ScheduleReport, String> {
    let s = scale_schedule(weight_layers, alpha, PivotMode::Auto).map_err(|e| e.to_string())?;
    Ok(ScheduleReport {
        exponent_sum: s.exponent_sum() + 0.0,
        multipliers: s.multipliers,
        exponents: s.exponents,
        recommended_alpha: recommended_alpha(weight_layers, batchnorm),
    })
}

#[derive(Debug, Serialize)]
pub struct ArmReport {
    pub profile: Vec<usize>,
    pub emergence: String,
    /// Mean absolute post-activation per hidden layer, then the logits.
    pub mean_abs: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct InitComparison {
    pub threshold: f64,
    pub base: ArmReport,
    pub scaled: ArmReport,
}

/// Base vs α-scaled Kaiming weights on seeded Gaussian blobs whose
/// dimension and class count come from the first and last layer.
pub fn compare_init(layers: &str, alpha: f64, seed: u64) -> Result<InitComparison, String> {
    let shape = shape(layers)?;
    let sizes = shape.sizes();
    let weights: usize = sizes.windows(2).map(|w| w[0] * w[1]).sum();
    if weights > MAX_WEIGHTS {
        return Err(format!("{weights} weights is more than this demo allows ({MAX_WEIGHTS})"));
    }
    let classes = *sizes.last().expect("at least two layers");
    let data = gen_blobs(classes.max(2), SAMPLES_PER_CLASS, sizes[0], 1.0, seed);
    let threshold = TrainConfig::default().active_threshold;
    let schedule = scale_schedule(shape.weight_layers(), alpha, PivotMode::Auto).map_err(|e| e.to_string())?;
    let base = base_init(&shape, BaseScheme::KaimingNormal, seed).map_err(|e| e.to_string())?;
    let scaled = apply_emergence_scaling(&base, &schedule).map_err(|e| e.to_string())?;
    let arm = |w| -> Result<ArmReport, String> {
        let model = MlpModel::new(w, false, Activation::Relu);
        let profile = activation_profile(&model, &data, threshold).map_err(|e| e.to_string())?;
        let pass = model.forward(data.features.view(), Mode::Eval).map_err(|e| e.to_string())?;
        let n = data.len() as f64;
        let mut mean_abs: Vec<f64> = pass.activations.iter().map(|h| h.mapv(f64::abs).sum() / (n * h.ncols() as f64)).collect();
        mean_abs.push(pass.logits.mapv(f64::abs).sum() / (n * pass.logits.ncols() as f64));
        Ok(ArmReport {
            emergence: emergence_layered(&shape, &profile).map_err(|e| e.to_string())?.to_string(),
            profile: profile.0,
            mean_abs,
        })
    };
    Ok(InitComparison {
        threshold,
        base: arm(base)?,
        scaled: arm(scaled)?,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map(|v| serde_json::to_string(&v).expect("reports serialize"))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn emergence(layers: &str, profile: &str) -> Result<String, JsError> {
    to_json(emergence_report(layers, profile))
}

#[wasm_bindgen]
pub fn schedule(weight_layers: usize, alpha: f64, batchnorm: bool) -> Result<String, JsError> {
    to_json(schedule_report(weight_layers, alpha, batchnorm))
}

#[wasm_bindgen(js_name = compareInit)]
pub fn compare_init_js(layers: &str, alpha: f64, seed: u32) -> Result<String, JsError> {
    to_json(compare_init(layers, alpha, u64::from(seed)))
}
