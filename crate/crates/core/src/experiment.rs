//! Paired comparison runs: for every seed, the same base initialization is
//! trained once unscaled and once with the α-scaling applied, on the same
//! data in the same shuffle order.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{gen_blobs, load_cifar_bin, load_idx, DataError, Dataset, Split};
use crate::graph::LayeredShape;
use crate::init::{
    apply_emergence_scaling, base_init, recommended_alpha, scale_schedule, BaseScheme, InitError,
    PivotMode,
};
use crate::nn::{init_log, train_epoch, Activation, EpochLog, LearningRate, MlpModel, NnError, TrainConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        limit: Option<usize>,
    },
    Cifar {
        path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetSpec {
    pub fn id(&self) -> String {
        match self {
            DatasetSpec::Blobs {
                classes,
                per_class,
                dim,
                spread,
                seed,
                ..
            } => format!("blobs-c{classes}-n{per_class}-d{dim}-s{spread}-seed{seed}"),
            DatasetSpec::Idx { images, .. } => format!("idx:{}", images.display()),
            DatasetSpec::Cifar { path, .. } => format!("cifar:{}", path.display()),
        }
    }

    /// Loads or generates `(train, test)`.
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>), DataError> {
        let limit = |d: Dataset, l: &Option<usize>| match l {
            Some(n) => d.truncate(*n),
            None => d,
        };
        match self {
            DatasetSpec::Blobs {
                classes,
                per_class,
                dim,
                spread,
                seed,
                test_fraction,
            } => {
                let all = gen_blobs(*classes, *per_class, *dim, *spread, *seed);
                if *test_fraction > 0.0 {
                    let (train, test) = all.split(*test_fraction, *seed);
                    Ok((train, Some(test)))
                } else {
                    Ok((all, None))
                }
            }
            DatasetSpec::Idx {
                images,
                labels,
                test_images,
                test_labels,
                limit: n,
            } => {
                let train = limit(load_idx(images, labels)?, n);
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => {
                        let mut t = load_idx(i, l)?;
                        t.split = Split::Test;
                        Some(t)
                    }
                    _ => None,
                };
                Ok((train, test))
            }
            DatasetSpec::Cifar {
                path,
                test_path,
                limit: n,
            } => {
                let train = limit(load_cifar_bin(path)?, n);
                let test = match test_path {
                    Some(p) => {
                        let mut t = load_cifar_bin(p)?;
                        t.split = Split::Test;
                        Some(t)
                    }
                    None => None,
                };
                Ok((train, test))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Full node counts, input dimension first and class count last.
    pub layers: LayeredShape,
    pub seeds: Vec<u64>,
    #[serde(default = "default_base")]
    pub base: BaseScheme,
    /// Falls back to [`recommended_alpha`] when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub pivot_mode: PivotMode,
    #[serde(default)]
    pub batchnorm: bool,
    #[serde(default)]
    pub activation: Activation,
    /// `seed` inside is ignored: each run uses its own seed.
    #[serde(default)]
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
}

fn default_base() -> BaseScheme {
    BaseScheme::KaimingNormal
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn resolved_alpha(&self) -> f64 {
        self.alpha
            .unwrap_or_else(|| recommended_alpha(self.layers.weight_layers(), self.batchnorm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Base,
    Scaled,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Base => "base",
            Arm::Scaled => "scaled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub arm: Arm,
    /// Epoch 0 (untrained) first.
    pub logs: Vec<EpochLog>,
    pub diverged_at: Option<usize>,
}

impl RunRecord {
    pub fn epoch(&self, e: usize) -> Option<&EpochLog> {
        self.logs.iter().find(|l| l.epoch == e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub alpha: f64,
    pub created_unix_ms: u64,
    /// Sorted by `(seed, arm)`.
    pub runs: Vec<RunRecord>,
}

impl ExperimentRecord {
    pub fn run(&self, seed: u64, arm: Arm) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.seed == seed && r.arm == arm)
    }

    pub fn diverged(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.diverged_at.is_some())
    }
}

fn run_one(
    config: &ExperimentConfig,
    alpha: f64,
    seed: u64,
    arm: Arm,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<RunRecord, ExperimentError> {
    let base = base_init(&config.layers, config.base, seed)?;
    let weights = match arm {
        Arm::Base => base,
        Arm::Scaled => {
            let schedule = scale_schedule(base.layer_count(), alpha, config.pivot_mode)?;
            apply_emergence_scaling(&base, &schedule)?
        }
    };
    let mut model = MlpModel::new(weights, config.batchnorm, config.activation);
    let train_cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let lr = LearningRate::Global(train_cfg.lr);
    let mut record = RunRecord {
        seed,
        arm,
        logs: Vec::new(),
        diverged_at: None,
    };
    let start = init_log(&model, train, test, &train_cfg)?;
    if !start.train_loss.is_finite() {
        record.diverged_at = Some(0);
        return Ok(record);
    }
    record.logs.push(start);
    for epoch in 1..=train_cfg.epochs {
        match train_epoch(&mut model, train, test, &train_cfg, &lr, epoch) {
            Ok(log) if log.train_loss.is_finite() => record.logs.push(log),
            Ok(_) | Err(NnError::Diverged { .. }) => {
                record.diverged_at = Some(epoch);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(record)
}

fn check_config(config: &ExperimentConfig, train: &Dataset) -> Result<(), ExperimentError> {
    let sizes = config.layers.sizes();
    if sizes[0] != train.dim() {
        return Err(ExperimentError::Config(format!(
            "input layer has {} nodes but the dataset has {} features",
            sizes[0],
            train.dim()
        )));
    }
    if sizes[sizes.len() - 1] != train.classes {
        return Err(ExperimentError::Config(format!(
            "output layer has {} nodes but the dataset has {} classes",
            sizes[sizes.len() - 1],
            train.classes
        )));
    }
    if config.seeds.is_empty() {
        return Err(ExperimentError::Config("no seeds".into()));
    }
    if train.is_empty() {
        return Err(ExperimentError::Config("empty training set".into()));
    }
    Ok(())
}

/// Runs both arms for every seed, one thread per run. Results do not
/// depend on scheduling.
pub fn run_experiment(
    config: &ExperimentConfig,
    created_unix_ms: u64,
) -> Result<ExperimentRecord, ExperimentError> {
    let (train, test) = config.dataset.load()?;
    run_experiment_on(config, &train, test.as_ref(), created_unix_ms)
}

pub fn run_experiment_on(
    config: &ExperimentConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    created_unix_ms: u64,
) -> Result<ExperimentRecord, ExperimentError> {
    check_config(config, train)?;
    let alpha = config.resolved_alpha();
    let mut jobs: Vec<(u64, Arm)> = config
        .seeds
        .iter()
        .flat_map(|&s| [(s, Arm::Base), (s, Arm::Scaled)])
        .collect();
    jobs.sort();
    jobs.dedup();
    let results: Vec<Result<RunRecord, ExperimentError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(seed, arm)| scope.spawn(move || run_one(config, alpha, seed, arm, train, test)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training threads do not panic"))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentRecord {
        config: config.clone(),
        alpha,
        created_unix_ms,
        runs,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

/// Per-seed table: init-time emergence and epoch-1 loss/accuracy per arm.
pub fn summary_table(record: &ExperimentRecord) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:>6} {:>7} {:>22} {:>12} {:>10} {:>10}",
        "seed", "arm", "init_emergence", "epoch1_loss", "epoch1_acc", "diverged"
    )
    .unwrap();
    for run in &record.runs {
        let init = run
            .epoch(0)
            .map_or_else(|| "-".to_string(), |l| l.emergence.to_string());
        let e1 = run.epoch(1);
        writeln!(
            out,
            "{:>6} {:>7} {:>22} {:>12} {:>10} {:>10}",
            run.seed,
            run.arm.name(),
            init,
            fmt_opt(e1.map(|l| l.train_loss)),
            fmt_opt(e1.map(|l| l.train_accuracy)),
            run.diverged_at.map_or_else(|| "-".to_string(), |e| format!("epoch {e}")),
        )
        .unwrap();
    }
    out
}

/// Long-format CSV of every logged epoch.
pub fn report_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(
        "record,seed,arm,alpha,epoch,train_loss,train_accuracy,test_accuracy,emergence,profile\n",
    );
    for (r, record) in records.iter().enumerate() {
        for run in &record.runs {
            let alpha = match run.arm {
                Arm::Base => 1.0,
                Arm::Scaled => record.alpha,
            };
            for log in &run.logs {
                let profile: Vec<String> = log.profile.counts().iter().map(|a| a.to_string()).collect();
                writeln!(
                    out,
                    "{r},{},{},{alpha},{},{},{},{},{},{}",
                    run.seed,
                    run.arm.name(),
                    log.epoch,
                    log.train_loss,
                    log.train_accuracy,
                    log.test_accuracy.map_or_else(String::new, |v| v.to_string()),
                    log.emergence,
                    profile.join(";"),
                )
                .unwrap();
            }
        }
    }
    out
}
