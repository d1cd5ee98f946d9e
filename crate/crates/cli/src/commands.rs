use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use emergence_core::data::{
    append_record, read_logs, read_network_spec, save_weights, NetworkSpec,
};
use emergence_core::emergence::{
    choose_pivot, emergence_conv, emergence_conv_terms, emergence_layered,
    emergence_layered_terms, EmergenceTerm,
};
use emergence_core::experiment::{
    report_csv, run_experiment, summary_table, DatasetSpec, ExperimentConfig, ExperimentRecord,
};
use emergence_core::init::{
    apply_emergence_scaling, base_init, recommended_alpha, scale_schedule, PivotMode,
};
use emergence_core::verify::{run_battery, VerifyOptions};
use emergence_core::{ActivationProfile, EmergenceValue, InitConfig, PivotReport, ScaleSchedule};
use serde::Serialize;

use crate::error::CliError;
use crate::{EmergenceArgs, ExperimentArgs, Globals, InitArgs, PivotArgs, ReportArgs, VerifyArgs};

type Result<T> = std::result::Result<T, CliError>;

fn load_spec(path: &Path) -> Result<NetworkSpec> {
    read_network_spec(path).map_err(|e| CliError::reading(path, e))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("output types always serialize"));
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize)]
struct EmergenceOutput<'a> {
    spec: &'a NetworkSpec,
    emergence: EmergenceValue,
    terms: Vec<EmergenceTerm>,
}

pub fn emergence(g: &Globals, args: &EmergenceArgs) -> Result<()> {
    let mut spec = load_spec(&args.spec)?;
    if let Some(p) = &args.profile {
        spec.profile = Some(ActivationProfile(p.clone()));
    }
    if let Some(f) = &args.conv_filters {
        spec.filters = Some(f.clone());
    }
    let profile = spec.profile.as_ref().ok_or_else(|| {
        CliError::Invalid(format!("{} has no profile; pass --profile", args.spec.display()))
    })?;
    let (total, terms) = match &spec.filters {
        Some(f) => (
            emergence_conv(&spec.layers, profile, f)?,
            emergence_conv_terms(&spec.layers, profile, f)?,
        ),
        None => (
            emergence_layered(&spec.layers, profile)?,
            emergence_layered_terms(&spec.layers, profile)?,
        ),
    };
    if g.json {
        print_json(&EmergenceOutput {
            spec: &spec,
            emergence: total,
            terms,
        });
        return Ok(());
    }
    println!("{total}");
    let width = terms
        .iter()
        .map(|t| t.paths.to_string().len())
        .max()
        .unwrap_or(0)
        .max(5);
    println!("   i    j  {:>width$}", "paths");
    for t in &terms {
        println!("{:>4} {:>4}  {:>width$}", t.from_layer, t.to_layer, t.paths.to_string());
    }
    Ok(())
}

#[derive(Serialize)]
struct PivotOutput {
    #[serde(flatten)]
    report: PivotReport,
    weight_layers: usize,
    recommended_alpha: f64,
}

pub fn pivot(g: &Globals, args: &PivotArgs) -> Result<()> {
    let spec = load_spec(&args.spec)?;
    let report = choose_pivot(&spec.layers);
    let layers = spec.layers.weight_layers();
    let alpha = recommended_alpha(layers, args.batchnorm);
    if g.json {
        print_json(&PivotOutput {
            report,
            weight_layers: layers,
            recommended_alpha: alpha,
        });
        return Ok(());
    }
    println!("layer  delta");
    for (k, d) in report.deltas.iter().enumerate() {
        println!("{:>5}  {d}", k + 1);
    }
    match report.pivot {
        Some(p) => println!("pivot {p}"),
        None => println!("pivot none (no layer has a positive delta)"),
    }
    println!("recommended alpha {alpha} for {layers} weight layers");
    Ok(())
}

#[derive(Serialize)]
struct InitOutput<'a> {
    #[serde(flatten)]
    config: &'a InitConfig,
    alpha_source: &'static str,
    #[serde(flatten)]
    schedule: &'a ScaleSchedule,
    exponent_sum: f64,
    output: &'a Path,
}

pub fn init(g: &Globals, args: &InitArgs) -> Result<()> {
    let spec = load_spec(&args.spec)?;
    let layers = spec.layers.weight_layers();
    let (alpha, source) = match (args.base_only, args.alpha) {
        (true, _) => (1.0, "base_only"),
        (false, Some(a)) => (a, "flag"),
        (false, None) => (recommended_alpha(layers, args.batchnorm), "recommended"),
    };
    let config = InitConfig {
        base_scheme: args.base,
        alpha,
        pivot_mode: args.center.map_or(PivotMode::Auto, PivotMode::Explicit),
        seed: g.seed.unwrap_or(0),
    };
    let schedule = scale_schedule(layers, config.alpha, config.pivot_mode)?;
    let base = base_init(&spec.layers, config.base_scheme, config.seed)?;
    let weights = if args.base_only {
        base
    } else {
        apply_emergence_scaling(&base, &schedule)?
    };
    save_weights(&weights, &args.output).map_err(|e| CliError::writing(&args.output, e))?;
    // adding zero turns a -0 sum into 0
    let sum = schedule.exponent_sum() + 0.0;

    if g.json {
        print_json(&InitOutput {
            config: &config,
            alpha_source: source,
            schedule: &schedule,
            exponent_sum: sum,
            output: &args.output,
        });
        return Ok(());
    }
    match source {
        "recommended" => println!(
            "alpha {alpha} (recommended for {layers} weight layers{}; pass --alpha to override)",
            if args.batchnorm { " with batchnorm" } else { "" }
        ),
        "base_only" => println!("alpha 1 (base initialization only)"),
        _ => println!("alpha {alpha}"),
    }
    println!("multipliers {}", join(&schedule.multipliers));
    println!("exponents {}", join(&schedule.exponents));
    println!("exponent sum {sum}");
    println!(
        "wrote {} ({} layers, {} seed {})",
        args.output.display(),
        layers,
        config.base_scheme.name(),
        config.seed
    );
    Ok(())
}

fn resolve(dir: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = dir.join(&*p);
    }
}

/// Dataset paths in a config are relative to the config file.
fn resolve_dataset(dir: &Path, spec: &mut DatasetSpec) {
    match spec {
        DatasetSpec::Blobs { .. } => {}
        DatasetSpec::Idx {
            images,
            labels,
            test_images,
            test_labels,
            ..
        } => {
            resolve(dir, images);
            resolve(dir, labels);
            test_images.iter_mut().chain(test_labels.iter_mut()).for_each(|p| resolve(dir, p));
        }
        DatasetSpec::Cifar { path, test_path, .. } => {
            resolve(dir, path);
            if let Some(p) = test_path {
                resolve(dir, p);
            }
        }
    }
}

/// `SOURCE_DATE_EPOCH` (seconds) pins the record timestamp so that repeated
/// runs write identical logs.
fn timestamp_ms() -> u64 {
    if let Some(secs) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse::<u64>().ok()) {
        return secs.saturating_mul(1000);
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub fn experiment(g: &Globals, args: &ExperimentArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", args.config.display())))?;
    let mut config = ExperimentConfig::from_toml(&text)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = g.seed {
        config.seeds = vec![seed];
    }
    let dir = args.config.parent().unwrap_or(Path::new("."));
    resolve_dataset(dir, &mut config.dataset);
    log::info!(
        "{} seeds x 2 arms, layers {:?}, {} epochs, alpha {}",
        config.seeds.len(),
        config.layers.sizes(),
        config.train.epochs,
        config.resolved_alpha()
    );

    let record = run_experiment(&config, timestamp_ms())?;

    std::fs::create_dir_all(&args.logdir).map_err(|e| CliError::writing(&args.logdir, e))?;
    let stem = args.config.file_stem().map_or("experiment".into(), |s| s.to_string_lossy());
    let log_path = args.logdir.join(format!("{stem}.jsonl"));
    append_record(&log_path, &record).map_err(|e| CliError::writing(&log_path, e))?;
    log::info!("appended {} runs to {}", record.runs.len(), log_path.display());

    if g.json {
        for event in record.to_events() {
            print_json(&event);
        }
    } else {
        print!("{}", summary_table(&record));
        println!("log: {}", log_path.display());
    }
    let first = record.diverged().next().map(|run| CliError::Diverged {
        arm: run.arm.name(),
        seed: run.seed,
        epoch: run.diverged_at.unwrap_or(0),
    });
    first.map_or(Ok(()), Err)
}

pub fn verify(g: &Globals, args: &VerifyArgs) -> Result<()> {
    let opts = VerifyOptions {
        max_layers: args.max_layers,
        max_width: args.max_width,
        trials: args.trials,
        seed: g.seed.unwrap_or(0),
    };
    opts.check_bounds().map_err(CliError::Invalid)?;
    let outcomes = run_battery(&opts);
    if g.json {
        print_json(&outcomes);
    } else {
        for o in &outcomes {
            match &o.counterexample {
                None => println!("PASS {} ({} cases)", o.name, o.cases),
                Some(c) => println!("FAIL {} (case {}): {c}", o.name, o.cases),
            }
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    if failed > 0 {
        eprintln!("{failed} of {} properties failed", outcomes.len());
        return Err(CliError::Reported(1));
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportRow<'a> {
    record: usize,
    seed: u64,
    arm: &'static str,
    alpha: f64,
    #[serde(flatten)]
    log: &'a emergence_core::nn::EpochLog,
}

pub fn report(g: &Globals, args: &ReportArgs) -> Result<()> {
    let mut records: Vec<ExperimentRecord> = Vec::new();
    for path in &args.logs {
        let read = read_logs(path).map_err(|e| CliError::reading(path, e))?;
        if read.dropped_partial {
            log::warn!("{}: ignored an incomplete final line", path.display());
        }
        records.extend(read.records());
    }
    let text = if g.json {
        let rows: Vec<ReportRow> = records
            .iter()
            .enumerate()
            .flat_map(|(i, rec)| {
                rec.runs.iter().flat_map(move |run| {
                    run.logs.iter().map(move |log| ReportRow {
                        record: i,
                        seed: run.seed,
                        arm: run.arm.name(),
                        alpha: rec.alpha,
                        log,
                    })
                })
            })
            .collect();
        serde_json::to_string(&rows).expect("rows serialize") + "\n"
    } else {
        report_csv(&records)
    };
    match &args.output {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::writing(p, e))?,
        None => print!("{text}"),
    }
    Ok(())
}
