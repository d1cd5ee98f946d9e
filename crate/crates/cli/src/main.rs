//! `emrg`: emergence measures, α-scaled initializations and paired
//! base-vs-scaled experiments from the command line.

mod commands;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emergence_core::BaseScheme;
use log::LevelFilter;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "emrg", version, about = "Emergence measures and emergence-promoting initialization")]
struct Cli {
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for `init` and `verify`; for `experiment`, replaces the seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emergence of a network spec, with the per-layer-pair term table.
    Emergence(EmergenceArgs),
    /// Pivot deltas, the chosen pivot layer and the recommended alpha.
    Pivot(PivotArgs),
    /// Write an α-scaled initialization as an EMIW weight file.
    Init(InitArgs),
    /// Train the base and scaled arms for every seed and log the runs.
    Experiment(ExperimentArgs),
    /// Run the randomized oracle battery.
    Verify(VerifyArgs),
    /// Turn experiment logs into CSV.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct EmergenceArgs {
    /// Network spec (TOML, or JSON starting with `{`).
    pub spec: PathBuf,
    /// Active-node counts per layer, e.g. `1,2,2`. Overrides the spec.
    #[arg(long, value_delimiter = ',')]
    pub profile: Option<Vec<usize>>,
    /// Filter counts per layer; selects the convolutional measure.
    #[arg(long = "conv-filters", value_delimiter = ',')]
    pub conv_filters: Option<Vec<u64>>,
}

#[derive(Args)]
pub struct PivotArgs {
    pub spec: PathBuf,
    /// Assume batch normalization when recommending alpha.
    #[arg(long)]
    pub batchnorm: bool,
}

#[derive(Args)]
pub struct InitArgs {
    pub spec: PathBuf,
    /// xavier_uniform, xavier_normal or kaiming_normal.
    #[arg(long, default_value = "kaiming_normal")]
    pub base: BaseScheme,
    /// Scaling base; the recommended value is used when omitted.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Layer where the exponents cross zero (default: the middle).
    #[arg(long)]
    pub center: Option<f64>,
    /// Assume batch normalization when recommending alpha.
    #[arg(long)]
    pub batchnorm: bool,
    /// Skip the scaling and write the base initialization.
    #[arg(long, conflicts_with_all = ["alpha", "center"])]
    pub base_only: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args)]
pub struct ExperimentArgs {
    /// Experiment config (TOML).
    pub config: PathBuf,
    /// Directory for the `<config name>.jsonl` log.
    #[arg(short = 'o', long = "logdir", default_value = ".")]
    pub logdir: PathBuf,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 5)]
    pub max_layers: usize,
    #[arg(long, default_value_t = 6)]
    pub max_width: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Experiment logs to combine.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Write here instead of stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub struct Globals {
    pub json: bool,
    pub seed: Option<u64>,
}

fn init_logging() {
    let raw = std::env::var("EMRG_LOG_LEVEL").ok();
    let level = match raw.as_deref().map(str::to_ascii_lowercase).as_deref() {
        None => Some(LevelFilter::Warn),
        Some("error") => Some(LevelFilter::Error),
        Some("warn") => Some(LevelFilter::Warn),
        Some("info") => Some(LevelFilter::Info),
        Some("debug") => Some(LevelFilter::Debug),
        Some(_) => None,
    };
    env_logger::Builder::new()
        .filter_level(level.unwrap_or(LevelFilter::Warn))
        .format(|buf, record| writeln!(buf, "{}: {}", record.level().as_str().to_ascii_lowercase(), record.args()))
        .init();
    if level.is_none() {
        log::warn!(
            "ignoring EMRG_LOG_LEVEL={:?}; expected error, warn, info or debug",
            raw.unwrap_or_default()
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    let g = Globals {
        json: cli.json,
        seed: cli.seed,
    };
    let result = match &cli.command {
        Command::Emergence(a) => commands::emergence(&g, a),
        Command::Pivot(a) => commands::pivot(&g, a),
        Command::Init(a) => commands::init(&g, a),
        Command::Experiment(a) => commands::experiment(&g, a),
        Command::Verify(a) => commands::verify(&g, a),
        Command::Report(a) => commands::report(&g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Reported(code)) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
