//! `soh`: train MFP capacity-fade models on battery cycling logs and predict
//! state of health on other cells.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 malformed input
//! file, 4 data unsuitable for the computation, 5 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use soh_core::features::Variant;
use soh_core::ErrorClass;

use config::{ConfigError, FileConfig, RunConfig};

#[derive(Parser)]
#[command(name = "soh", version, about = "Battery state-of-health prediction with multivariable fractional polynomials")]
struct Cli {
    /// TOML key/value file with default settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: CommonFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
pub struct CommonFlags {
    /// Feature set: a (no capacity inputs), b (adds approximate capacity), c (all)
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Significance level of the FP degree tests
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Prediction-interval coverage
    #[arg(long, global = true)]
    level: Option<f64>,
    /// End-of-life threshold as a fraction of nominal capacity
    #[arg(long, global = true)]
    eol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (file for `synth`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Current used for the approximate capacity: nominal or sampled_mean
    #[arg(long, global = true)]
    current_source: Option<String>,
    /// Run every loop on the calling thread
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a log and write its reference capacities and feature table
    Ingest { log: PathBuf },
    /// Fit a model on the whole history of one cell
    Train { log: PathBuf },
    /// Predict capacities for one or more cells
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Skip the SVG charts
        #[arg(long)]
        no_plot: bool,
    },
    /// Error metrics of prediction tables against observed capacities
    Evaluate {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
    },
    /// Generate a synthetic cell log following one of the protocol groups
    Synth {
        #[arg(long)]
        group: Option<u8>,
        #[arg(long)]
        phases: Option<usize>,
        #[arg(long)]
        cell_id: Option<String>,
    },
    /// Print a model summary and chart prediction tables
    Report {
        #[arg(long)]
        model: Option<PathBuf>,
        tables: Vec<PathBuf>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

pub enum Failure {
    Core(soh_core::Error),
    Usage(String),
    Config(ConfigError),
}

impl From<soh_core::Error> for Failure {
    fn from(e: soh_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn report(&self) -> (String, u8) {
        match self {
            Failure::Core(e) => {
                let code = match e.class() {
                    ErrorClass::Io => 1,
                    ErrorClass::Usage => 2,
                    ErrorClass::Parse => 3,
                    ErrorClass::Data => 4,
                    ErrorClass::Numeric => 5,
                };
                (e.to_string(), code)
            }
            Failure::Usage(m) => (m.clone(), 2),
            Failure::Config(ConfigError::Io(p, e)) => (format!("{}: {e}", p.display()), 1),
            Failure::Config(ConfigError::Parse(p, e)) => (format!("{}: {e}", p.display()), 3),
        }
    }
}

fn resolve(cli: &Cli) -> Result<(RunConfig, FileConfig), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(Failure::Config)?,
        None => FileConfig::default(),
    };
    let mut rc = RunConfig::from_file(&file).map_err(Failure::Usage)?;
    let f = &cli.common;
    if let Some(v) = f.variant {
        rc.variant = v;
    }
    if let Some(v) = f.alpha {
        rc.alpha = v;
    }
    if let Some(v) = f.level {
        rc.level = v;
    }
    if let Some(v) = f.eol {
        rc.eol = v;
    }
    if let Some(v) = f.seed {
        rc.seed = v;
    }
    if let Some(v) = &f.out {
        rc.out = v.clone();
    }
    if let Some(s) = &f.current_source {
        rc.current_source = config::parse_current_source(s).map_err(Failure::Usage)?;
    }
    rc.sequential |= f.sequential;
    if !(rc.alpha > 0.0 && rc.alpha < 1.0) {
        return Err(soh_core::Error::InvalidAlpha(rc.alpha).into());
    }
    if !(rc.level > 0.0 && rc.level < 1.0) {
        return Err(soh_core::Error::InvalidLevel(rc.level).into());
    }
    if !(rc.eol > 0.0 && rc.eol < 1.0) {
        return Err(Failure::Usage(format!("--eol must lie in (0, 1), got {}", rc.eol)));
    }
    Ok((rc, file))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (rc, file) = resolve(&cli)?;
    match cli.command {
        Command::Ingest { log } => commands::ingest(&log, &rc),
        Command::Train { log } => commands::train(&log, &rc),
        Command::Predict { model, logs, no_plot } => commands::predict(&model, &logs, !no_plot, &rc),
        Command::Evaluate { tables } => commands::evaluate(&tables, &rc),
        Command::Synth { group, phases, cell_id } => {
            let group = group.or(file.group).unwrap_or(3);
            let phases = phases.or(file.phases).unwrap_or(40);
            commands::synth(group, phases, cell_id.or(file.cell_id.clone()), &file, &rc, cli.common.out.is_some() || file.out.is_some())
        }
        Command::Report { model, tables } => commands::report(model.as_deref(), &tables, &rc),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOH_LOG_LEVEL", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (msg, code) = f.report();
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
