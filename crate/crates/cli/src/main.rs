//! vulnlife: transitive vulnerability lifetime analysis.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors. Every
//! subcommand prints a JSON summary, including its configuration, on stdout.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vulnlife::distfit::{Family, DEFAULT_BOOTSTRAP};
use vulnlife::propagation::{DurationField, DEFAULT_MAX_LEVEL};
use vulnlife::regression::Target;

#[derive(Debug, Parser)]
#[command(name = "vulnlife", version, about = "Transitive vulnerability lifetime analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum Command {
    /// Load releases, dependencies and advisories; write normalised tables
    Ingest(IngestArgs),
    /// Propagate advisories through reverse dependencies and write lifetime samples
    Propagate(PropagateArgs),
    /// Kaplan-Meier curves and descriptive statistics per level
    Survival(SurvivalArgs),
    /// Fit candidate distributions with AIC and Anderson-Darling
    Fit(FitArgs),
    /// Regress per-level mean or median durations on level
    Regress(RegressArgs),
    /// Generate a synthetic corpus from the Gamma resolution model
    Simulate(SimulateArgs),
    /// Write plot-ready survival, distribution and regression tables
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub releases: PathBuf,
    #[arg(long)]
    pub deps: PathBuf,
    #[arg(long)]
    pub cves: Option<PathBuf>,
    /// Directory for normalised tables; omitted means summary only
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PropagateArgs {
    #[arg(long)]
    pub releases: PathBuf,
    #[arg(long)]
    pub deps: PathBuf,
    #[arg(long)]
    pub cves: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_LEVEL)]
    pub max_level: u32,
    /// Censoring date (YYYY-MM-DD); defaults to the latest release date
    #[arg(long)]
    pub observation_end: Option<String>,
}

/// Samples come from `--samples`, or are computed from the three graph inputs.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleInput {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub releases: Option<PathBuf>,
    #[arg(long)]
    pub deps: Option<PathBuf>,
    #[arg(long)]
    pub cves: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_LEVEL)]
    pub max_level: u32,
    #[arg(long)]
    pub observation_end: Option<String>,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct AnalysisFlags {
    /// cumulative (from publication) or level (from the faulty release)
    #[arg(long, default_value = "cumulative")]
    pub duration: DurationField,
    /// Treat censored samples as fixed at the end of the window
    #[arg(long)]
    pub include_censored_as_events: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SurvivalArgs {
    #[command(flatten)]
    pub input: SampleInput,
    #[command(flatten)]
    pub flags: AnalysisFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: SampleInput,
    #[command(flatten)]
    pub flags: AnalysisFlags,
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict to one dependency level
    #[arg(long)]
    pub level: Option<u32>,
    /// Families to fit; repeatable. Defaults to all four
    #[arg(long = "family")]
    pub families: Vec<Family>,
    /// Parametric bootstrap replicates for the A-D p-value; 0 disables it
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct RegressArgs {
    /// CSV with a `level` column and `mean`/`median` columns
    #[arg(long, conflicts_with_all = ["samples", "releases"])]
    pub stats: Option<PathBuf>,
    #[command(flatten)]
    pub input: SampleInput,
    #[command(flatten)]
    pub flags: AnalysisFlags,
    #[arg(long, default_value = "mean")]
    pub target: Target,
    /// Regress on every sample instead of per-level aggregates
    #[arg(long)]
    pub per_sample: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.02)]
    pub k: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 10)]
    pub depth: u32,
    #[arg(long, default_value_t = 100)]
    pub per_level: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// First publication date of the synthetic advisories
    #[arg(long, default_value = "2015-01-01")]
    pub window_start: String,
    #[arg(long, default_value_t = 365)]
    pub window_days: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: SampleInput,
    #[command(flatten)]
    pub flags: AnalysisFlags,
    #[arg(long)]
    pub out: PathBuf,
}

/// Bad flag combinations detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(argv: Vec<String>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(&cli.command) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary is valid JSON")
            );
            0
        }
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}\n\nRun `vulnlife --help` for usage.");
            1
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run(std::env::args().collect()))
}
