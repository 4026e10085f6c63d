//! `gist`: pick transferable test sets for a model under test from
//! similarity proxies.

mod commands;
mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

/// Process outcome other than success.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::format(format!("{}: {e}", path.display()))
    }
}

impl From<gist_core::Error> for Failure {
    fn from(e: gist_core::Error) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Parser)]
#[command(name = "gist", version, about = "Test-set transfer selection from model similarity")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "GIST_JOBS")]
    jobs: Option<usize>,

    /// Settings file (TOML or JSON); explicit flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Human-readable tables instead of JSON on stdout.
    #[arg(long, global = true)]
    pretty: bool,

    /// Directory holding the persistent similarity cache.
    #[arg(long, global = true, env = "GIST_CACHE_DIR")]
    cache_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a workspace and list every problem found.
    Validate { workspace: PathBuf },
    /// Correlate each proxy with the property over all reference models.
    Offline(OfflineArgs),
    /// Choose test sets for one model under test.
    Select(SelectArgs),
    /// Beat fractions of the most similar test sets for each objective.
    Eval(EvalArgs),
    /// Heatmaps, fault-type dendrograms and the efficiency index.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Write a synthetic benchmark workspace with a planted proxy.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct Common {
    workspace: PathBuf,
    /// Also consider references of the same model type.
    #[arg(long)]
    include_same_type: bool,
    /// Sections per neuron for coverage.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct OfflineArgs {
    #[command(flatten)]
    common: Common,
    /// kmnc or fault_types.
    #[arg(long)]
    property: Option<String>,
    /// Comma-separated metric ids, or "all".
    #[arg(long)]
    metrics: Option<String>,
    /// Significance level for the verdict.
    #[arg(long)]
    alpha: Option<f64>,
    /// Directory for the report JSON and CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    common: Common,
    /// Model under test.
    #[arg(long = "mut")]
    model: String,
    #[arg(long)]
    metric: Option<String>,
    /// top1 | topn:N | obf:N | ebf:N | random:N:REPS:SEED
    #[arg(long)]
    strategy: Option<String>,
    /// Plan JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Only this model; default is every reference model.
    #[arg(long = "mut")]
    model: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    property: Option<String>,
    /// How many of the most similar references to score.
    #[arg(long = "top", default_value_t = 5)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ReportCommand {
    /// Type-level rank heatmap of a metric or a property.
    Heatmap(HeatmapArgs),
    /// Average-linkage tree of test sets by fault-type counts.
    Dendrogram(DendrogramArgs),
    /// Efficiency index r = coverage / t.
    Efficiency(EfficiencyArgs),
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, conflicts_with = "property", required_unless_present = "property")]
    metric: Option<String>,
    #[arg(long)]
    property: Option<String>,
    /// Rank matrix CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DendrogramArgs {
    #[command(flatten)]
    common: Common,
    /// Model whose faults are clustered.
    #[arg(long = "mut")]
    model: String,
    /// Tree JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EfficiencyArgs {
    /// JSON file with the timing fields; flags override its values.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    coverage: Option<f64>,
    #[arg(long)]
    offline_seconds: Option<f64>,
    #[arg(long)]
    online_seconds: Option<f64>,
    /// Comma-separated generation seconds per model.
    #[arg(long)]
    generation_seconds: Option<String>,
    #[arg(long)]
    n_models: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    types: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {f}");
            }
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::read(p)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.jobs.or(file.jobs) {
        if n == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    let ctx = commands::Context {
        file,
        pretty: cli.pretty,
        cache_dir: cli.cache_dir.clone(),
    };
    match &cli.command {
        Command::Validate { workspace } => commands::validate(&ctx, workspace),
        Command::Offline(a) => commands::offline(&ctx, a),
        Command::Select(a) => commands::select(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Report(ReportCommand::Heatmap(a)) => commands::heatmap(&ctx, a),
        Command::Report(ReportCommand::Dendrogram(a)) => commands::dendrogram(&ctx, a),
        Command::Report(ReportCommand::Efficiency(a)) => commands::efficiency(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
    }
}
