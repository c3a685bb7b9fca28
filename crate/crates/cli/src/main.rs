//! `smartfd`: batch pipeline from link datasets to fitted diagrams, traffic
//! modes, link clusters and plot-ready reports.

mod cluster;
mod fit;
mod ingest;
mod kde;
mod modes;
mod output;
mod report;
mod settings;
mod synth;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smartfd::fit::LocalMethod;
use smartfd::models::FdModelKind;

use crate::settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "smartfd", version, about = "Fundamental-diagram analysis of motorway links")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for every random choice (multi-start, CLARA, synthetic data).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Comma-separated link ids to process; all links by default.
    #[arg(long, global = true, value_delimiter = ',')]
    links: Option<Vec<String>>,
    /// TOML file with default settings; flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Minimum speed (km/h) for a minute to enter the flow–density set.
    #[arg(long, global = true)]
    min_speed: Option<f64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Args)]
struct DataArg {
    /// Dataset directory with links.csv and timeseries.csv.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args, Default)]
struct FitArgs {
    /// `all` or one model name.
    #[arg(long)]
    model: Option<String>,
    /// Multi-start count per model.
    #[arg(long)]
    starts: Option<usize>,
    /// Local optimizer.
    #[arg(long, value_parser = parse_method)]
    method: Option<LocalMethod>,
}

#[derive(Debug, Args, Default)]
struct ModesArgs {
    /// CLARA sample size; 200 + 2k by default.
    #[arg(long)]
    sample_size: Option<usize>,
    /// CLARA restarts.
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct ClusterArgs {
    /// Number of link clusters.
    #[arg(long)]
    k: Option<usize>,
    /// Model whose fitted parameters describe each link.
    #[arg(long, value_parser = parse_kind)]
    cluster_model: Option<FdModelKind>,
    /// Summarize rescaled instead of raw parameters.
    #[arg(long)]
    scaled_summaries: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a dataset and write its canonical form.
    Ingest(DataArg),
    /// Generate a synthetic dataset from a spec file (TOML or JSON).
    Synth {
        spec: PathBuf,
    },
    /// Kernel density grid and modes of each link's scaled flow–density cloud.
    Kde {
        #[command(flatten)]
        data: DataArg,
        /// Grid resolution, `NXxNY`.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Fit and rank fundamental-diagram models per link.
    Fit {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        fit: FitArgs,
        /// Also fit each speed-limit segment separately.
        #[arg(long)]
        by_limit: bool,
    },
    /// Locate the low- and high-density traffic modes per link.
    Modes {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        modes: ModesArgs,
        /// Split each link by the speed limit in force.
        #[arg(long)]
        by_limit: bool,
    },
    /// Cluster links by their fitted diagram parameters.
    ClusterLinks {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Run fit, modes and clustering and write a consolidated report.
    Report {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        modes: ModesArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
    },
}

fn parse_method(s: &str) -> Result<LocalMethod, String> {
    match s {
        "lm" | "levenberg_marquardt" => Ok(LocalMethod::LevenbergMarquardt),
        "nm" | "nelder_mead" => Ok(LocalMethod::NelderMead),
        _ => Err(format!("unknown method `{s}` (expected lm or nelder_mead)")),
    }
}

fn parse_kind(s: &str) -> Result<FdModelKind, String> {
    s.parse()
}

/// Why a command stopped; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input, flags or configuration: exit 2.
    Input(anyhow::Error),
    /// Optimizer or clustering failed on valid input: exit 3.
    Numerical(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

impl FitArgs {
    fn apply(&self, s: &mut Settings) {
        if let Some(m) = &self.model {
            s.model = m.clone();
        }
        if let Some(n) = self.starts {
            s.starts = n;
        }
        if let Some(m) = self.method {
            s.method = m;
        }
    }
}

impl ModesArgs {
    fn apply(&self, s: &mut Settings) {
        if self.sample_size.is_some() {
            s.sample_size = self.sample_size;
        }
        if let Some(r) = self.restarts {
            s.restarts = r;
        }
    }
}

impl ClusterArgs {
    fn apply(&self, s: &mut Settings) {
        if let Some(k) = self.k {
            s.k = k;
        }
        if let Some(m) = self.cluster_model {
            s.cluster_model = m;
        }
        s.scaled_summaries |= self.scaled_summaries;
    }
}

fn settings(common: &Common, command: &Command) -> anyhow::Result<Settings> {
    let mut s = Settings::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    if common.links.is_some() {
        s.links = common.links.clone();
    }
    if let Some(v) = common.min_speed {
        s.min_speed = v;
    }
    match command {
        Command::Ingest(_) | Command::Synth { .. } => {}
        Command::Kde { grid, .. } => {
            if let Some(g) = grid {
                s.grid = g.clone();
            }
        }
        Command::Fit { fit, by_limit, .. } => {
            fit.apply(&mut s);
            s.by_limit |= by_limit;
        }
        Command::Modes { modes, by_limit, .. } => {
            modes.apply(&mut s);
            s.by_limit |= by_limit;
        }
        Command::ClusterLinks { cluster, fit, .. } => {
            cluster.apply(&mut s);
            fit.apply(&mut s);
        }
        Command::Report { fit, modes, cluster, .. } => {
            fit.apply(&mut s);
            modes.apply(&mut s);
            cluster.apply(&mut s);
        }
    }
    s.validate()?;
    Ok(s)
}

fn run(cli: &Cli) -> Outcome {
    let s = settings(&cli.common, &cli.command)?;
    let out = &cli.common.out_dir;
    match &cli.command {
        Command::Ingest(d) => ingest::run(&d.data, out, &s),
        Command::Synth { spec } => synth::run(spec, out, cli.common.seed, &s),
        Command::Kde { data, .. } => kde::run(&data.data, out, &s),
        Command::Fit { data, .. } => fit::run(&data.data, out, &s),
        Command::Modes { data, .. } => modes::run(&data.data, out, &s),
        Command::ClusterLinks { data, .. } => cluster::run(&data.data, out, &s),
        Command::Report { data, .. } => report::run(&data.data, out, &s),
    }
}

fn main() -> ExitCode {
    output::run_start();
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}
