use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cqdr_cli::config::render_entries;
use cqdr_cli::report::to_json;
use cqdr_cli::{
    emit, load_input, resolve_config, run_bandwidth, run_dim, run_fit, run_project, run_simulate, write_projection_csv,
    CliError, CliResult, Overrides, RunConfig,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cqdr", version, about = "Composite quantile dimension reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// CSV file with a header row
    #[arg(long, global = true)]
    input: Option<PathBuf>,

    /// Response column, by name or zero-based index
    #[arg(long, global = true)]
    response: Option<String>,

    /// Covariate columns, comma separated (default: every other numeric column)
    #[arg(long, global = true)]
    features: Option<String>,

    /// Structural dimension
    #[arg(long, global = true)]
    q: Option<usize>,

    /// qopg, qmave or sir
    #[arg(long, global = true)]
    estimator: Option<String>,

    /// rot, cv, modified-cv or fixed:<h>
    #[arg(long, global = true)]
    bandwidth: Option<String>,

    /// Quantile levels, comma separated
    #[arg(long = "tau-grid", global = true)]
    tau_grid: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML file of dotted keys (see `cqdr config`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Report destination (default: stdout)
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Worker threads; results do not depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate central subspace directions from a CSV file
    Fit,
    /// Choose the structural dimension by cross-validation
    Dim,
    /// Show the bandwidths an estimator would use
    Bandwidth,
    /// Run a Monte Carlo experiment described by the config
    Simulate,
    /// Reduced coordinates of a CSV file under a fitted basis
    Project {
        /// JSON report written by `cqdr fit`
        #[arg(long)]
        basis: PathBuf,
    },
    /// Print every config key with its resolved value
    Config,
}

fn write_json<T: Serialize>(value: &T, out: Option<&PathBuf>) -> CliResult<()> {
    let text = to_json(value).map_err(|e| CliError::Output(e.into()))?;
    emit(&text, out)
}

fn run(cli: Cli) -> CliResult<()> {
    let c = &cli.common;
    let flags = Overrides {
        estimator: c.estimator.clone(),
        q: c.q,
        bandwidth: c.bandwidth.clone(),
        tau_grid: c.tau_grid.clone(),
        seed: c.seed,
        threads: c.threads,
        response: c.response.clone(),
        features: c.features.clone(),
    };
    let cfg: RunConfig = resolve_config(c.config.as_deref(), &flags)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}")))?;
    }
    let out = c.output.as_ref();
    let input = c.input.as_deref();
    match &cli.command {
        Command::Fit => write_json(&run_fit(&cfg, &load_input(&cfg, input)?)?, out),
        Command::Dim => write_json(&run_dim(&cfg, &load_input(&cfg, input)?)?, out),
        Command::Bandwidth => write_json(&run_bandwidth(&cfg, &load_input(&cfg, input)?)?, out),
        Command::Simulate => write_json(&run_simulate(&cfg)?, out),
        Command::Project { basis } => {
            let report = run_project(&cfg, input, basis)?;
            match out {
                Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => {
                    write_projection_csv(&report, std::fs::File::create(p)?)
                }
                _ => write_json(&report, out),
            }
        }
        Command::Config => emit(&render_entries(&cfg.entries()), out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
