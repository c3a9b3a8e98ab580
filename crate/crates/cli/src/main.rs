//! `ndm`: simulate, fit, evaluate and export deconvolution models.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndm::model::Domain;

#[derive(Parser)]
#[command(name = "ndm", version, about = "Nonparametric deconvolution models")]
struct Cli {
    /// Worker threads for the per-observation updates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic data set with its ground truth.
    Simulate(SimulateArgs),
    /// Fit a parametric or nonparametric model to a data CSV.
    Fit(FitArgs),
    /// Score a fit or an external estimate against a ground truth.
    Evaluate(EvaluateArgs),
    /// Flatten a fit's posterior expectations to a long-form CSV.
    ExportExpectations(ExportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file of flat key = value settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set k=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed for every stochastic step; falls back to NDM_SEED, then the config.
    #[arg(long, env = "NDM_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Parametric,
    Nonparametric,
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    Domain::parse(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Data CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Data domain, overriding the CSV's manifest sidecar.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain>,
    /// Divide each row by the matching entry of this one-column CSV and fit
    /// the result as unit-interval proportions.
    #[arg(long, value_name = "DENOMINATORS")]
    counts_to_proportions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "parametric")]
    mode: Mode,
    /// Output directory for fit.json, checkpoint.json and run.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run on the same data.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    no_splits: bool,
    #[arg(long)]
    no_merges: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground-truth JSON written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// FitReport JSON written by `fit`.
    #[arg(long, conflicts_with = "estimate", required_unless_present = "estimate")]
    fit: Option<PathBuf>,
    /// External estimate CSV with columns block,n,k,m,value.
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// Metrics JSON to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// FitReport JSON written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// CSV to write.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads {n}: {e}");
            return ExitCode::from(commands::EXIT_CONFIG);
        }
    }
    let outcome = match cli.command {
        Command::Simulate(a) => commands::simulate(&a.cfg.config, &a.cfg.sets, a.cfg.seed, &a.out),
        Command::Fit(a) => commands::fit(&commands::FitRequest {
            config: a.cfg.config,
            sets: a.cfg.sets,
            seed: a.cfg.seed,
            data: a.data,
            domain: a.domain,
            denominators: a.counts_to_proportions,
            mode: a.mode,
            out: a.out,
            resume: a.resume,
            no_splits: a.no_splits,
            no_merges: a.no_merges,
        }),
        Command::Evaluate(a) => commands::evaluate(&a.truth, a.fit.as_deref(), a.estimate.as_deref(), &a.out),
        Command::ExportExpectations(a) => commands::export(&a.fit, &a.out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
