//! `frontdoor` — pipeline driver for defense-feature identification, weight
//! orthogonalization, and front-door causal validation on planted test beds.
//!
//! Subcommands: `fdtest`, `build-model`, `dump`, `train-sae`, `identify`,
//! `surgery`, `eval`, `sweep-k`, `prop1`. Every run echoes its resolved
//! configuration into a manifest next to its outputs and is byte-reproducible
//! for fixed seeds (manifest wall-clock aside).
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage error, 3 IO/format
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use frontdoor_cli::config::FileConfig;
use frontdoor_cli::{commands, CmdResult, Failure};

#[derive(Parser)]
#[command(
    name = "frontdoor",
    version,
    about = "Defense-feature surgery toolkit with front-door causal validation"
)]
struct Cli {
    /// Global seed; subcommands derive their stage seeds from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts and manifests.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Structured config file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the front-door estimator against the do-oracle on discrete SCMs.
    Fdtest(commands::fdtest::Args),
    /// Build a planted toy model and write its container plus a build report.
    BuildModel(commands::build_model::Args),
    /// Dump paired harm/attack/benign activations for a planted model.
    Dump(commands::dump::Args),
    /// Train a sparse autoencoder on activation dumps.
    TrainSae(commands::train_sae::Args),
    /// Rank latent features, select the defense pool, extract directions.
    Identify(commands::identify::Args),
    /// Orthogonalize a planted model's output weights against directions.
    Surgery(commands::surgery::Args),
    /// Compare pre/post-intervention ASR and perplexity.
    Eval(commands::eval::Args),
    /// Sweep the candidate pool size and record ASR per pool.
    SweepK(commands::sweep_k::Args),
    /// Identifiability check on synthetic latents.
    Prop1(commands::prop1::Args),
}

fn run(cli: Cli) -> CmdResult {
    let file_config = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file_config.seed).unwrap_or(7);
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| file_config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::IoFormat(format!("cannot create {}: {e}", out_dir.display())))?;

    match cli.command {
        Command::Fdtest(args) => commands::fdtest::run(args, &file_config, seed, &out_dir),
        Command::BuildModel(args) => commands::build_model::run(args, &file_config, seed, &out_dir),
        Command::Dump(args) => commands::dump::run(args, &file_config, seed, &out_dir),
        Command::TrainSae(args) => commands::train_sae::run(args, &file_config, seed, &out_dir),
        Command::Identify(args) => commands::identify::run(args, &file_config, seed, &out_dir),
        Command::Surgery(args) => commands::surgery::run(args, &file_config, seed, &out_dir),
        Command::Eval(args) => commands::eval::run(args, &file_config, seed, &out_dir),
        Command::SweepK(args) => commands::sweep_k::run(args, &file_config, seed, &out_dir),
        Command::Prop1(args) => commands::prop1::run(args, &file_config, seed, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let label = match &failure {
                Failure::Usage(m) => format!("usage error: {m}"),
                Failure::Validation(m) => format!("validation failure: {m}"),
                Failure::IoFormat(m) => format!("io/format error: {m}"),
            };
            eprintln!("frontdoor: {label}");
            ExitCode::from(failure.exit_code())
        }
    }
}
