//! `train-sae`: minibatch gradient descent on activation dumps.

use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use serde::Serialize;

use frontdoor_core::activations::ActivationMatrix;
use frontdoor_core::sae::{save_checkpoint, train, SaeParams, TrainConfig};

use crate::commands::load_activations_checked;
use crate::config::{pick, FileConfig};
use crate::formats::write_history_csv;
use crate::manifest::ManifestBuilder;
use crate::{CmdResult, Failure};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Activation dump files; the training corpus is their concatenation.
    #[arg(long, num_args = 1..)]
    activations: Option<Vec<PathBuf>>,
    /// Latent width.
    #[arg(long)]
    k: Option<usize>,
    /// Sparsity weight.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Checkpoint output path (defaults to <out-dir>/sae.sae1).
    #[arg(long)]
    sae_out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    activations: Vec<PathBuf>,
    k: usize,
    train: TrainConfig,
    sae_out: PathBuf,
    seed: u64,
}

pub fn run(args: Args, file: &FileConfig, seed: u64, out_dir: &Path) -> CmdResult {
    let s = file.train_sae.clone().unwrap_or_default();
    let default_inputs = vec![
        out_dir.join("harm.actv"),
        out_dir.join("attack.actv"),
        out_dir.join("benign.actv"),
    ];
    let defaults = TrainConfig::default();
    let resolved = Resolved {
        activations: pick(args.activations, s.activations, default_inputs),
        k: pick(args.k, s.k, 64),
        train: TrainConfig {
            learning_rate: pick(args.learning_rate, s.learning_rate, defaults.learning_rate),
            batch_size: pick(args.batch_size, s.batch_size, defaults.batch_size),
            epochs: pick(args.epochs, s.epochs, defaults.epochs),
            seed: seed + 2,
            lambda: pick(args.lambda, s.lambda, defaults.lambda),
            log_every: pick(args.log_every, s.log_every, defaults.log_every),
        },
        sae_out: pick(args.sae_out, s.sae_out, out_dir.join("sae.sae1")),
        seed,
    };

    let mut manifest = ManifestBuilder::new("train_sae");
    let mut parts = Vec::new();
    for path in &resolved.activations {
        manifest.input(path)?;
        parts.push(load_activations_checked(path)?);
    }
    let refs: Vec<&ActivationMatrix> = parts.iter().collect();
    let corpus = ActivationMatrix::concat(&refs, "train").map_err(Failure::from)?;

    let init = SaeParams::init(corpus.d(), resolved.k, resolved.train.lambda, seed + 1)
        .map_err(Failure::from)?;
    let (trained, history) = train(&init, &corpus, &resolved.train).map_err(Failure::from)?;
    save_checkpoint(&trained, &resolved.sae_out).map_err(Failure::from)?;
    manifest.output(&resolved.sae_out);

    let history_path = out_dir.join("train_history.csv");
    write_history_csv(&history_path, &history)?;
    manifest.output(&history_path);
    manifest.write(out_dir, &resolved)?;

    let last = history.records.last().expect("history is non-empty");
    println!(
        "trained SAE d={} k={} on {} samples; final batch loss {:.6} (recon {:.6}, sparsity {:.6})",
        corpus.d(),
        resolved.k,
        corpus.n(),
        last.total,
        last.reconstruction,
        last.sparsity
    );
    println!("checkpoint -> {}", resolved.sae_out.display());
    Ok(())
}
