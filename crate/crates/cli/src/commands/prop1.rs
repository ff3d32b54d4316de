//! `prop1`: identifiability check — train an overcomplete SAE on synthetic
//! Bernoulli-Laplace latents and score the recovered codes against the truth.

use std::path::Path;

use clap::Args as ClapArgs;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use frontdoor_core::contrast::identifiability_score;
use frontdoor_core::io::atomic_write;
use frontdoor_core::sae::{encode_batch, train, SaeParams, TrainConfig};
use frontdoor_core::synthetic::{generate_synthetic_latents, SyntheticLatentSpec};

use crate::config::{pick, FileConfig};
use crate::manifest::ManifestBuilder;
use crate::{CmdResult, Failure};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Sample count.
    #[arg(long)]
    n: Option<usize>,
    /// SAE width (defaults to twice the true latent count).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Minimum identifiability score for a passing run.
    #[arg(long)]
    threshold: Option<f64>,
    /// Observation noise override for the synthetic spec.
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    n: usize,
    k: usize,
    lambda: f64,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    threshold: f64,
    noise_sigma: f64,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct Report {
    config: Resolved,
    score: f64,
    control_score: f64,
    passed: bool,
}

pub fn run(args: Args, file: &FileConfig, seed: u64, out_dir: &Path) -> CmdResult {
    let s = file.prop1.clone().unwrap_or_default();
    let mut spec = SyntheticLatentSpec::default_spec();
    let resolved = Resolved {
        n: pick(args.n, s.n, 50_000),
        k: pick(args.k, s.k, 2 * spec.k_true),
        lambda: pick(args.lambda, s.lambda, 0.03),
        learning_rate: pick(args.learning_rate, s.learning_rate, 0.1),
        epochs: pick(args.epochs, s.epochs, 40),
        batch_size: pick(args.batch_size, s.batch_size, 128),
        threshold: pick(args.threshold, s.threshold, 0.9),
        noise_sigma: pick(args.noise_sigma, s.noise_sigma, spec.noise_sigma),
        seed,
    };
    spec.noise_sigma = resolved.noise_sigma;

    let manifest = ManifestBuilder::new("prop1");
    let dataset =
        generate_synthetic_latents(&spec, resolved.n, seed).map_err(Failure::from)?;
    let init = SaeParams::init(spec.d, resolved.k, resolved.lambda, seed + 1)
        .map_err(Failure::from)?;
    let cfg = TrainConfig {
        learning_rate: resolved.learning_rate,
        batch_size: resolved.batch_size,
        epochs: resolved.epochs,
        seed: seed + 2,
        lambda: resolved.lambda,
        log_every: 100_000,
    };
    let (trained, _) = train(&init, &dataset.activations, &cfg).map_err(Failure::from)?;
    let codes = encode_batch(&trained, &dataset.activations).map_err(Failure::from)?;
    let score = identifiability_score(&codes, &dataset.latents).map_err(Failure::from)?;

    // Decoupled control: shuffle code rows so any correspondence is chance.
    let mut shuffled = codes.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 5);
    let n = shuffled.nrows();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        if i != j {
            for col in 0..shuffled.ncols() {
                let tmp = shuffled[[i, col]];
                shuffled[[i, col]] = shuffled[[j, col]];
                shuffled[[j, col]] = tmp;
            }
        }
    }
    let control_score =
        identifiability_score(&shuffled, &dataset.latents).map_err(Failure::from)?;

    let passed = score >= resolved.threshold;
    let report = Report {
        config: resolved,
        score,
        control_score,
        passed,
    };
    let report_path = out_dir.join("prop1_report.toml");
    let text = toml::to_string(&report).map_err(|e| Failure::IoFormat(format!("report: {e}")))?;
    atomic_write(&report_path, text.as_bytes()).map_err(Failure::from)?;
    let mut manifest = manifest;
    manifest.output(&report_path);
    manifest.write(out_dir, &report.config)?;

    println!(
        "identifiability score {score:.4} (threshold {}); decoupled control {control_score:.4}",
        report.config.threshold
    );
    if passed {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "identifiability score {score:.4} below threshold {}",
            report.config.threshold
        )))
    }
}
