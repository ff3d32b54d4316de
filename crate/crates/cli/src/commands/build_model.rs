//! `build-model`: construct a planted model and persist it.

use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use serde::Serialize;

use frontdoor_core::io::atomic_write;
use frontdoor_core::planted::{build_planted_model, save_model, PlantedConfig};

use crate::config::{pick, FileConfig};
use crate::manifest::ManifestBuilder;
use crate::{CmdResult, Failure};

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_task: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    n_trigger: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    answer_gain: Option<f64>,
    #[arg(long)]
    refuse_content_penalty: Option<f64>,
    #[arg(long)]
    defense_suppression: Option<f64>,
    /// Disable layer normalization in the forward pass.
    #[arg(long)]
    no_layer_norm: bool,
    /// Model output path (defaults to <out-dir>/model.plm1).
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    #[serde(flatten)]
    planted: PlantedConfig,
    model_out: PathBuf,
    seed: u64,
}

pub fn run(args: Args, file: &FileConfig, seed: u64, out_dir: &Path) -> CmdResult {
    let s = file.build_model.clone().unwrap_or_default();
    let defaults = PlantedConfig::default();
    let planted = PlantedConfig {
        d_model: pick(args.d_model, s.d_model, defaults.d_model),
        n_task: pick(args.n_task, s.n_task, defaults.n_task),
        vocab_size: pick(args.vocab_size, s.vocab_size, defaults.vocab_size),
        n_trigger: pick(args.n_trigger, s.n_trigger, defaults.n_trigger),
        alpha: pick(args.alpha, s.alpha, defaults.alpha),
        gamma: pick(args.gamma, s.gamma, defaults.gamma),
        noise_sigma: pick(args.noise_sigma, s.noise_sigma, defaults.noise_sigma),
        answer_gain: pick(args.answer_gain, s.answer_gain, defaults.answer_gain),
        refuse_content_penalty: pick(
            args.refuse_content_penalty,
            s.refuse_content_penalty,
            defaults.refuse_content_penalty,
        ),
        defense_suppression: pick(
            args.defense_suppression,
            s.defense_suppression,
            defaults.defense_suppression,
        ),
        ln_enabled: if args.no_layer_norm {
            false
        } else {
            s.ln_enabled.unwrap_or(defaults.ln_enabled)
        },
    };
    let model_out = pick(args.model_out, s.model_out, out_dir.join("model.plm1"));
    let resolved = Resolved {
        planted: planted.clone(),
        model_out: model_out.clone(),
        seed,
    };

    let mut manifest = ManifestBuilder::new("build_model");
    let (model, report) = build_planted_model(&planted, seed).map_err(Failure::from)?;
    save_model(&model, &model_out).map_err(Failure::from)?;
    manifest.output(&model_out);

    let report_path = out_dir.join("build_report.toml");
    let text = toml::to_string(&report).map_err(|e| Failure::IoFormat(format!("report: {e}")))?;
    atomic_write(&report_path, text.as_bytes()).map_err(Failure::from)?;
    manifest.output(&report_path);
    manifest.write(out_dir, &resolved)?;

    println!(
        "built planted model ({}x{} vocab x d_model) -> {}",
        model.vocab.len(),
        planted.d_model,
        model_out.display()
    );
    println!(
        "probe refusal probability {:.4} over {} harmful prompts{}",
        report.probe_refusal_probability,
        report.probe_count,
        if report.enforced { " (enforced >= 0.99)" } else { "" }
    );
    Ok(())
}
