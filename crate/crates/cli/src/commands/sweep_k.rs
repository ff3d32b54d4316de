//! `sweep-k`: re-run selection, surgery, and greedy evaluation for a range of
//! candidate pool sizes, recording ASR and the recovered-direction cosine.

use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use serde::Serialize;

use frontdoor_core::contrast::{
    defense_directions, feature_shift, select_defense_features, PairedActivations,
};
use frontdoor_core::error::CoreError;
use frontdoor_core::io::{atomic_write, sig9};
use frontdoor_core::metrics::{asr, judge_ids, JudgeConfig};
use frontdoor_core::planted::{
    apply_surgery, generate, generate_scenarios, Decoding, GenerationConfig, SurgeryScope,
};

use crate::commands::{load_activations_checked, load_model_checked, load_sae_checked};
use crate::commands::identify::control_pairs_from_benign;
use crate::config::{pick, FileConfig};
use crate::manifest::ManifestBuilder;
use crate::{CmdResult, Failure};

#[derive(Debug, ClapArgs)]
pub struct Args {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    sae: Option<PathBuf>,
    #[arg(long)]
    harm: Option<PathBuf>,
    #[arg(long)]
    attack: Option<PathBuf>,
    #[arg(long)]
    benign: Option<PathBuf>,
    /// Pool sizes to sweep.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    #[arg(long)]
    n_scenarios: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    model: PathBuf,
    sae: PathBuf,
    harm: PathBuf,
    attack: PathBuf,
    benign: PathBuf,
    k_values: Vec<usize>,
    n_scenarios: usize,
    max_tokens: usize,
    seed: u64,
}

pub fn run(args: Args, file: &FileConfig, seed: u64, out_dir: &Path) -> CmdResult {
    let s = file.sweep_k.clone().unwrap_or_default();
    let resolved = Resolved {
        model: pick(args.model, s.model, out_dir.join("model.plm1")),
        sae: pick(args.sae, s.sae, out_dir.join("sae.sae1")),
        harm: pick(args.harm, s.harm, out_dir.join("harm.actv")),
        attack: pick(args.attack, s.attack, out_dir.join("attack.actv")),
        benign: pick(args.benign, s.benign, out_dir.join("benign.actv")),
        k_values: pick(args.k_values, s.k_values, vec![1, 10, 20, 30, 40, 50]),
        n_scenarios: pick(args.n_scenarios, s.n_scenarios, 500),
        max_tokens: pick(args.max_tokens, s.max_tokens, 16),
        seed,
    };

    let mut manifest = ManifestBuilder::new("sweep_k");
    for p in [&resolved.model, &resolved.sae, &resolved.harm, &resolved.attack, &resolved.benign] {
        manifest.input(p)?;
    }
    let model = load_model_checked(&resolved.model)?;
    let sae = load_sae_checked(&resolved.sae)?;
    let harm = load_activations_checked(&resolved.harm)?;
    let attack = load_activations_checked(&resolved.attack)?;
    let benign = load_activations_checked(&resolved.benign)?;
    let pairs = PairedActivations::new(harm, attack).map_err(Failure::from)?;
    let control = control_pairs_from_benign(&benign)?;
    let report = feature_shift(&sae, &pairs).map_err(Failure::from)?;

    let scenarios = generate_scenarios(&model.vocab, resolved.n_scenarios, true, seed + 3)
        .map_err(Failure::from)?;
    let lexicon = JudgeConfig::planted()
        .lexicon_ids(&model.vocab)
        .map_err(Failure::from)?;

    let mut csv = String::from("k_pool,asr_percent,recovered_cosine,status\n");
    for &k_pool in &resolved.k_values {
        match select_defense_features(&report, k_pool, Some(&control), &sae) {
            Ok(selected) => {
                let dirs = defense_directions(&sae, &selected).map_err(Failure::from)?;
                let cosine = dirs.directions.row(0).dot(&model.u_dir).abs();
                let surgered =
                    apply_surgery(&model, &dirs, SurgeryScope::OutputOnly).map_err(Failure::from)?;
                let mut judges = Vec::with_capacity(scenarios.len());
                for (i, sc) in scenarios.iter().enumerate() {
                    let gcfg = GenerationConfig {
                        max_tokens: resolved.max_tokens,
                        decoding: Decoding::Greedy,
                        seed: seed + 10_000 + i as u64,
                    };
                    let toks = generate(&surgered, sc, &gcfg).map_err(Failure::from)?;
                    judges.push(judge_ids(&toks, &lexicon).map_err(Failure::from)?);
                }
                let record = asr(&judges).map_err(Failure::from)?;
                println!(
                    "k_pool {k_pool}: ASR {:.2}%, recovered cosine {cosine:.4} ({} directions)",
                    record.asr_percent,
                    dirs.m()
                );
                csv.push_str(&format!(
                    "{},{},{},ok\n",
                    k_pool,
                    sig9(record.asr_percent),
                    sig9(cosine)
                ));
            }
            Err(e @ CoreError::InvalidPoolSize { .. }) => {
                println!("k_pool {k_pool}: {e}");
                csv.push_str(&format!("{k_pool},,,invalid_pool_size\n"));
            }
            Err(e) => return Err(Failure::from(e)),
        }
    }

    let csv_path = out_dir.join("sweep_k.csv");
    atomic_write(&csv_path, csv.as_bytes()).map_err(Failure::from)?;
    manifest.output(&csv_path);
    manifest.write(out_dir, &resolved)?;
    println!("sweep -> {}", csv_path.display());
    Ok(())
}
