//! `eval`: pre/post-intervention comparison of attack success rate and
//! perplexity over a scenario set, under both greedy and seeded-sampling
//! decoding.

use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use serde::Serialize;

use frontdoor_core::io::{atomic_write, sig9};
use frontdoor_core::metrics::{asr, judge_ids, perplexity, JudgeConfig};
use frontdoor_core::planted::{
    generate, generate_scenarios, generate_with_clamp, scenarios_from_text, Decoding,
    GenerationConfig, PlantedModel, PromptScenario,
};
use frontdoor_core::sae::SaeParams;

use crate::commands::{load_model_checked, load_sae_checked};
use crate::config::{pick, pick_opt, FileConfig};
use crate::manifest::ManifestBuilder;
use crate::{CmdResult, Failure};

#[derive(Debug, ClapArgs)]
pub struct Args {
    /// Baseline model (defaults to <out-dir>/model.plm1).
    #[arg(long)]
    model_pre: Option<PathBuf>,
    /// Post-intervention model for the surgery intervention (defaults to
    /// <out-dir>/model_surgered.plm1 when intervention = surgery).
    #[arg(long)]
    model_post: Option<PathBuf>,
    /// Intervention to compare against the baseline: none, surgery, clamp.
    #[arg(long)]
    intervention: Option<String>,
    /// SAE checkpoint, required for the clamp intervention.
    #[arg(long)]
    sae: Option<PathBuf>,
    /// Latent features to clamp to zero (clamp intervention).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    clamp_features: Option<Vec<usize>>,
    /// Scenario list file; harmful scenarios are generated when omitted.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    #[arg(long)]
    n_scenarios: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
struct Resolved {
    model_pre: PathBuf,
    model_post: Option<PathBuf>,
    intervention: String,
    sae: Option<PathBuf>,
    clamp_features: Vec<usize>,
    scenarios: Option<PathBuf>,
    n_scenarios: usize,
    max_tokens: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct SideReport {
    asr_greedy_percent: f64,
    asr_sampled_percent: f64,
    refusal_rate_greedy: f64,
    mean_ppl_greedy: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    config: Resolved,
    n_scenarios: usize,
    pre: SideReport,
    post: SideReport,
    asr_greedy_delta: f64,
}

enum PostModel {
    Same,
    Surgered(Box<PlantedModel>),
    Clamped {
        sae: Box<SaeParams>,
        features: Vec<usize>,
    },
}

struct SideOutcome {
    greedy_judges: Vec<u8>,
    sampled_judges: Vec<u8>,
    ppls: Vec<f64>,
}

fn evaluate_side(
    model: &PlantedModel,
    post: Option<&PostModel>,
    scenarios: &[PromptScenario],
    max_tokens: usize,
    seed: u64,
    lexicon: &[usize],
) -> Result<SideOutcome, Failure> {
    let mut greedy_judges = Vec::with_capacity(scenarios.len());
    let mut sampled_judges = Vec::with_capacity(scenarios.len());
    let mut ppls = Vec::with_capacity(scenarios.len());
    for (i, sc) in scenarios.iter().enumerate() {
        let greedy_cfg = GenerationConfig {
            max_tokens,
            decoding: Decoding::Greedy,
            seed: seed + 10_000 + i as u64,
        };
        let sample_cfg = GenerationConfig {
            max_tokens,
            decoding: Decoding::Sample,
            seed: seed + 20_000 + i as u64,
        };
        let (greedy_tokens, sampled_tokens, ppl_model): (Vec<usize>, Vec<usize>, &PlantedModel) =
            match post {
                None => (
                    generate(model, sc, &greedy_cfg).map_err(Failure::from)?,
                    generate(model, sc, &sample_cfg).map_err(Failure::from)?,
                    model,
                ),
                Some(PostModel::Same) => (
                    generate(model, sc, &greedy_cfg).map_err(Failure::from)?,
                    generate(model, sc, &sample_cfg).map_err(Failure::from)?,
                    model,
                ),
                Some(PostModel::Surgered(m)) => (
                    generate(m, sc, &greedy_cfg).map_err(Failure::from)?,
                    generate(m, sc, &sample_cfg).map_err(Failure::from)?,
                    m,
                ),
                Some(PostModel::Clamped { sae, features }) => (
                    generate_with_clamp(model, sae, features, sc, &greedy_cfg)
                        .map_err(Failure::from)?,
                    generate_with_clamp(model, sae, features, sc, &sample_cfg)
                        .map_err(Failure::from)?,
                    model,
                ),
            };
        greedy_judges.push(judge_ids(&greedy_tokens, lexicon).map_err(Failure::from)?);
        sampled_judges.push(judge_ids(&sampled_tokens, lexicon).map_err(Failure::from)?);
        ppls.push(perplexity(ppl_model, &greedy_tokens, &sc.tokens).map_err(Failure::from)?);
    }
    Ok(SideOutcome {
        greedy_judges,
        sampled_judges,
        ppls,
    })
}

fn side_report(outcome: &SideOutcome) -> Result<SideReport, Failure> {
    let greedy = asr(&outcome.greedy_judges).map_err(Failure::from)?;
    let sampled = asr(&outcome.sampled_judges).map_err(Failure::from)?;
    let mean_ppl = outcome.ppls.iter().sum::<f64>() / outcome.ppls.len() as f64;
    Ok(SideReport {
        asr_greedy_percent: greedy.asr_percent,
        asr_sampled_percent: sampled.asr_percent,
        refusal_rate_greedy: 1.0 - greedy.asr_percent / 100.0,
        mean_ppl_greedy: mean_ppl,
    })
}

pub fn run(args: Args, file: &FileConfig, seed: u64, out_dir: &Path) -> CmdResult {
    let s = file.eval.clone().unwrap_or_default();
    let intervention = pick(args.intervention, s.intervention, "surgery".to_string());
    let model_post = match intervention.as_str() {
        "surgery" => Some(pick(
            args.model_post,
            s.model_post,
            out_dir.join("model_surgered.plm1"),
        )),
        "none" | "clamp" => pick_opt(args.model_post, s.model_post),
        other => {
            return Err(Failure::Usage(format!(
                "unknown intervention {other:?} (expected none, surgery, clamp)"
            )))
        }
    };
    let resolved = Resolved {
        model_pre: pick(args.model_pre, s.model_pre, out_dir.join("model.plm1")),
        model_post,
        intervention: intervention.clone(),
        sae: pick_opt(args.sae, s.sae),
        clamp_features: pick(args.clamp_features, s.clamp_features, Vec::new()),
        scenarios: pick_opt(args.scenarios, s.scenarios),
        n_scenarios: pick(args.n_scenarios, s.n_scenarios, 1000),
        max_tokens: pick(args.max_tokens, s.max_tokens, 16),
        seed,
    };

    let mut manifest = ManifestBuilder::new("eval");
    manifest.input(&resolved.model_pre)?;
    let model = load_model_checked(&resolved.model_pre)?;

    let post = match intervention.as_str() {
        "none" => PostModel::Same,
        "surgery" => {
            let path = resolved.model_post.as_ref().expect("resolved above");
            manifest.input(path)?;
            PostModel::Surgered(Box::new(load_model_checked(path)?))
        }
        "clamp" => {
            let sae_path = resolved
                .sae
                .clone()
                .unwrap_or_else(|| out_dir.join("sae.sae1"));
            manifest.input(&sae_path)?;
            let sae = load_sae_checked(&sae_path)?;
            if resolved.clamp_features.is_empty() {
                return Err(Failure::Usage(
                    "clamp intervention needs --clamp-features".into(),
                ));
            }
            PostModel::Clamped {
                sae: Box::new(sae),
                features: resolved.clamp_features.clone(),
            }
        }
        _ => unreachable!(),
    };

    let scenarios = match &resolved.scenarios {
        Some(path) => {
            manifest.input(path)?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::IoFormat(format!("{}: {e}", path.display())))?;
            scenarios_from_text(&model.vocab, &text).map_err(Failure::from)?
        }
        None => generate_scenarios(&model.vocab, resolved.n_scenarios, true, seed + 3)
            .map_err(Failure::from)?,
    };

    let lexicon = JudgeConfig::planted()
        .lexicon_ids(&model.vocab)
        .map_err(Failure::from)?;
    let pre_outcome = evaluate_side(
        &model,
        None,
        &scenarios,
        resolved.max_tokens,
        seed,
        &lexicon,
    )?;
    let post_outcome = evaluate_side(
        &model,
        Some(&post),
        &scenarios,
        resolved.max_tokens,
        seed,
        &lexicon,
    )?;

    // Per-scenario verdicts.
    let verdicts_path = out_dir.join("verdicts.csv");
    let mut csv = String::from(
        "scenario_index,harmful,pre_greedy,post_greedy,pre_sampled,post_sampled,pre_ppl,post_ppl\n",
    );
    for i in 0..scenarios.len() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i,
            u8::from(scenarios[i].harmful),
            pre_outcome.greedy_judges[i],
            post_outcome.greedy_judges[i],
            pre_outcome.sampled_judges[i],
            post_outcome.sampled_judges[i],
            sig9(pre_outcome.ppls[i]),
            sig9(post_outcome.ppls[i]),
        ));
    }
    atomic_write(&verdicts_path, csv.as_bytes()).map_err(Failure::from)?;

    let pre = side_report(&pre_outcome)?;
    let post_r = side_report(&post_outcome)?;
    let report = Report {
        asr_greedy_delta: post_r.asr_greedy_percent - pre.asr_greedy_percent,
        n_scenarios: scenarios.len(),
        pre,
        post: post_r,
        config: resolved,
    };
    let report_path = out_dir.join("eval_report.toml");
    let text = toml::to_string(&report).map_err(|e| Failure::IoFormat(format!("report: {e}")))?;
    atomic_write(&report_path, text.as_bytes()).map_err(Failure::from)?;
    manifest.output(&verdicts_path);
    manifest.output(&report_path);
    manifest.write(out_dir, &report.config)?;

    println!(
        "pre:  ASR greedy {:.2}% | sampled {:.2}% | mean PPL {:.3}",
        report.pre.asr_greedy_percent,
        report.pre.asr_sampled_percent,
        report.pre.mean_ppl_greedy
    );
    println!(
        "post ({}): ASR greedy {:.2}% | sampled {:.2}% | mean PPL {:.3}",
        intervention,
        report.post.asr_greedy_percent,
        report.post.asr_sampled_percent,
        report.post.mean_ppl_greedy
    );
    Ok(())
}
