//! Structured configuration file with per-subcommand sections.
//!
//! Resolution order per value: explicit command-line flag, then config-file
//! entry, then built-in default. Unknown keys are rejected so typos fail
//! loudly instead of silently falling back to defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub fdtest: Option<FdtestSection>,
    pub build_model: Option<BuildModelSection>,
    pub dump: Option<DumpSection>,
    pub train_sae: Option<TrainSaeSection>,
    pub identify: Option<IdentifySection>,
    pub surgery: Option<SurgerySection>,
    pub eval: Option<EvalSection>,
    pub sweep_k: Option<SweepKSection>,
    pub prop1: Option<Prop1Section>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::IoFormat(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdtestSection {
    pub scm_file: Option<PathBuf>,
    pub random: Option<usize>,
    pub samples: Option<usize>,
    pub cards: Option<Vec<usize>>,
    pub expect_violation: Option<bool>,
    pub tolerance_exact: Option<f64>,
    pub tolerance_sampled: Option<f64>,
    pub violation_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildModelSection {
    pub d_model: Option<usize>,
    pub n_task: Option<usize>,
    pub vocab_size: Option<usize>,
    pub n_trigger: Option<usize>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub answer_gain: Option<f64>,
    pub refuse_content_penalty: Option<f64>,
    pub defense_suppression: Option<f64>,
    pub ln_enabled: Option<bool>,
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpSection {
    pub model: Option<PathBuf>,
    pub scenarios: Option<PathBuf>,
    pub n_scenarios: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSaeSection {
    pub activations: Option<Vec<PathBuf>>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub log_every: Option<usize>,
    pub sae_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifySection {
    pub sae: Option<PathBuf>,
    pub harm: Option<PathBuf>,
    pub attack: Option<PathBuf>,
    pub benign: Option<PathBuf>,
    pub k_pool: Option<usize>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurgerySection {
    pub model: Option<PathBuf>,
    pub directions: Option<PathBuf>,
    pub scope: Option<String>,
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub model_pre: Option<PathBuf>,
    pub model_post: Option<PathBuf>,
    pub intervention: Option<String>,
    pub sae: Option<PathBuf>,
    pub clamp_features: Option<Vec<usize>>,
    pub scenarios: Option<PathBuf>,
    pub n_scenarios: Option<usize>,
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepKSection {
    pub model: Option<PathBuf>,
    pub sae: Option<PathBuf>,
    pub harm: Option<PathBuf>,
    pub attack: Option<PathBuf>,
    pub benign: Option<PathBuf>,
    pub k_values: Option<Vec<usize>>,
    pub n_scenarios: Option<usize>,
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop1Section {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub threshold: Option<f64>,
    pub noise_sigma: Option<f64>,
}

/// Flag beats config beats default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag beats config; no default exists.
pub fn pick_opt<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}
