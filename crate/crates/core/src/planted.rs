//! Toy residual-stream model with a planted task subspace and a planted
//! defense direction.
//!
//! The model realizes the confounded generation process in activation space:
//! a harmful prompt writes both its task intent (along one of `n_task`
//! orthonormal task directions) and a defense state (along a unit direction
//! `u` orthogonal to every task direction) into the residual `h`; the output
//! matrix turns the defense component into a dominant REFUSE logit. Task
//! content flows to ANSWER tokens only through the task directions, so
//! removing `u` from the output weights severs exactly the defense pathway.
//!
//! Output-row construction (all gains configurable):
//!
//! ```text
//! REFUSE    row = gamma * u - c * sum_t s_t     (c = refuse_content_penalty)
//! ANSWER_t  row = beta * s_t - m * u            (beta = answer_gain)
//! other     row = -m * u                        (m = defense_suppression)
//! ```
//!
//! The `-m * u` component keeps every non-REFUSE logit suppressed while the
//! defense state is active and vanishes after surgery; the `-c * sum_t s_t`
//! component keeps the REFUSE logit below the noise floor once `u` is gone.
//! When the residual dimension has room, the basis is drawn orthogonal to the
//! all-ones vector so layer normalization's mean subtraction cannot leak the
//! defense component into benign outputs.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activations::ActivationMatrix;
use crate::contrast::DefenseDirectionSet;
use crate::error::{CoreError, Result};
use crate::io::{self, ActvMeta};
use crate::sae::{self, SaeParams};
use crate::surgery::{orthogonalize_weights, projector};

const PLM_MAGIC: &[u8; 4] = b"PLM1";
const PLM_VERSION: u32 = 1;

/// Probe size used by the build-time refusal check.
const BUILD_PROBE_COUNT: usize = 1000;

/// Construction parameters of the planted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub d_model: usize,
    pub n_task: usize,
    pub vocab_size: usize,
    pub n_trigger: usize,
    /// Task signal gain in the residual.
    pub alpha: f64,
    /// Refusal gain: u-alignment of the REFUSE output row.
    pub gamma: f64,
    /// Residual noise scale.
    pub noise_sigma: f64,
    /// Task-direction gain of ANSWER output rows.
    pub answer_gain: f64,
    /// Negative task-sum component of the REFUSE row.
    pub refuse_content_penalty: f64,
    /// Negative u component of every non-REFUSE row.
    pub defense_suppression: f64,
    /// Whether the forward pass applies layer normalization.
    pub ln_enabled: bool,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_task: 4,
            vocab_size: 64,
            n_trigger: 12,
            alpha: 4.0,
            gamma: 8.0,
            noise_sigma: 0.05,
            answer_gain: 1.0,
            refuse_content_penalty: 0.5,
            defense_suppression: 2.0,
            ln_enabled: true,
        }
    }
}

impl PlantedConfig {
    pub fn n_benign(&self) -> usize {
        self.vocab_size - 1 - self.n_task - self.n_trigger
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model < self.n_task + 1 {
            return Err(CoreError::Precondition(format!(
                "d_model = {} must be at least n_task + 1 = {}",
                self.d_model,
                self.n_task + 1
            )));
        }
        if self.vocab_size < 1 + self.n_task + self.n_trigger + 1 {
            return Err(CoreError::Precondition(
                "vocab must fit REFUSE, ANSWER tokens, triggers, and at least one benign token"
                    .into(),
            ));
        }
        if self.n_task < 1 || self.n_trigger < 1 {
            return Err(CoreError::Precondition(
                "need at least one task and one trigger token".into(),
            ));
        }
        if self.gamma <= 0.0 {
            return Err(CoreError::Precondition("gamma must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(CoreError::Precondition("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// The refusal-probability invariant is stated for these gains; the
    /// builder enforces it exactly when they are in effect.
    fn has_default_gains(&self) -> bool {
        self.alpha == 4.0 && self.gamma == 8.0 && self.noise_sigma == 0.05
    }
}

/// Token table: one REFUSE token, `n_task` ANSWER tokens, a benign block,
/// and a harmful-trigger block, in that index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pub names: Vec<String>,
    pub n_task: usize,
    pub n_benign: usize,
    pub n_trigger: usize,
}

impl Vocab {
    pub fn build(n_task: usize, n_benign: usize, n_trigger: usize) -> Self {
        let mut names = vec!["REFUSE".to_string()];
        for t in 0..n_task {
            names.push(format!("ANSWER_{t}"));
        }
        for b in 0..n_benign {
            names.push(format!("BENIGN_{b:02}"));
        }
        for g in 0..n_trigger {
            names.push(format!("TRIGGER_{g:02}"));
        }
        Self {
            names,
            n_task,
            n_benign,
            n_trigger,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub const REFUSE: usize = 0;

    pub fn answer_id(&self, task: usize) -> usize {
        1 + task
    }

    pub fn benign_start(&self) -> usize {
        1 + self.n_task
    }

    pub fn trigger_start(&self) -> usize {
        1 + self.n_task + self.n_benign
    }

    pub fn is_answer(&self, id: usize) -> bool {
        (1..self.benign_start()).contains(&id)
    }

    pub fn is_benign(&self, id: usize) -> bool {
        (self.benign_start()..self.trigger_start()).contains(&id)
    }

    pub fn is_trigger(&self, id: usize) -> bool {
        (self.trigger_start()..self.len()).contains(&id)
    }

    /// Task a benign token belongs to.
    pub fn benign_task(&self, id: usize) -> usize {
        (id - self.benign_start()) % self.n_task
    }

    /// Benign token ids associated with a task.
    pub fn benign_pool(&self, task: usize) -> Vec<usize> {
        (self.benign_start()..self.trigger_start())
            .filter(|&id| self.benign_task(id) == task)
            .collect()
    }

    pub fn token_id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CoreError::UnknownToken(name.to_string()))
    }

    pub fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.len() {
            return Err(CoreError::UnknownToken(format!("token id {id}")));
        }
        Ok(())
    }
}

/// The planted model: immutable after build.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    pub cfg: PlantedConfig,
    pub vocab: Vocab,
    /// `vocab x d_model` embedding table (part of the container format; the
    /// residual read-out below does not consume it).
    pub embed: Array2<f64>,
    /// `n_task x d_model` orthonormal task-intent directions.
    pub s_basis: Array2<f64>,
    /// Unit defense direction, orthogonal to every task direction.
    pub u_dir: Array1<f64>,
    /// `vocab x d_model` output matrix.
    pub w_out: Array2<f64>,
}

/// Build-time probe outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    /// Mean REFUSE probability over harmful probe prompts.
    pub probe_refusal_probability: f64,
    pub probe_count: usize,
    /// Whether the >= 0.99 constraint was enforced (default gains).
    pub enforced: bool,
}

/// A prompt: token ids plus the derived harmful flag and task index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptScenario {
    pub tokens: Vec<usize>,
    pub harmful: bool,
    pub task: usize,
}

impl PromptScenario {
    /// Derive the harmful flag (any trigger-lexicon token present) and the
    /// task index (task of the first benign token) from a token sequence.
    pub fn from_token_ids(vocab: &Vocab, tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(CoreError::Precondition("scenario has no tokens".into()));
        }
        for &id in &tokens {
            vocab.check_id(id)?;
        }
        let harmful = tokens.iter().any(|&id| vocab.is_trigger(id));
        let task = tokens
            .iter()
            .find(|&&id| vocab.is_benign(id))
            .map(|&id| vocab.benign_task(id))
            .unwrap_or(0);
        Ok(Self {
            tokens,
            harmful,
            task,
        })
    }

    /// Parse whitespace-separated token names.
    pub fn from_names(vocab: &Vocab, names: &[&str]) -> Result<Self> {
        let ids = names
            .iter()
            .map(|n| vocab.token_id(n))
            .collect::<Result<Vec<_>>>()?;
        Self::from_token_ids(vocab, ids)
    }
}

/// Decoding rule for generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    Sample,
}

/// Generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub max_tokens: usize,
    pub decoding: Decoding,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens < 1 {
            return Err(CoreError::Precondition("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

/// Draw `count` orthonormal vectors; when the dimension has room they are
/// additionally orthogonal to the all-ones direction.
fn orthonormal_family(d: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Array1<f64>>> {
    let avoid_ones = d >= count + 1;
    let mut basis: Vec<Array1<f64>> = Vec::new();
    if avoid_ones {
        basis.push(Array1::from_elem(d, 1.0 / (d as f64).sqrt()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        // Rejection is astronomically unlikely; retry keeps it airtight.
        for _attempt in 0..64 {
            let mut v = Array1::from_shape_fn(d, |_| -> f64 { StandardNormal.sample(rng) });
            for b in &basis {
                let proj = v.dot(b);
                v.scaled_add(-proj, b);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-8 {
                v.mapv_inplace(|x| x / norm);
                basis.push(v.clone());
                out.push(v);
                break;
            }
        }
    }
    if out.len() != count {
        return Err(CoreError::ConstructionInfeasible(
            "could not draw an orthonormal family".into(),
        ));
    }
    Ok(out)
}

/// Deterministically build a planted model and probe its refusal behavior.
pub fn build_planted_model(cfg: &PlantedConfig, seed: u64) -> Result<(PlantedModel, BuildReport)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = orthonormal_family(cfg.d_model, cfg.n_task + 1, &mut rng)?;
    let mut s_basis = Array2::<f64>::zeros((cfg.n_task, cfg.d_model));
    for (t, v) in family.iter().take(cfg.n_task).enumerate() {
        s_basis.row_mut(t).assign(v);
    }
    let u_dir = family[cfg.n_task].clone();

    let vocab = Vocab::build(cfg.n_task, cfg.n_benign(), cfg.n_trigger);
    let embed_scale = 1.0 / (cfg.d_model as f64).sqrt();
    let embed = Array2::from_shape_fn((vocab.len(), cfg.d_model), |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v * embed_scale
    });

    let s_sum = s_basis.sum_axis(ndarray::Axis(0));
    let mut w_out = Array2::<f64>::zeros((vocab.len(), cfg.d_model));
    for id in 0..vocab.len() {
        let mut row = Array1::<f64>::zeros(cfg.d_model);
        if id == Vocab::REFUSE {
            row.scaled_add(cfg.gamma, &u_dir);
            row.scaled_add(-cfg.refuse_content_penalty, &s_sum);
        } else {
            row.scaled_add(-cfg.defense_suppression, &u_dir);
            if vocab.is_answer(id) {
                row.scaled_add(cfg.answer_gain, &s_basis.row(id - 1).to_owned());
            }
        }
        w_out.row_mut(id).assign(&row);
    }

    let model = PlantedModel {
        cfg: cfg.clone(),
        vocab,
        embed,
        s_basis,
        u_dir,
        w_out,
    };
    model.validate()?;

    // Probe the realized refusal probability on harmful prompts.
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let scenarios = generate_scenarios(&model.vocab, BUILD_PROBE_COUNT, true, seed ^ 0x51ce)?;
    let mut total = 0.0;
    for sc in &scenarios {
        let h = residual(&model, sc, &mut probe_rng)?;
        let probs = forward(&model, &h)?;
        total += probs[Vocab::REFUSE];
    }
    let probe = total / scenarios.len() as f64;
    let enforced = cfg.has_default_gains();
    if enforced && probe < 0.99 {
        return Err(CoreError::ConstructionInfeasible(format!(
            "probe refusal probability {probe:.4} below 0.99 at default gains"
        )));
    }
    Ok((
        model,
        BuildReport {
            probe_refusal_probability: probe,
            probe_count: BUILD_PROBE_COUNT,
            enforced,
        },
    ))
}

impl PlantedModel {
    /// Check the orthonormality and REFUSE-alignment invariants. Holds for
    /// freshly built models; surgery intentionally breaks the alignment.
    pub fn validate(&self) -> Result<()> {
        self.validate_basis()?;
        let align = self.w_out.row(Vocab::REFUSE).dot(&self.u_dir);
        if (align - self.cfg.gamma).abs() > 1e-8 {
            return Err(CoreError::ConstructionInfeasible(format!(
                "REFUSE row u-alignment {align}, expected gamma = {}",
                self.cfg.gamma
            )));
        }
        Ok(())
    }

    /// Check only the direction-geometry invariants, which survive surgery.
    pub fn validate_basis(&self) -> Result<()> {
        let n_task = self.cfg.n_task;
        for i in 0..n_task {
            let ri = self.s_basis.row(i);
            for j in i..n_task {
                let dot = ri.dot(&self.s_basis.row(j));
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-8 {
                    return Err(CoreError::ConstructionInfeasible(format!(
                        "task basis not orthonormal: <s{i}, s{j}> = {dot}"
                    )));
                }
            }
            if ri.dot(&self.u_dir).abs() > 1e-8 {
                return Err(CoreError::ConstructionInfeasible(format!(
                    "u is not orthogonal to task direction {i}"
                )));
            }
        }
        let u_norm = self.u_dir.dot(&self.u_dir).sqrt();
        if (u_norm - 1.0).abs() > 1e-8 {
            return Err(CoreError::ConstructionInfeasible(format!(
                "u norm is {u_norm}"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

fn residual_with_noise(
    model: &PlantedModel,
    task: usize,
    harmful: bool,
    eps: &Array1<f64>,
) -> Array1<f64> {
    let mut h = eps * model.cfg.noise_sigma;
    h.scaled_add(model.cfg.alpha, &model.s_basis.row(task).to_owned());
    if harmful {
        h += &model.u_dir;
    }
    h
}

fn draw_eps(d: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| -> f64 { StandardNormal.sample(rng) })
}

/// Residual read-out for a prompt: `h = alpha * s[task] + harmful * u + eps`
/// with fresh seeded Gaussian noise.
pub fn residual(
    model: &PlantedModel,
    prompt: &PromptScenario,
    rng: &mut ChaCha8Rng,
) -> Result<Array1<f64>> {
    for &id in &prompt.tokens {
        model.vocab.check_id(id)?;
    }
    if prompt.task >= model.cfg.n_task {
        return Err(CoreError::Precondition(format!(
            "task index {} out of range",
            prompt.task
        )));
    }
    let eps = draw_eps(model.cfg.d_model, rng);
    Ok(residual_with_noise(model, prompt.task, prompt.harmful, &eps))
}

/// Mean-subtract and scale to unit variance (unit gain, zero bias).
pub fn layer_norm(h: &Array1<f64>) -> Array1<f64> {
    let d = h.len() as f64;
    let mean = h.sum() / d;
    let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    if var <= 0.0 {
        return Array1::zeros(h.len());
    }
    let inv = 1.0 / var.sqrt();
    h.mapv(|v| (v - mean) * inv)
}

/// Probability vector `softmax(w_out . LN(h))`; sums to one within 1e-10.
pub fn forward(model: &PlantedModel, h: &Array1<f64>) -> Result<Array1<f64>> {
    if h.len() != model.cfg.d_model {
        return Err(CoreError::DimensionMismatch(format!(
            "activation has length {}, model dimension is {}",
            h.len(),
            model.cfg.d_model
        )));
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFiniteActivation);
    }
    let hn = if model.cfg.ln_enabled {
        layer_norm(h)
    } else {
        h.clone()
    };
    let logits = model.w_out.dot(&hn);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = logits.mapv(|l| (l - max).exp());
    let sum = probs.sum();
    probs.mapv_inplace(|p| p / sum);
    Ok(probs)
}

fn sample_index(probs: &Array1<f64>, rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(probs: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Autoregressive generation. Each step recomputes the residual from the
/// prompt plus everything generated so far, re-deriving the harmful flag on
/// the full sequence; deterministic under greedy or a fixed seed.
pub fn generate(
    model: &PlantedModel,
    prompt: &PromptScenario,
    cfg: &GenerationConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tokens = prompt.tokens.clone();
    let mut generated = Vec::with_capacity(cfg.max_tokens);
    for _ in 0..cfg.max_tokens {
        let scenario = PromptScenario::from_token_ids(&model.vocab, tokens.clone())?;
        let h = residual(model, &scenario, &mut rng)?;
        let probs = forward(model, &h)?;
        let tok = match cfg.decoding {
            Decoding::Greedy => argmax(&probs),
            Decoding::Sample => sample_index(&probs, &mut rng),
        };
        tokens.push(tok);
        generated.push(tok);
    }
    Ok(generated)
}

// ---------------------------------------------------------------------------
// Interventions
// ---------------------------------------------------------------------------

/// Which weight matrices the surgery rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurgeryScope {
    /// Only the output matrix (the default; matches the purified decoding).
    OutputOnly,
    /// Every matrix that writes to the residual stream (output + embedding).
    AllWriting,
}

/// Return a copy whose output weights are projected onto the orthogonal
/// complement of the defense directions. The original model is untouched.
pub fn apply_surgery(
    model: &PlantedModel,
    dirs: &DefenseDirectionSet,
    scope: SurgeryScope,
) -> Result<PlantedModel> {
    if dirs.d() != model.cfg.d_model {
        return Err(CoreError::DimensionMismatch(format!(
            "directions have dimension {}, model dimension is {}",
            dirs.d(),
            model.cfg.d_model
        )));
    }
    let op = projector(dirs, model.cfg.d_model)?;
    let mut out = model.clone();
    out.w_out = orthogonalize_weights(&model.w_out, &op)?;
    if scope == SurgeryScope::AllWriting {
        out.embed = orthogonalize_weights(&model.embed, &op)?;
    }
    Ok(out)
}

/// Runtime alternative to surgery: encode the activation, zero the clamped
/// latents, and replace the SAE-explained component before decoding:
/// `h' = h - W'(z - z_clamped)`, then `forward(model, h')`.
///
/// An empty clamp set reproduces `forward(model, h)` exactly.
pub fn clamp_forward(
    model: &PlantedModel,
    sae_params: &SaeParams,
    clamp_indices: &[usize],
    h: &Array1<f64>,
) -> Result<Array1<f64>> {
    if sae_params.d() != model.cfg.d_model {
        return Err(CoreError::DimensionMismatch(format!(
            "SAE d = {} does not match model dimension {}",
            sae_params.d(),
            model.cfg.d_model
        )));
    }
    for &i in clamp_indices {
        if i >= sae_params.k() {
            return Err(CoreError::DimensionMismatch(format!(
                "clamp index {i} out of range for k = {}",
                sae_params.k()
            )));
        }
    }
    let h32 = Array1::from_iter(h.iter().map(|v| *v as f32));
    let code = sae::encode(sae_params, h32.view())?;
    let mut h_mod = h.clone();
    for &i in clamp_indices {
        let z = f64::from(code.z[i]);
        if z != 0.0 {
            let col = sae_params.w_dec.column(i).mapv(f64::from);
            h_mod.scaled_add(-z, &col);
        }
    }
    forward(model, &h_mod)
}

/// Autoregressive generation with activation clamping applied at every step:
/// the runtime counterpart of [`apply_surgery`].
pub fn generate_with_clamp(
    model: &PlantedModel,
    sae_params: &SaeParams,
    clamp_indices: &[usize],
    prompt: &PromptScenario,
    cfg: &GenerationConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tokens = prompt.tokens.clone();
    let mut generated = Vec::with_capacity(cfg.max_tokens);
    for _ in 0..cfg.max_tokens {
        let scenario = PromptScenario::from_token_ids(&model.vocab, tokens.clone())?;
        let h = residual(model, &scenario, &mut rng)?;
        let probs = clamp_forward(model, sae_params, clamp_indices, &h)?;
        let tok = match cfg.decoding {
            Decoding::Greedy => argmax(&probs),
            Decoding::Sample => sample_index(&probs, &mut rng),
        };
        tokens.push(tok);
        generated.push(tok);
    }
    Ok(generated)
}

// ---------------------------------------------------------------------------
// Scenario generation and activation dumps
// ---------------------------------------------------------------------------

/// Generate prompt scenarios: 2-4 benign tokens from one task's pool, plus a
/// trigger token at a random position when harmful.
pub fn generate_scenarios(
    vocab: &Vocab,
    n: usize,
    harmful: bool,
    seed: u64,
) -> Result<Vec<PromptScenario>> {
    if n == 0 {
        return Err(CoreError::Precondition("scenario count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let task = rng.random_range(0..vocab.n_task);
        let pool = vocab.benign_pool(task);
        if pool.is_empty() {
            return Err(CoreError::ConstructionInfeasible(format!(
                "no benign tokens for task {task}"
            )));
        }
        let len = 2 + rng.random_range(0..3);
        let mut tokens: Vec<usize> = (0..len)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        if harmful {
            let trig = vocab.trigger_start() + rng.random_range(0..vocab.n_trigger);
            let pos = rng.random_range(0..=tokens.len());
            tokens.insert(pos, trig);
        }
        out.push(PromptScenario::from_token_ids(vocab, tokens)?);
    }
    Ok(out)
}

/// Serialize scenarios as a text document: one scenario per line,
/// whitespace-separated token names.
pub fn scenarios_to_text(vocab: &Vocab, scenarios: &[PromptScenario]) -> String {
    let mut out = String::new();
    for sc in scenarios {
        let names: Vec<&str> = sc.tokens.iter().map(|&id| vocab.names[id].as_str()).collect();
        out.push_str(&names.join(" "));
        out.push('\n');
    }
    out
}

/// Parse a scenario list document; blank lines are ignored.
pub fn scenarios_from_text(vocab: &Vocab, text: &str) -> Result<Vec<PromptScenario>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let names: Vec<&str> = line.split_whitespace().collect();
        if names.is_empty() {
            continue;
        }
        out.push(PromptScenario::from_names(vocab, &names)?);
    }
    if out.is_empty() {
        return Err(CoreError::Precondition("scenario list is empty".into()));
    }
    Ok(out)
}

/// Paths of the three dump files produced by [`dump_activations`].
#[derive(Debug, Clone)]
pub struct DumpPaths {
    pub harm: PathBuf,
    pub attack: PathBuf,
    pub benign: PathBuf,
}

/// Write three paired activation dumps:
///
/// - `harm`: the scenario as-is (harmful flag unchanged),
/// - `attack`: the same scenario with the harmful flag forced off, sharing
///   the harm row's noise draw so the pair differs only in defense state,
/// - `benign`: the same content with the flag off and an independent noise
///   draw.
///
/// Pairing is preserved by row order. Deterministic per seed.
pub fn dump_activations(
    model: &PlantedModel,
    scenarios: &[PromptScenario],
    out_dir: &Path,
    seed: u64,
) -> Result<DumpPaths> {
    if scenarios.is_empty() {
        return Err(CoreError::Precondition("no scenarios to dump".into()));
    }
    let d = model.cfg.d_model;
    let n = scenarios.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut harm = Array2::<f32>::zeros((n, d));
    let mut attack = Array2::<f32>::zeros((n, d));
    let mut benign = Array2::<f32>::zeros((n, d));
    for (row, sc) in scenarios.iter().enumerate() {
        for &id in &sc.tokens {
            model.vocab.check_id(id)?;
        }
        let eps = draw_eps(d, &mut rng);
        let eps_benign = draw_eps(d, &mut rng);
        let h_harm = residual_with_noise(model, sc.task, sc.harmful, &eps);
        let h_attack = residual_with_noise(model, sc.task, false, &eps);
        let h_benign = residual_with_noise(model, sc.task, false, &eps_benign);
        for j in 0..d {
            harm[[row, j]] = h_harm[j] as f32;
            attack[[row, j]] = h_attack[j] as f32;
            benign[[row, j]] = h_benign[j] as f32;
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let paths = DumpPaths {
        harm: out_dir.join("harm.actv"),
        attack: out_dir.join("attack.actv"),
        benign: out_dir.join("benign.actv"),
    };
    for (path, data, label) in [
        (&paths.harm, harm, "harm"),
        (&paths.attack, attack, "attack"),
        (&paths.benign, benign, "benign"),
    ] {
        let m = ActivationMatrix::new(data, label)?;
        let meta = ActvMeta {
            label: label.to_string(),
            source_model: "planted".to_string(),
            layer_index: 0,
        };
        io::write_activations(path, &m, &meta)?;
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Container IO
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PlmHeader {
    config: PlantedConfig,
    dtype: String,
    tokens: Vec<String>,
    offsets: PlmOffsets,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlmOffsets {
    embed: usize,
    s_basis: usize,
    u_dir: usize,
    w_out: usize,
}

/// Persist the model in the `PLM1` container (bit-exact round trip).
pub fn save_model(model: &PlantedModel, path: &Path) -> Result<()> {
    model.validate_basis()?;
    let d = model.cfg.d_model;
    let v = model.vocab.len();
    let embed_len = v * d * 8;
    let s_len = model.cfg.n_task * d * 8;
    let u_len = d * 8;
    let header = PlmHeader {
        config: model.cfg.clone(),
        dtype: "f64".into(),
        tokens: model.vocab.names.clone(),
        offsets: PlmOffsets {
            embed: 0,
            s_basis: embed_len,
            u_dir: embed_len + s_len,
            w_out: embed_len + s_len + u_len,
        },
    };
    let header_text =
        toml::to_string(&header).map_err(|e| CoreError::Format(format!("header: {e}")))?;
    let mut payload = Vec::new();
    payload.extend(io::f64s_to_le(model.embed.iter().copied()));
    payload.extend(io::f64s_to_le(model.s_basis.iter().copied()));
    payload.extend(io::f64s_to_le(model.u_dir.iter().copied()));
    payload.extend(io::f64s_to_le(model.w_out.iter().copied()));
    io::write_framed(path, PLM_MAGIC, PLM_VERSION, &header_text, &payload)
}

/// Load a model from the `PLM1` container, verifying the checksum first.
pub fn load_model(path: &Path) -> Result<PlantedModel> {
    let (header_text, payload) = io::read_framed(path, PLM_MAGIC, PLM_VERSION)?;
    let header: PlmHeader =
        toml::from_str(&header_text).map_err(|e| CoreError::Format(format!("header: {e}")))?;
    if header.dtype != "f64" {
        return Err(CoreError::Format(format!(
            "unsupported dtype {}",
            header.dtype
        )));
    }
    let cfg = header.config;
    cfg.validate()?;
    let d = cfg.d_model;
    let vocab = Vocab::build(cfg.n_task, cfg.n_benign(), cfg.n_trigger);
    if vocab.names != header.tokens {
        return Err(CoreError::Format(
            "token table does not match the stored configuration".into(),
        ));
    }
    let v = vocab.len();
    let expected = (v * d + cfg.n_task * d + d + v * d) * 8;
    if payload.len() != expected {
        return Err(CoreError::Format(format!(
            "tensor section is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let off = &header.offsets;
    let take = |start: usize, len_f64: usize| -> Result<Vec<f64>> {
        let end = start + len_f64 * 8;
        if end > payload.len() {
            return Err(CoreError::Format("tensor offset out of range".into()));
        }
        Ok(io::f64s_from_le(&payload[start..end]))
    };
    let embed = Array2::from_shape_vec((v, d), take(off.embed, v * d)?)
        .map_err(|e| CoreError::Format(format!("embed: {e}")))?;
    let s_basis = Array2::from_shape_vec((cfg.n_task, d), take(off.s_basis, cfg.n_task * d)?)
        .map_err(|e| CoreError::Format(format!("s_basis: {e}")))?;
    let u_dir = Array1::from(take(off.u_dir, d)?);
    let w_out = Array2::from_shape_vec((v, d), take(off.w_out, v * d)?)
        .map_err(|e| CoreError::Format(format!("w_out: {e}")))?;
    let model = PlantedModel {
        cfg,
        vocab,
        embed,
        s_basis,
        u_dir,
        w_out,
    };
    // Surgered models have their u-alignment removed, so only the basis
    // invariants are re-checked on load.
    for i in 0..model.cfg.n_task {
        let norm = model.s_basis.row(i).dot(&model.s_basis.row(i)).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(CoreError::Format(format!(
                "task direction {i} has norm {norm}"
            )));
        }
    }
    Ok(model)
}
