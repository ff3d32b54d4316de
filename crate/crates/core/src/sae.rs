//! Sparse autoencoder over activation vectors.
//!
//! Encoder `z = relu(W x + b)`, decoder `x_hat = W' z + b'`, objective
//!
//! ```text
//! L = mean_i ( ||x_i - x_hat_i||_2^2 + lambda * ||z_i||_1 )
//! ```
//!
//! Gradients are derived analytically (see [`grad`]); training is plain
//! minibatch gradient descent with a fixed learning rate, with decoder columns
//! renormalized to unit Euclidean norm after every update so each latent's
//! decoder column is a well-defined direction.
//!
//! Parameters are stored as `f32` (matching the checkpoint format, so save /
//! load round trips are bit-exact); all arithmetic widens to `f64`. Batch
//! statistics are means, not sums, so `lambda` keeps its meaning across batch
//! sizes.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activations::ActivationMatrix;
use crate::error::{CoreError, Result};
use crate::io;

const SAE_MAGIC: &[u8; 4] = b"SAE1";
const SAE_VERSION: u32 = 1;

/// Scale applied to the transposed decoder when initializing the encoder.
/// Starting the encoder small keeps early latent competition gentle, which
/// empirically avoids collapse onto per-cluster dictionary atoms.
pub const ENC_INIT_SCALE: f64 = 0.3;

/// Decoder columns must stay unit norm within this tolerance.
pub const DEC_NORM_TOL: f64 = 1e-6;

/// Encoder/decoder weights and biases plus the sparsity weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    /// `k x d` encoder weight.
    pub w_enc: Array2<f32>,
    /// Length-`k` encoder bias.
    pub b_enc: Array1<f32>,
    /// `d x k` decoder weight; every column has unit Euclidean norm.
    pub w_dec: Array2<f32>,
    /// Length-`d` decoder bias.
    pub b_dec: Array1<f32>,
    /// Sparsity weight lambda (non-negative).
    pub lambda: f64,
}

/// Non-negative sparse latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub z: Array1<f32>,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 128,
            epochs: 300,
            seed: 7,
            lambda: 0.03,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(CoreError::Precondition(
                "learning_rate must be positive and finite".into(),
            ));
        }
        if self.epochs < 1 {
            return Err(CoreError::Precondition("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(CoreError::Precondition("batch_size must be >= 1".into()));
        }
        if self.log_every < 1 {
            return Err(CoreError::Precondition("log_every must be >= 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(CoreError::Precondition("lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub total: f64,
    pub reconstruction: f64,
    pub sparsity: f64,
    pub frac_active: f64,
}

/// Per-logged-step loss history; non-empty after training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

/// Loss value with its reconstruction / sparsity split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub sparsity: f64,
}

/// Gradient of the batch-mean objective with respect to every parameter
/// tensor, in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGrads {
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
}

impl SaeParams {
    /// Latent width.
    pub fn k(&self) -> usize {
        self.w_enc.nrows()
    }

    /// Input dimension.
    pub fn d(&self) -> usize {
        self.w_enc.ncols()
    }

    /// Random initialization: decoder columns are random unit vectors, the
    /// encoder starts as a scaled decoder transpose, biases are zero.
    pub fn init(d: usize, k: usize, lambda: f64, seed: u64) -> Result<Self> {
        if d < 1 || k < 1 {
            return Err(CoreError::Precondition("d and k must be >= 1".into()));
        }
        if lambda < 0.0 {
            return Err(CoreError::Precondition("lambda must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w_dec64 = Array2::<f64>::zeros((d, k));
        for j in 0..k {
            let mut col: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            for v in col.iter_mut() {
                *v /= norm;
            }
            for (i, v) in col.iter().enumerate() {
                w_dec64[[i, j]] = *v;
            }
        }
        let w_dec = w_dec64.mapv(|v| v as f32);
        let w_enc = w_dec64.t().mapv(|v| (v * ENC_INIT_SCALE) as f32);
        Ok(Self {
            w_enc,
            b_enc: Array1::zeros(k),
            w_dec,
            b_dec: Array1::zeros(d),
            lambda,
        })
    }

    /// Check shapes, finiteness, and decoder column norms.
    pub fn validate(&self) -> Result<()> {
        let (k, d) = (self.k(), self.d());
        if k < 1 || d < 1 {
            return Err(CoreError::Precondition("k and d must be >= 1".into()));
        }
        if self.b_enc.len() != k || self.w_dec.dim() != (d, k) || self.b_dec.len() != d {
            return Err(CoreError::DimensionMismatch(format!(
                "inconsistent parameter shapes for k={k}, d={d}"
            )));
        }
        let finite = self.w_enc.iter().all(|v| v.is_finite())
            && self.b_enc.iter().all(|v| v.is_finite())
            && self.w_dec.iter().all(|v| v.is_finite())
            && self.b_dec.iter().all(|v| v.is_finite())
            && self.lambda.is_finite();
        if !finite {
            return Err(CoreError::NonFiniteActivation);
        }
        if self.lambda < 0.0 {
            return Err(CoreError::Precondition("lambda must be >= 0".into()));
        }
        for j in 0..k {
            let norm: f64 = self
                .w_dec
                .column(j)
                .iter()
                .map(|v| f64::from(*v) * f64::from(*v))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > DEC_NORM_TOL {
                return Err(CoreError::Precondition(format!(
                    "decoder column {j} has norm {norm}, expected 1 within {DEC_NORM_TOL}"
                )));
            }
        }
        Ok(())
    }

    fn check_input_dim(&self, d_in: usize) -> Result<()> {
        if d_in != self.d() {
            return Err(CoreError::DimensionMismatch(format!(
                "input dimension {d_in} does not match SAE d = {}",
                self.d()
            )));
        }
        Ok(())
    }
}

/// Widened parameter copies used by every numeric path.
struct SaeF64 {
    w_enc: Array2<f64>,
    b_enc: Array1<f64>,
    w_dec: Array2<f64>,
    b_dec: Array1<f64>,
}

impl From<&SaeParams> for SaeF64 {
    fn from(p: &SaeParams) -> Self {
        Self {
            w_enc: p.w_enc.mapv(f64::from),
            b_enc: p.b_enc.mapv(f64::from),
            w_dec: p.w_dec.mapv(f64::from),
            b_dec: p.b_dec.mapv(f64::from),
        }
    }
}

/// `z = relu(w_enc x + b_enc)`.
pub fn encode(params: &SaeParams, x: ArrayView1<f32>) -> Result<SparseCode> {
    params.check_input_dim(x.len())?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFiniteActivation);
    }
    let p = SaeF64::from(params);
    let x64 = x.mapv(f64::from);
    let z = (p.w_enc.dot(&x64) + &p.b_enc).mapv(|v| v.max(0.0) as f32);
    Ok(SparseCode { z })
}

/// `x_hat = w_dec z + b_dec`.
pub fn decode(params: &SaeParams, z: &SparseCode) -> Result<Array1<f32>> {
    if z.z.len() != params.k() {
        return Err(CoreError::DimensionMismatch(format!(
            "code length {} does not match SAE k = {}",
            z.z.len(),
            params.k()
        )));
    }
    let p = SaeF64::from(params);
    let z64 = z.z.mapv(f64::from);
    Ok((p.w_dec.dot(&z64) + &p.b_dec).mapv(|v| v as f32))
}

/// Encode a whole batch, keeping the codes in `f64` for downstream statistics.
pub fn encode_batch(params: &SaeParams, batch: &ActivationMatrix) -> Result<Array2<f64>> {
    params.check_input_dim(batch.d())?;
    let p = SaeF64::from(params);
    let x = batch.to_f64();
    let mut z = x.dot(&p.w_enc.t());
    z += &p.b_enc;
    z.mapv_inplace(|v| v.max(0.0));
    Ok(z)
}

struct BatchPass {
    loss: LossBreakdown,
    frac_active: f64,
    grads: SaeGrads,
}

/// One forward/backward pass over an `n x d` batch in `f64`.
fn batch_pass(p: &SaeF64, x: &Array2<f64>, lambda: f64) -> BatchPass {
    let n = x.nrows() as f64;
    let k = p.b_enc.len();

    // Forward.
    let mut pre = x.dot(&p.w_enc.t());
    pre += &p.b_enc;
    let z = pre.mapv(|v| v.max(0.0));
    let mut residual = z.dot(&p.w_dec.t());
    residual += &p.b_dec;
    residual -= x; // x_hat - x

    let reconstruction = residual.iter().map(|r| r * r).sum::<f64>() / n;
    let l1 = z.iter().sum::<f64>() / n;
    let sparsity = lambda * l1;
    let active = z.iter().filter(|v| **v > 0.0).count() as f64;
    let frac_active = active / (n * k as f64);

    // Backward. d(recon)/d(xhat) = 2 * residual / n.
    let g_w_dec = residual.t().dot(&z).mapv(|v| 2.0 * v / n);
    let g_b_dec = residual.sum_axis(Axis(0)).mapv(|v| 2.0 * v / n);
    // Through the code: 2 R W' plus the l1 term on active units, gated by the
    // rectification mask (subgradient 0 at the kink).
    let mut g_z = residual.dot(&p.w_dec).mapv(|v| 2.0 * v);
    g_z += lambda;
    ndarray::Zip::from(&mut g_z).and(&pre).for_each(|g, a| {
        if *a <= 0.0 {
            *g = 0.0;
        }
    });
    let g_w_enc = g_z.t().dot(x).mapv(|v| v / n);
    let g_b_enc = g_z.sum_axis(Axis(0)).mapv(|v| v / n);

    BatchPass {
        loss: LossBreakdown {
            total: reconstruction + sparsity,
            reconstruction,
            sparsity,
        },
        frac_active,
        grads: SaeGrads {
            w_enc: g_w_enc,
            b_enc: g_b_enc,
            w_dec: g_w_dec,
            b_dec: g_b_dec,
        },
    }
}

/// Batch-mean loss with its reconstruction / sparsity breakdown.
pub fn loss(params: &SaeParams, batch: &ActivationMatrix) -> Result<LossBreakdown> {
    params.check_input_dim(batch.d())?;
    let p = SaeF64::from(params);
    let x = batch.to_f64();
    Ok(batch_pass(&p, &x, params.lambda).loss)
}

/// Exact analytic gradient of the batch-mean objective.
///
/// Writing `r_i = x_hat_i - x_i` and `g_i = 2 W'^T r_i + lambda` gated by the
/// active-unit mask, the gradients are
///
/// ```text
/// dL/dW' = (2/n) sum_i r_i z_i^T        dL/db' = (2/n) sum_i r_i
/// dL/dW  = (1/n) sum_i g_i x_i^T        dL/db  = (1/n) sum_i g_i
/// ```
pub fn grad(params: &SaeParams, batch: &ActivationMatrix) -> Result<SaeGrads> {
    params.check_input_dim(batch.d())?;
    let p = SaeF64::from(params);
    let x = batch.to_f64();
    Ok(batch_pass(&p, &x, params.lambda).grads)
}

fn renormalize_decoder_columns(w_dec: &mut Array2<f64>) {
    for mut col in w_dec.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            col.mapv_inplace(|v| v / norm);
        }
    }
}

/// Round working `f64` tensors through `f32`, the storage precision.
fn round_trip_f32(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}
fn round_trip_f32_1d(a: &mut Array1<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

/// Plain minibatch gradient descent with per-epoch reshuffling.
///
/// `cfg.lambda` overrides the sparsity weight carried by `init`. Decoder
/// columns are renormalized after every update. Deterministic for a fixed
/// config: identical inputs produce bit-identical parameters.
pub fn train(
    init: &SaeParams,
    data: &ActivationMatrix,
    cfg: &TrainConfig,
) -> Result<(SaeParams, TrainHistory)> {
    cfg.validate()?;
    init.validate()?;
    init.check_input_dim(data.d())?;
    data.validate()?;

    let x_all = data.to_f64();
    let n = data.n();
    let mut p = SaeF64::from(init);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory::default();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut step: u64 = 0;
    let total_steps = cfg.epochs as u64 * n.div_ceil(cfg.batch_size) as u64;

    for _epoch in 0..cfg.epochs {
        // Fisher-Yates reshuffle, driven by the training RNG.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        for chunk in indices.chunks(cfg.batch_size) {
            let mut xb = Array2::<f64>::zeros((chunk.len(), data.d()));
            for (row, &src) in chunk.iter().enumerate() {
                xb.row_mut(row).assign(&x_all.row(src));
            }
            let pass = batch_pass(&p, &xb, cfg.lambda);
            step += 1;
            if !pass.loss.total.is_finite() {
                return Err(CoreError::Divergence { step });
            }
            p.w_enc.scaled_add(-cfg.learning_rate, &pass.grads.w_enc);
            p.b_enc.scaled_add(-cfg.learning_rate, &pass.grads.b_enc);
            p.w_dec.scaled_add(-cfg.learning_rate, &pass.grads.w_dec);
            p.b_dec.scaled_add(-cfg.learning_rate, &pass.grads.b_dec);
            renormalize_decoder_columns(&mut p.w_dec);
            // Parameters live in f32; keep the working copies identical to
            // what a store/reload at this step would produce.
            round_trip_f32(&mut p.w_enc);
            round_trip_f32_1d(&mut p.b_enc);
            round_trip_f32(&mut p.w_dec);
            round_trip_f32_1d(&mut p.b_dec);

            if step % cfg.log_every as u64 == 0 || step == total_steps {
                history.records.push(TrainRecord {
                    step,
                    total: pass.loss.total,
                    reconstruction: pass.loss.reconstruction,
                    sparsity: pass.loss.sparsity,
                    frac_active: pass.frac_active,
                });
            }
        }
    }

    let trained = SaeParams {
        w_enc: p.w_enc.mapv(|v| v as f32),
        b_enc: p.b_enc.mapv(|v| v as f32),
        w_dec: p.w_dec.mapv(|v| v as f32),
        b_dec: p.b_dec.mapv(|v| v as f32),
        lambda: cfg.lambda,
    };
    trained.validate()?;
    Ok((trained, history))
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

/// Outcome of a finite-difference sweep over every parameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOutcome {
    /// Worst relative error over checked coordinates with `|g| > 1e-6`.
    pub max_rel_error: f64,
    /// Coordinates compared against the analytic gradient.
    pub checked: usize,
    /// Encoder coordinates skipped because the perturbation interval straddles
    /// a rectification boundary for some sample.
    pub skipped: usize,
}

/// Compare [`grad`] against central finite differences of [`loss`] at every
/// parameter coordinate.
///
/// The objective is piecewise quadratic, so the central difference is exact up
/// to floating-point error wherever the perturbation interval does not cross a
/// rectification boundary; across a boundary it is a secant over two quadratic
/// pieces and carries no information about the one-sided gradient. Encoder
/// coordinates whose interval provably crosses a kink for some sample are
/// skipped and counted; decoder coordinates never move a pre-activation and
/// are always checked. The effective step is recomputed from the stored `f32`
/// values so perturbation rounding cancels.
pub fn finite_difference_check(
    params: &SaeParams,
    batch: &ActivationMatrix,
    step: f32,
) -> Result<FdOutcome> {
    let g = grad(params, batch)?;
    let mut outcome = FdOutcome {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };

    // Pre-activations per (sample, unit).
    let n = batch.n();
    let mut pre = Array2::<f64>::zeros((n, params.k()));
    for (s, row) in batch.data.outer_iter().enumerate() {
        for i in 0..params.k() {
            let mut acc = f64::from(params.b_enc[i]);
            for j in 0..params.d() {
                acc += f64::from(params.w_enc[[i, j]]) * f64::from(row[j]);
            }
            pre[[s, i]] = acc;
        }
    }
    let crosses_kink_w = |i: usize, j: usize| -> bool {
        (0..n).any(|s| {
            pre[[s, i]].abs() <= f64::from(step) * f64::from(batch.data[[s, j]]).abs() + 1e-9
        })
    };
    let crosses_kink_b =
        |i: usize| -> bool { (0..n).any(|s| pre[[s, i]].abs() <= f64::from(step) + 1e-9) };

    let mut compare = |analytic: f64,
                       plus: &SaeParams,
                       minus: &SaeParams,
                       wp: f32,
                       wm: f32,
                       outcome: &mut FdOutcome|
     -> Result<()> {
        let lp = loss(plus, batch)?.total;
        let lm = loss(minus, batch)?.total;
        let h_eff = (f64::from(wp) - f64::from(wm)) / 2.0;
        let fd = (lp - lm) / (2.0 * h_eff);
        if analytic.abs() > 1e-6 {
            let rel = (fd - analytic).abs() / analytic.abs();
            outcome.max_rel_error = outcome.max_rel_error.max(rel);
            outcome.checked += 1;
        }
        Ok(())
    };

    for i in 0..params.k() {
        for j in 0..params.d() {
            if crosses_kink_w(i, j) {
                outcome.skipped += 1;
                continue;
            }
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.w_enc[[i, j]] += step;
            minus.w_enc[[i, j]] -= step;
            let (wp, wm) = (plus.w_enc[[i, j]], minus.w_enc[[i, j]]);
            compare(g.w_enc[[i, j]], &plus, &minus, wp, wm, &mut outcome)?;
        }
        if crosses_kink_b(i) {
            outcome.skipped += 1;
            continue;
        }
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.b_enc[i] += step;
        minus.b_enc[i] -= step;
        let (wp, wm) = (plus.b_enc[i], minus.b_enc[i]);
        compare(g.b_enc[i], &plus, &minus, wp, wm, &mut outcome)?;
    }
    for i in 0..params.d() {
        for j in 0..params.k() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.w_dec[[i, j]] += step;
            minus.w_dec[[i, j]] -= step;
            let (wp, wm) = (plus.w_dec[[i, j]], minus.w_dec[[i, j]]);
            compare(g.w_dec[[i, j]], &plus, &minus, wp, wm, &mut outcome)?;
        }
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.b_dec[i] += step;
        minus.b_dec[i] -= step;
        let (wp, wm) = (plus.b_dec[i], minus.b_dec[i]);
        compare(g.b_dec[i], &plus, &minus, wp, wm, &mut outcome)?;
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SaeHeader {
    d: usize,
    k: usize,
    lambda: f64,
    activation_kind: String,
    offsets: SaeOffsets,
}

/// Byte offsets of each tensor relative to the start of the tensor section.
#[derive(Debug, Serialize, Deserialize)]
struct SaeOffsets {
    w_enc: usize,
    b_enc: usize,
    w_dec: usize,
    b_dec: usize,
}

/// Persist parameters in the `SAE1` container.
pub fn save_checkpoint(params: &SaeParams, path: &Path) -> Result<()> {
    params.validate()?;
    let (k, d) = (params.k(), params.d());
    let w_enc_len = k * d * 4;
    let b_enc_len = k * 4;
    let w_dec_len = d * k * 4;
    let header = SaeHeader {
        d,
        k,
        lambda: params.lambda,
        activation_kind: "relu".into(),
        offsets: SaeOffsets {
            w_enc: 0,
            b_enc: w_enc_len,
            w_dec: w_enc_len + b_enc_len,
            b_dec: w_enc_len + b_enc_len + w_dec_len,
        },
    };
    let header_text =
        toml::to_string(&header).map_err(|e| CoreError::Format(format!("header: {e}")))?;
    let mut payload = Vec::new();
    payload.extend(io::f32s_to_le(params.w_enc.iter().copied()));
    payload.extend(io::f32s_to_le(params.b_enc.iter().copied()));
    payload.extend(io::f32s_to_le(params.w_dec.iter().copied()));
    payload.extend(io::f32s_to_le(params.b_dec.iter().copied()));
    io::write_framed(path, SAE_MAGIC, SAE_VERSION, &header_text, &payload)
}

/// Load parameters from the `SAE1` container, verifying the checksum first.
pub fn load_checkpoint(path: &Path) -> Result<SaeParams> {
    let (header_text, payload) = io::read_framed(path, SAE_MAGIC, SAE_VERSION)?;
    let header: SaeHeader =
        toml::from_str(&header_text).map_err(|e| CoreError::Format(format!("header: {e}")))?;
    let (d, k) = (header.d, header.k);
    let expected = (k * d + k + d * k + d) * 4;
    if payload.len() != expected {
        return Err(CoreError::Format(format!(
            "tensor section is {} bytes, expected {expected} for d={d}, k={k}",
            payload.len()
        )));
    }
    let off = &header.offsets;
    let take = |start: usize, len_f32: usize| -> Result<Vec<f32>> {
        let end = start + len_f32 * 4;
        if end > payload.len() {
            return Err(CoreError::Format("tensor offset out of range".into()));
        }
        Ok(io::f32s_from_le(&payload[start..end]))
    };
    let w_enc = Array2::from_shape_vec((k, d), take(off.w_enc, k * d)?)
        .map_err(|e| CoreError::Format(format!("w_enc: {e}")))?;
    let b_enc = Array1::from(take(off.b_enc, k)?);
    let w_dec = Array2::from_shape_vec((d, k), take(off.w_dec, d * k)?)
        .map_err(|e| CoreError::Format(format!("w_dec: {e}")))?;
    let b_dec = Array1::from(take(off.b_dec, d)?);
    let params = SaeParams {
        w_enc,
        b_enc,
        w_dec,
        b_dec,
        lambda: header.lambda,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_params(d: usize, k: usize, lambda: f64, seed: u64) -> SaeParams {
        let mut p = SaeParams::init(d, k, lambda, seed).unwrap();
        // Spread biases so pre-activations are away from the rectification
        // kink for the finite-difference checks.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        p.b_enc.mapv_inplace(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            (0.3 * v) as f32
        });
        p.b_dec.mapv_inplace(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            (0.3 * v) as f32
        });
        p
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> ActivationMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((n, d), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        });
        ActivationMatrix::new(data, "test").unwrap()
    }

    #[test]
    fn encode_rectifies() {
        let params = SaeParams {
            w_enc: array![[1.0_f32, 0.0], [0.0, 1.0]],
            b_enc: array![0.0_f32, 0.0],
            w_dec: array![[1.0_f32, 0.0], [0.0, 1.0]],
            b_dec: array![0.0_f32, 0.0],
            lambda: 0.0,
        };
        let code = encode(&params, array![-1.0_f32, 2.0].view()).unwrap();
        assert_eq!(code.z, array![0.0_f32, 2.0]);

        let zero = encode(&params, array![0.0_f32, 0.0].view()).unwrap();
        assert_eq!(zero.z, array![0.0_f32, 0.0]);
    }

    #[test]
    fn encode_matches_scalar_loop_oracle() {
        let params = random_params(6, 9, 0.1, 21);
        let batch = random_batch(4, 6, 22);
        for row in batch.data.outer_iter() {
            let code = encode(&params, row).unwrap();
            for i in 0..params.k() {
                let mut acc = f64::from(params.b_enc[i]);
                for j in 0..params.d() {
                    acc += f64::from(params.w_enc[[i, j]]) * f64::from(row[j]);
                }
                let expected = acc.max(0.0);
                assert!((f64::from(code.z[i]) - expected).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn decode_zero_code_gives_bias() {
        let params = random_params(5, 3, 0.0, 2);
        let out = decode(
            &params,
            &SparseCode {
                z: Array1::zeros(3),
            },
        )
        .unwrap();
        assert_eq!(out, params.b_dec);
    }

    #[test]
    fn decode_selects_column() {
        let params = SaeParams {
            w_enc: Array2::zeros((2, 2)),
            b_enc: Array1::zeros(2),
            w_dec: array![[0.0_f32, 1.0], [1.0, 0.0]],
            b_dec: array![0.0_f32, 0.0],
            lambda: 0.0,
        };
        // z = e_1 picks column 1 = e_1 of the standard basis.
        let out = decode(
            &params,
            &SparseCode {
                z: array![0.0_f32, 1.0],
            },
        )
        .unwrap();
        assert_eq!(out, array![1.0_f32, 0.0]);
    }

    #[test]
    fn decode_matches_scalar_loop_oracle() {
        let params = random_params(7, 4, 0.0, 31);
        let code = SparseCode {
            z: array![0.5_f32, 0.0, 1.25, 2.0],
        };
        let out = decode(&params, &code).unwrap();
        for i in 0..7 {
            let mut acc = f64::from(params.b_dec[i]);
            for j in 0..4 {
                acc += f64::from(params.w_dec[[i, j]]) * f64::from(code.z[j]);
            }
            assert!((f64::from(out[i]) - acc).abs() <= 1e-6);
        }
    }

    #[test]
    fn loss_zero_for_exact_reconstruction_with_zero_code() {
        // w_enc maps everything below zero, so z = 0 and x_hat = b_dec = x.
        let x = array![[1.0_f32, -2.0]];
        let params = SaeParams {
            w_enc: Array2::zeros((3, 2)),
            b_enc: array![-1.0_f32, -1.0, -1.0],
            w_dec: Array2::from_shape_vec(
                (2, 3),
                vec![1.0_f32, 0.0, 0.0, 0.0, 1.0, 0.0],
            )
            .unwrap(),
            b_dec: array![1.0_f32, -2.0],
            lambda: 0.5,
        };
        let batch = ActivationMatrix::new(x, "t").unwrap();
        let l = loss(&params, &batch).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(l.reconstruction, 0.0);
        assert_eq!(l.sparsity, 0.0);
    }

    #[test]
    fn loss_direct_evaluation_example() {
        // Single sample x = (1, 0); encoder forces z = (2, 0); decoder maps
        // z to (0, 0). Loss = ||x||^2 + 0.5 * 2 = 1 + 1 = 2.
        let params = SaeParams {
            w_enc: Array2::zeros((2, 2)),
            b_enc: array![2.0_f32, 0.0],
            w_dec: Array2::zeros((2, 2)),
            b_dec: array![0.0_f32, 0.0],
            lambda: 0.5,
        };
        let batch = ActivationMatrix::new(array![[1.0_f32, 0.0]], "t").unwrap();
        let l = loss(&params, &batch).unwrap();
        assert!((l.total - 2.0).abs() < 1e-12);
        assert!((l.reconstruction - 1.0).abs() < 1e-12);
        assert!((l.sparsity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_term_by_term_oracle() {
        let params = random_params(6, 10, 0.17, 41);
        let batch = random_batch(9, 6, 42);
        let l = loss(&params, &batch).unwrap();

        // Term-by-term oracle straight from the objective definition.
        let mut recon = 0.0;
        let mut l1 = 0.0;
        for row in batch.data.outer_iter() {
            let z = encode(&params, row).unwrap();
            let xh = decode(&params, &z).unwrap();
            for j in 0..6 {
                let r = f64::from(row[j]) - f64::from(xh[j]);
                recon += r * r;
            }
            l1 += z.z.iter().map(|v| f64::from(*v)).sum::<f64>();
        }
        recon /= 9.0;
        l1 /= 9.0;
        assert!((l.reconstruction - recon).abs() <= 1e-6);
        assert!((l.sparsity - 0.17 * l1).abs() <= 1e-6);
        assert!((l.total - (recon + 0.17 * l1)).abs() <= 1e-6);
        assert!(l.total >= 0.0);
    }

    #[test]
    fn grad_zero_batch_zero_biases() {
        let mut params = random_params(4, 6, 0.1, 51);
        params.b_enc.fill(0.0);
        let batch = ActivationMatrix::new(Array2::zeros((3, 4)), "z").unwrap();
        let g = grad(&params, &batch).unwrap();
        // No unit is strictly active, so the encoder weight gradient vanishes.
        assert!(g.w_enc.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_zero_at_exact_reconstruction() {
        let params = SaeParams {
            w_enc: Array2::zeros((2, 2)),
            b_enc: array![-1.0_f32, -1.0],
            w_dec: Array2::from_shape_vec((2, 2), vec![1.0_f32, 0.0, 0.0, 1.0]).unwrap(),
            b_dec: array![0.5_f32, -0.25],
            lambda: 0.0,
        };
        let batch = ActivationMatrix::new(array![[0.5_f32, -0.25]], "t").unwrap();
        let g = grad(&params, &batch).unwrap();
        assert!(g.w_dec.iter().all(|v| *v == 0.0));
        assert!(g.b_dec.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_matches_finite_differences_over_ten_draws() {
        let mut total_checked = 0;
        let mut total_skipped = 0;
        for draw in 0..10 {
            let params = random_params(5, 7, 0.05 + 0.01 * draw as f64, 100 + draw);
            let batch = random_batch(6, 5, 200 + draw);
            let outcome = finite_difference_check(&params, &batch, 1e-3).unwrap();
            assert!(
                outcome.max_rel_error <= 1e-4,
                "draw {draw}: max relative error {}",
                outcome.max_rel_error
            );
            total_checked += outcome.checked;
            total_skipped += outcome.skipped;
        }
        // Kink-adjacent encoder coordinates must stay a small minority.
        assert!(total_checked > 500, "only {total_checked} coordinates checked");
        assert!(
            total_skipped * 20 <= total_checked,
            "too many kink-adjacent skips: {total_skipped} vs {total_checked} checked"
        );
    }

    #[test]
    fn train_rejects_zero_epochs() {
        let params = SaeParams::init(4, 4, 0.0, 1).unwrap();
        let batch = random_batch(8, 4, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&params, &batch, &cfg),
            Err(CoreError::Precondition(_))
        ));
    }

    #[test]
    fn train_is_deterministic_and_descends() {
        let init = SaeParams::init(8, 12, 0.01, 3).unwrap();
        let data = random_batch(64, 8, 4);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 16,
            epochs: 20,
            seed: 5,
            lambda: 0.01,
            log_every: 10,
        };
        let (p1, h1) = train(&init, &data, &cfg).unwrap();
        let (p2, h2) = train(&init, &data, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        assert!(!h1.records.is_empty());

        let before = loss(&init, &data).unwrap().total;
        let after = loss(&p1, &data).unwrap().total;
        assert!(after <= before, "loss went up: {before} -> {after}");

        // Decoder columns stay unit norm after training.
        p1.validate().unwrap();
    }

    #[test]
    fn train_recovers_exact_dictionary() {
        // Data from an exactly representable 8-atom dictionary in 32 dims;
        // lambda = 0 must drive reconstruction below 1e-3 within 200 epochs.
        let d = 32;
        let k_true = 8;
        let dict = SaeParams::init(d, k_true, 0.0, 77).unwrap().w_dec;
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let n = 512;
        let mut data = Array2::<f32>::zeros((n, d));
        for mut row in data.outer_iter_mut() {
            for j in 0..k_true {
                if rng.random::<f64>() < 0.3 {
                    let mag: f64 = rng.random::<f64>() * 2.0;
                    for i in 0..d {
                        row[i] += (f64::from(dict[[i, j]]) * mag) as f32;
                    }
                }
            }
        }
        let data = ActivationMatrix::new(data, "dict").unwrap();
        let init = SaeParams::init(d, k_true, 0.0, 79).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 64,
            epochs: 200,
            seed: 80,
            lambda: 0.0,
            log_every: 100,
        };
        let (trained, _) = train(&init, &data, &cfg).unwrap();
        let final_recon = loss(&trained, &data).unwrap().reconstruction;
        assert!(
            final_recon <= 1e-3,
            "reconstruction {final_recon} above 1e-3"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let params = random_params(6, 10, 0.125, 91);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sae.sae1");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_truncation_never_partially_loads() {
        let params = random_params(4, 5, 0.0, 92);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sae.sae1");
        save_checkpoint(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            let err = load_checkpoint(&path).unwrap_err();
            assert!(
                matches!(
                    err,
                    CoreError::ChecksumMismatch { .. }
                        | CoreError::Format(_)
                        | CoreError::FormatVersionMismatch { .. }
                ),
                "unexpected error {err:?}"
            );
        }
    }
}
