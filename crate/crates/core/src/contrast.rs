//! Contrastive identification of the defense mediator.
//!
//! Given paired harm/attack activation batches that share task content but
//! differ in defense state, the latent features whose activations shift across
//! the pair are defense candidates. Features are ranked by a scale-free effect
//! size (Cohen's d), optionally filtered against a benign control pair set,
//! and their decoder columns are orthonormalized into a defense direction set
//! for the surgery stage.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::activations::ActivationMatrix;
use crate::error::{CoreError, Result};
use crate::io::{atomic_write, sig9};
use crate::sae::{encode_batch, SaeParams};

/// Control dominance factor: a candidate is dropped when its control effect
/// reaches this fraction of its harm/attack effect.
pub const CONTROL_DOMINANCE: f64 = 0.5;

/// Residual norm below which a candidate direction is treated as redundant.
pub const DEGENERACY_TOL: f64 = 1e-6;

/// Paired harm/attack activation batches; row `i` of one corresponds to row
/// `i` of the other.
#[derive(Debug, Clone)]
pub struct PairedActivations {
    pub harm: ActivationMatrix,
    pub attack: ActivationMatrix,
}

impl PairedActivations {
    pub fn new(harm: ActivationMatrix, attack: ActivationMatrix) -> Result<Self> {
        if harm.n() != attack.n() || harm.d() != attack.d() {
            return Err(CoreError::DimensionMismatch(format!(
                "paired sets must match: harm is {}x{}, attack is {}x{}",
                harm.n(),
                harm.d(),
                attack.n(),
                attack.d()
            )));
        }
        Ok(Self { harm, attack })
    }

    pub fn n(&self) -> usize {
        self.harm.n()
    }

    pub fn d(&self) -> usize {
        self.harm.d()
    }
}

/// Contrastive statistics of one latent feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureShift {
    pub feature: usize,
    pub mean_harm: f64,
    pub mean_attack: f64,
    /// `mean_harm - mean_attack`.
    pub delta: f64,
    pub pooled_std: f64,
    /// Cohen's d: `delta / pooled_std`, 0 when the pooled deviation is 0.
    pub effect_size: f64,
    /// 1-based rank by descending `|effect_size|`, ties broken by index.
    pub rank: usize,
}

/// Per-feature contrastive statistics over a paired dataset.
#[derive(Debug, Clone)]
pub struct FeatureShiftReport {
    /// One entry per latent feature, indexed by feature id.
    pub shifts: Vec<FeatureShift>,
    /// Number of pairs the statistics were computed over.
    pub n_pairs: usize,
}

impl FeatureShiftReport {
    /// Feature ids sorted by rank (best first).
    pub fn ranked_features(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.shifts.len()).collect();
        order.sort_by_key(|&i| self.shifts[i].rank);
        order
    }

    /// The rank-1 feature id.
    pub fn top_feature(&self) -> usize {
        self.ranked_features()[0]
    }
}

/// Orthonormal defense directions extracted from decoder columns.
#[derive(Debug, Clone)]
pub struct DefenseDirectionSet {
    /// Latent feature ids whose directions survived orthonormalization.
    pub indices: Vec<usize>,
    /// `m x d`, one unit direction per row; rows are mutually orthogonal.
    pub directions: Array2<f64>,
}

impl DefenseDirectionSet {
    pub fn m(&self) -> usize {
        self.directions.nrows()
    }

    pub fn d(&self) -> usize {
        self.directions.ncols()
    }

    /// Check orthonormality: unit rows and pairwise orthogonality to 1e-8.
    pub fn validate(&self) -> Result<()> {
        if self.m() < 1 {
            return Err(CoreError::Precondition(
                "direction set must contain at least one direction".into(),
            ));
        }
        if self.indices.len() != self.m() {
            return Err(CoreError::DimensionMismatch(
                "indices and directions disagree in length".into(),
            ));
        }
        for i in 0..self.m() {
            let ri = self.directions.row(i);
            let norm = ri.dot(&ri).sqrt();
            if (norm - 1.0).abs() > 1e-8 {
                return Err(CoreError::Precondition(format!(
                    "direction {i} has norm {norm}"
                )));
            }
            for j in (i + 1)..self.m() {
                let dot = ri.dot(&self.directions.row(j));
                if dot.abs() > 1e-8 {
                    return Err(CoreError::Precondition(format!(
                        "directions {i} and {j} have dot product {dot}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn column_mean_and_var(codes: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = codes.nrows();
    let k = codes.ncols();
    let mut mean = Array1::<f64>::zeros(k);
    for row in codes.outer_iter() {
        mean += &row;
    }
    mean.mapv_inplace(|v| v / n as f64);
    let mut var = Array1::<f64>::zeros(k);
    if n >= 2 {
        for row in codes.outer_iter() {
            for j in 0..k {
                let dev = row[j] - mean[j];
                var[j] += dev * dev;
            }
        }
        var.mapv_inplace(|v| v / (n as f64 - 1.0));
    }
    (mean, var)
}

/// Encode both sides of a paired dataset and rank the latent features by the
/// magnitude of their contrastive shift.
pub fn feature_shift(params: &SaeParams, pairs: &PairedActivations) -> Result<FeatureShiftReport> {
    let z_harm = encode_batch(params, &pairs.harm)?;
    let z_attack = encode_batch(params, &pairs.attack)?;
    let (mean_h, var_h) = column_mean_and_var(&z_harm);
    let (mean_a, var_a) = column_mean_and_var(&z_attack);

    let k = params.k();
    let mut shifts: Vec<FeatureShift> = (0..k)
        .map(|i| {
            let delta = mean_h[i] - mean_a[i];
            let pooled_std = ((var_h[i] + var_a[i]) / 2.0).sqrt();
            let effect_size = if pooled_std > 0.0 { delta / pooled_std } else { 0.0 };
            FeatureShift {
                feature: i,
                mean_harm: mean_h[i],
                mean_attack: mean_a[i],
                delta,
                pooled_std,
                effect_size,
                rank: 0,
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        shifts[b]
            .effect_size
            .abs()
            .partial_cmp(&shifts[a].effect_size.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for (rank0, &feat) in order.iter().enumerate() {
        shifts[feat].rank = rank0 + 1;
    }
    Ok(FeatureShiftReport {
        shifts,
        n_pairs: pairs.n(),
    })
}

/// Take the top `k_pool` features by rank; when a benign control pair set is
/// supplied, drop any candidate whose control effect reaches
/// [`CONTROL_DOMINANCE`] times its harm/attack effect. The rank-1 feature is
/// always retained, so the result is never empty.
pub fn select_defense_features(
    report: &FeatureShiftReport,
    k_pool: usize,
    control: Option<&PairedActivations>,
    params: &SaeParams,
) -> Result<Vec<usize>> {
    select_defense_features_with_factor(report, k_pool, control, params, CONTROL_DOMINANCE)
}

/// [`select_defense_features`] with an explicit control dominance factor.
pub fn select_defense_features_with_factor(
    report: &FeatureShiftReport,
    k_pool: usize,
    control: Option<&PairedActivations>,
    params: &SaeParams,
    factor: f64,
) -> Result<Vec<usize>> {
    let k = report.shifts.len();
    if k_pool < 1 || k_pool > k {
        return Err(CoreError::InvalidPoolSize { k_pool, k });
    }
    let pool: Vec<usize> = report.ranked_features().into_iter().take(k_pool).collect();
    let Some(control_pairs) = control else {
        return Ok(pool);
    };
    let control_report = feature_shift(params, control_pairs)?;
    let top = pool[0];
    let kept: Vec<usize> = pool
        .into_iter()
        .filter(|&feat| {
            if feat == top {
                return true;
            }
            let pair_effect = report.shifts[feat].effect_size.abs();
            let control_effect = control_report.shifts[feat].effect_size.abs();
            control_effect < factor * pair_effect
        })
        .collect();
    Ok(kept)
}

/// Gather decoder columns at the given feature ids and orthonormalize them in
/// order by sequential projection; near-duplicate columns are dropped.
///
/// Because orthonormalization is sequential, the first feature's direction is
/// its decoder column exactly.
pub fn defense_directions(params: &SaeParams, indices: &[usize]) -> Result<DefenseDirectionSet> {
    if indices.is_empty() {
        return Err(CoreError::Precondition(
            "at least one feature index required".into(),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    for &i in indices {
        if i >= params.k() {
            return Err(CoreError::Precondition(format!(
                "feature index {i} out of range for k = {}",
                params.k()
            )));
        }
        if !seen.insert(i) {
            return Err(CoreError::Precondition(format!(
                "duplicate feature index {i}"
            )));
        }
    }
    let d = params.d();
    let mut kept_rows: Vec<Array1<f64>> = Vec::new();
    let mut kept_indices = Vec::new();
    for &feat in indices {
        let mut v: Array1<f64> = params.w_dec.column(feat).mapv(f64::from);
        for basis in &kept_rows {
            let proj = v.dot(basis);
            v.scaled_add(-proj, basis);
        }
        let norm = v.dot(&v).sqrt();
        if norm < DEGENERACY_TOL {
            continue;
        }
        v.mapv_inplace(|x| x / norm);
        kept_rows.push(v);
        kept_indices.push(feat);
    }
    if kept_rows.is_empty() {
        return Err(CoreError::AllDirectionsDegenerate);
    }
    let mut directions = Array2::<f64>::zeros((kept_rows.len(), d));
    for (r, row) in kept_rows.iter().enumerate() {
        directions.row_mut(r).assign(row);
    }
    let set = DefenseDirectionSet {
        indices: kept_indices,
        directions,
    };
    set.validate()?;
    Ok(set)
}

/// Project every row onto the orthogonal complement of the direction set, in
/// `f64`. This is the numeric kernel of [`recover_task_subspace`]; it is
/// idempotent to 1e-10 and never increases row norms.
pub fn project_out(rows: &Array2<f64>, dirs: &DefenseDirectionSet) -> Result<Array2<f64>> {
    if rows.ncols() != dirs.d() {
        return Err(CoreError::DimensionMismatch(format!(
            "rows have dimension {}, directions have {}",
            rows.ncols(),
            dirs.d()
        )));
    }
    let mut out = rows.clone();
    for mut row in out.outer_iter_mut() {
        for basis in dirs.directions.outer_iter() {
            let proj = row.dot(&basis);
            for (r, b) in row.iter_mut().zip(basis.iter()) {
                *r -= proj * b;
            }
        }
    }
    Ok(out)
}

/// Replace each representation row `r` by `r - sum_i (r . d_i) d_i`,
/// recovering the task component on the orthogonal complement of the defense
/// subspace. Output rows are orthogonal to every direction within
/// `1e-6 * ||r||` (the storage is 32-bit).
pub fn recover_task_subspace(
    reps: &ActivationMatrix,
    dirs: &DefenseDirectionSet,
) -> Result<ActivationMatrix> {
    let projected = project_out(&reps.to_f64(), dirs)?;
    ActivationMatrix::new(projected.mapv(|v| v as f32), reps.label.clone())
}

/// One row of the invariance scatter CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub feature_id: usize,
    pub mean_harm: f64,
    pub mean_attack: f64,
    pub is_defense_flag: u8,
}

/// Emit per-feature (mean_harm, mean_attack) scatter evidence. A feature is
/// flagged as defense-like when its shift leaves the `3 x standard error`
/// invariance band.
pub fn invariance_scatter(
    params: &SaeParams,
    pairs: &PairedActivations,
    out_path: &Path,
) -> Result<Vec<ScatterRow>> {
    let report = feature_shift(params, pairs)?;
    let n = report.n_pairs as f64;
    let rows: Vec<ScatterRow> = report
        .shifts
        .iter()
        .map(|s| {
            let se = s.pooled_std * (2.0 / n).sqrt();
            let outside = if se > 0.0 {
                s.delta.abs() > 3.0 * se
            } else {
                s.delta != 0.0
            };
            ScatterRow {
                feature_id: s.feature,
                mean_harm: s.mean_harm,
                mean_attack: s.mean_attack,
                is_defense_flag: u8::from(outside),
            }
        })
        .collect();
    let mut csv = String::from("feature_id,mean_harm,mean_attack,is_defense_flag\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.feature_id,
            sig9(r.mean_harm),
            sig9(r.mean_attack),
            r.is_defense_flag
        ));
    }
    atomic_write(out_path, csv.as_bytes())?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Identifiability score
// ---------------------------------------------------------------------------

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Mean matched absolute Pearson correlation between learned codes and true
/// latents.
///
/// Columns with zero variance are excluded from matching on both sides; the
/// remaining `k_true x k` absolute-correlation matrix is matched greedily
/// (largest entries first, no row or column reuse) and the mean over matched
/// pairs is returned. The score is invariant to column permutation, nonzero
/// scaling, sign flips, and constant shifts of either argument.
pub fn identifiability_score(
    learned_codes: &Array2<f64>,
    true_latents: &Array2<f64>,
) -> Result<f64> {
    let n = learned_codes.nrows();
    if n < 3 {
        return Err(CoreError::Precondition(
            "need at least 3 samples to correlate".into(),
        ));
    }
    if true_latents.nrows() != n {
        return Err(CoreError::DimensionMismatch(format!(
            "codes have {n} rows, latents have {}",
            true_latents.nrows()
        )));
    }
    let nonconstant = |m: &Array2<f64>| -> Vec<usize> {
        (0..m.ncols())
            .filter(|&j| {
                let col = m.column(j);
                let first = col[0];
                col.iter().any(|v| *v != first)
            })
            .collect()
    };
    let learned_cols = nonconstant(learned_codes);
    let true_cols = nonconstant(true_latents);
    if learned_cols.is_empty() || true_cols.is_empty() {
        return Err(CoreError::DegenerateInput(
            "fewer than one non-constant column".into(),
        ));
    }

    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, &tc) in true_cols.iter().enumerate() {
        let t: Vec<f64> = true_latents.column(tc).to_vec();
        for (li, &lc) in learned_cols.iter().enumerate() {
            let l: Vec<f64> = learned_codes.column(lc).to_vec();
            entries.push((pearson(&t, &l).abs(), ti, li));
        }
    }
    entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut used_true = vec![false; true_cols.len()];
    let mut used_learned = vec![false; learned_cols.len()];
    let mut matched = Vec::new();
    for (corr, ti, li) in entries {
        if !used_true[ti] && !used_learned[li] {
            used_true[ti] = true;
            used_learned[li] = true;
            matched.push(corr);
            if matched.len() == true_cols.len().min(learned_cols.len()) {
                break;
            }
        }
    }
    Ok(matched.iter().sum::<f64>() / matched.len() as f64)
}
