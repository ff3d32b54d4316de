//! Synthetic sparse-latent generator for the identifiability checks.
//!
//! Each sample draws a class label `y` uniformly, then each true latent
//! independently as `Bernoulli(p_active(y, i)) * |Laplace(scale(y, i))|` — a
//! super-Gaussian sparse source whose parameters vary with the class — and
//! emits `x = D z + eps` through a fixed random unit-column dictionary.
//!
//! The class-parameter variation matrix stacks, per non-base class, the
//! activation-probability and scale differences against class 0; requiring it
//! to have full column rank makes the class conditions genuinely distinct.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::activations::ActivationMatrix;
use crate::error::{CoreError, Result};

/// Parameters of the Bernoulli-Laplace generative process.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLatentSpec {
    /// Observation dimension.
    pub d: usize,
    /// Number of true latent factors.
    pub k_true: usize,
    /// Number of classes.
    pub n_classes: usize,
    /// `n_classes x k_true` activation probabilities in `[0, 1]`.
    pub p_active: Array2<f64>,
    /// `n_classes x k_true` Laplace scales, strictly positive.
    pub scale: Array2<f64>,
    /// Standard deviation of the additive Gaussian observation noise.
    pub noise_sigma: f64,
    /// Seed of the fixed random dictionary.
    pub dictionary_seed: u64,
}

/// A generated dataset: observations plus the ground truth behind them.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub activations: ActivationMatrix,
    /// `n x k_true` true latents.
    pub latents: Array2<f64>,
    /// Class label per sample.
    pub labels: Vec<usize>,
}

impl SyntheticLatentSpec {
    /// The default desk-scale spec: 32 observed dims, 8 true latents, 4
    /// classes. Class parameters are drawn once from a fixed seed.
    pub fn default_spec() -> Self {
        let (k_true, n_classes) = (8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a7e);
        let p_active = Array2::from_shape_fn((n_classes, k_true), |_| {
            0.1 + 0.4 * rng.random::<f64>()
        });
        let scale = Array2::from_shape_fn((n_classes, k_true), |_| {
            0.5 + 1.5 * rng.random::<f64>()
        });
        Self {
            d: 32,
            k_true,
            n_classes,
            p_active,
            scale,
            noise_sigma: 0.05,
            dictionary_seed: 11,
        }
    }

    /// Stacked class-parameter difference matrix: one column per class
    /// `1..n_classes`, concatenating the `p_active` and `scale` rows minus
    /// those of class 0 (shape `2*k_true x (n_classes - 1)`).
    pub fn variability_matrix(&self) -> Array2<f64> {
        let mut m = Array2::<f64>::zeros((2 * self.k_true, self.n_classes - 1));
        for c in 1..self.n_classes {
            for i in 0..self.k_true {
                m[[i, c - 1]] = self.p_active[[c, i]] - self.p_active[[0, i]];
                m[[self.k_true + i, c - 1]] = self.scale[[c, i]] - self.scale[[0, i]];
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.k_true < 1 || self.n_classes < 2 {
            return Err(CoreError::Precondition(
                "need d >= 1, k_true >= 1, n_classes >= 2".into(),
            ));
        }
        if self.p_active.dim() != (self.n_classes, self.k_true)
            || self.scale.dim() != (self.n_classes, self.k_true)
        {
            return Err(CoreError::DimensionMismatch(format!(
                "class parameter tables must be {} x {}",
                self.n_classes, self.k_true
            )));
        }
        if self.p_active.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(CoreError::Precondition(
                "activation probabilities must be in [0, 1]".into(),
            ));
        }
        if self.scale.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(CoreError::Precondition(
                "scales must be strictly positive".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(CoreError::Precondition("noise_sigma must be >= 0".into()));
        }
        let m = self.variability_matrix();
        let rank = matrix_rank(&m, 1e-9);
        if rank < self.n_classes - 1 {
            return Err(CoreError::DegenerateInput(format!(
                "class-parameter variation matrix has rank {rank}, expected full column rank {}",
                self.n_classes - 1
            )));
        }
        Ok(())
    }

    /// The fixed random dictionary with unit columns, `d x k_true`.
    pub fn dictionary(&self) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dictionary_seed);
        let mut dict = Array2::<f64>::zeros((self.d, self.k_true));
        for j in 0..self.k_true {
            let col: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            for (i, v) in col.iter().enumerate() {
                dict[[i, j]] = v / norm;
            }
        }
        dict
    }
}

/// Column rank by Gaussian elimination with partial pivoting.
pub fn matrix_rank(m: &Array2<f64>, tol: f64) -> usize {
    let mut a = m.clone();
    let (rows, cols) = a.dim();
    let mut rank = 0;
    let mut pivot_row = 0;
    for col in 0..cols {
        let mut best = pivot_row;
        for r in pivot_row..rows {
            if a[[r, col]].abs() > a[[best, col]].abs() {
                best = r;
            }
        }
        if pivot_row >= rows || a[[best, col]].abs() <= tol {
            continue;
        }
        if best != pivot_row {
            for c in 0..cols {
                a.swap([best, c], [pivot_row, c]);
            }
        }
        for r in (pivot_row + 1)..rows {
            let factor = a[[r, col]] / a[[pivot_row, col]];
            for c in col..cols {
                a[[r, c]] -= factor * a[[pivot_row, c]];
            }
        }
        rank += 1;
        pivot_row += 1;
    }
    rank
}

/// Generate `n` samples: labels, true latents, and noisy observations.
///
/// RNG consumption is fixed per latent (gate and magnitude uniforms are both
/// always drawn), so the stream layout does not depend on the outcomes.
pub fn generate_synthetic_latents(
    spec: &SyntheticLatentSpec,
    n: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    spec.validate()?;
    if n < 1 {
        return Err(CoreError::Precondition("sample count must be >= 1".into()));
    }
    let dict = spec.dictionary();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latents = Array2::<f64>::zeros((n, spec.k_true));
    let mut labels = Vec::with_capacity(n);
    let mut data = Array2::<f32>::zeros((n, spec.d));
    for row in 0..n {
        let y = rng.random_range(0..spec.n_classes);
        labels.push(y);
        for i in 0..spec.k_true {
            let gate_draw: f64 = rng.random();
            let mag_draw: f64 = rng.random();
            let gate = gate_draw < spec.p_active[[y, i]];
            // |Laplace(0, b)| is exponential with the same scale.
            let magnitude = -spec.scale[[y, i]] * (1.0 - mag_draw).ln();
            latents[[row, i]] = if gate { magnitude } else { 0.0 };
        }
        let z = latents.row(row);
        let x = dict.dot(&z.to_owned());
        for j in 0..spec.d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data[[row, j]] = (x[j] + spec.noise_sigma * noise) as f32;
        }
    }
    Ok(SyntheticDataset {
        activations: ActivationMatrix::new(data, "synthetic")?,
        latents,
        labels,
    })
}

/// Class-conditional mean of each latent under the spec, `E[z_i | y] =
/// p_active(y, i) * scale(y, i)` (mean of the exponential magnitude).
pub fn class_conditional_means(spec: &SyntheticLatentSpec) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((spec.n_classes, spec.k_true));
    for c in 0..spec.n_classes {
        for i in 0..spec.k_true {
            m[[c, i]] = spec.p_active[[c, i]] * spec.scale[[c, i]];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid_with_full_column_rank() {
        let spec = SyntheticLatentSpec::default_spec();
        spec.validate().unwrap();
        let m = spec.variability_matrix();
        assert_eq!(m.dim(), (16, 3));
        assert_eq!(matrix_rank(&m, 1e-9), 3);
    }

    #[test]
    fn degenerate_classes_rejected() {
        let mut spec = SyntheticLatentSpec::default_spec();
        // Make every class identical to class 0: zero variation.
        for c in 1..spec.n_classes {
            for i in 0..spec.k_true {
                spec.p_active[[c, i]] = spec.p_active[[0, i]];
                spec.scale[[c, i]] = spec.scale[[0, i]];
            }
        }
        assert!(matches!(
            spec.validate(),
            Err(CoreError::DegenerateInput(_))
        ));
    }

    #[test]
    fn noiseless_one_hot_latent_reproduces_dictionary_column() {
        let mut spec = SyntheticLatentSpec::default_spec();
        spec.noise_sigma = 0.0;
        // Force latent 3 on with probability one for every class, all others off.
        for c in 0..spec.n_classes {
            for i in 0..spec.k_true {
                spec.p_active[[c, i]] = if i == 3 { 1.0 } else { 0.0 };
            }
        }
        // Restore rank by varying scales across classes.
        let ds = generate_synthetic_latents(&spec, 16, 5).unwrap();
        let dict = spec.dictionary();
        for (row, x) in ds.activations.data.outer_iter().enumerate() {
            let z3 = ds.latents[[row, 3]];
            for j in 0..spec.d {
                assert!((f64::from(x[j]) - dict[[j, 3]] * z3).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn all_inactive_gives_pure_noise() {
        let mut spec = SyntheticLatentSpec::default_spec();
        for c in 0..spec.n_classes {
            for i in 0..spec.k_true {
                spec.p_active[[c, i]] = 0.0;
            }
        }
        // Rank comes from the scale variation, which is untouched.
        let ds = generate_synthetic_latents(&spec, 64, 6).unwrap();
        assert!(ds.latents.iter().all(|z| *z == 0.0));
        // x = eps: empirical std should be near noise_sigma.
        let mut acc = 0.0;
        for v in ds.activations.data.iter() {
            acc += f64::from(*v) * f64::from(*v);
        }
        let std = (acc / (64.0 * spec.d as f64)).sqrt();
        assert!((std - spec.noise_sigma).abs() < 0.02);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticLatentSpec::default_spec();
        let a = generate_synthetic_latents(&spec, 100, 9).unwrap();
        let b = generate_synthetic_latents(&spec, 100, 9).unwrap();
        assert_eq!(a.activations.data, b.activations.data);
        assert_eq!(a.latents, b.latents);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn class_conditional_means_differ_across_classes() {
        // The executable face of the variability condition: expected latent
        // activity genuinely depends on the class.
        let spec = SyntheticLatentSpec::default_spec();
        let means = class_conditional_means(&spec);
        let ds = generate_synthetic_latents(&spec, 40_000, 12).unwrap();
        let mut emp = Array2::<f64>::zeros((spec.n_classes, spec.k_true));
        let mut counts = vec![0usize; spec.n_classes];
        for (row, &y) in ds.labels.iter().enumerate() {
            counts[y] += 1;
            for i in 0..spec.k_true {
                emp[[y, i]] += ds.latents[[row, i]];
            }
        }
        for c in 0..spec.n_classes {
            for i in 0..spec.k_true {
                emp[[c, i]] /= counts[c] as f64;
                assert!(
                    (emp[[c, i]] - means[[c, i]]).abs() < 0.05,
                    "class {c} latent {i}: empirical {} vs expected {}",
                    emp[[c, i]],
                    means[[c, i]]
                );
            }
        }
        // At least one latent separates every pair of classes.
        for c in 1..spec.n_classes {
            let max_diff = (0..spec.k_true)
                .map(|i| (means[[c, i]] - means[[0, i]]).abs())
                .fold(0.0_f64, f64::max);
            assert!(max_diff > 0.05);
        }
    }

    #[test]
    fn rank_helper_on_known_matrices() {
        let id = Array2::<f64>::eye(3);
        assert_eq!(matrix_rank(&id, 1e-12), 3);
        let mut rank1 = Array2::<f64>::zeros((4, 3));
        for r in 0..4 {
            for c in 0..3 {
                rank1[[r, c]] = (r as f64 + 1.0) * (c as f64 + 1.0);
            }
        }
        assert_eq!(matrix_rank(&rank1, 1e-12), 1);
    }
}
