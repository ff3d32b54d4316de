//! Weight orthogonalization against a defense subspace.
//!
//! The projector onto the orthogonal complement of an orthonormal direction
//! set `{d_i}` is `P = I - sum_i d_i d_i^T`. Multiplying an output weight
//! matrix by `P` on the right removes every row's component along the defense
//! subspace, so the purified weights can no longer express those features.
//!
//! The basis must already be orthonormal; a non-orthonormal basis is rejected
//! rather than silently normalized so caller bugs surface here.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::contrast::DefenseDirectionSet;
use crate::error::{CoreError, Result};

/// Maximum tolerated Gram-matrix deviation of an input basis.
pub const GRAM_TOL: f64 = 1e-6;

/// Projector onto the orthogonal complement of a defense subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator {
    /// Ambient dimension.
    pub dim: usize,
    /// `m x dim` orthonormal basis rows spanning the removed subspace.
    pub basis: Array2<f64>,
    /// Dense `dim x dim` form `P = I - sum_i d_i d_i^T`.
    pub matrix: Array2<f64>,
}

impl ProjectionOperator {
    /// Number of removed directions.
    pub fn m(&self) -> usize {
        self.basis.nrows()
    }

    /// Check symmetry, idempotence, and the trace identity `tr P = dim - m`.
    pub fn validate(&self) -> Result<()> {
        let p = &self.matrix;
        if p.dim() != (self.dim, self.dim) {
            return Err(CoreError::DimensionMismatch(format!(
                "projector matrix is {:?}, expected ({dim}, {dim})",
                p.dim(),
                dim = self.dim
            )));
        }
        let mut max_asym = 0.0_f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                max_asym = max_asym.max((p[[i, j]] - p[[j, i]]).abs());
            }
        }
        if max_asym > 1e-10 {
            return Err(CoreError::Precondition(format!(
                "projector asymmetry {max_asym}"
            )));
        }
        let p2 = p.dot(p);
        let mut max_nonidem = 0.0_f64;
        for (a, b) in p2.iter().zip(p.iter()) {
            max_nonidem = max_nonidem.max((a - b).abs());
        }
        if max_nonidem > 1e-10 {
            return Err(CoreError::Precondition(format!(
                "projector not idempotent: {max_nonidem}"
            )));
        }
        let trace: f64 = (0..self.dim).map(|i| p[[i, i]]).sum();
        let expected = (self.dim - self.m()) as f64;
        if (trace - expected).abs() > 1e-8 {
            return Err(CoreError::Precondition(format!(
                "projector trace {trace}, expected {expected}"
            )));
        }
        Ok(())
    }
}

/// Build the projector from an orthonormal basis (rows of `basis`).
/// An empty basis yields the identity operator.
pub fn projector_from_basis(basis: ArrayView2<f64>, dim: usize) -> Result<ProjectionOperator> {
    let m = basis.nrows();
    if m > 0 && basis.ncols() != dim {
        return Err(CoreError::DimensionMismatch(format!(
            "basis vectors have length {}, expected {dim}",
            basis.ncols()
        )));
    }
    // Gram deviation against the identity.
    let mut deviation = 0.0_f64;
    for i in 0..m {
        for j in 0..m {
            let dot = basis.row(i).dot(&basis.row(j));
            let expected = if i == j { 1.0 } else { 0.0 };
            deviation = deviation.max((dot - expected).abs());
        }
    }
    if deviation > GRAM_TOL {
        return Err(CoreError::NonOrthonormalInput { deviation });
    }
    let mut matrix = Array2::<f64>::eye(dim);
    for row in basis.outer_iter() {
        for i in 0..dim {
            for j in 0..dim {
                matrix[[i, j]] -= row[i] * row[j];
            }
        }
    }
    let op = ProjectionOperator {
        dim,
        basis: basis.to_owned(),
        matrix,
    };
    op.validate()?;
    Ok(op)
}

/// Build the projector for a defense direction set.
pub fn projector(dirs: &DefenseDirectionSet, dim: usize) -> Result<ProjectionOperator> {
    projector_from_basis(dirs.directions.view(), dim)
}

/// Right-multiply the weights by the projector: `W_new = W P`.
///
/// Every output row satisfies `|row . d_i| <= 1e-6 * ||row||`, and rows that
/// were already orthogonal to the subspace are unchanged within 1e-10.
pub fn orthogonalize_weights(w_out: &Array2<f64>, op: &ProjectionOperator) -> Result<Array2<f64>> {
    if w_out.ncols() != op.dim {
        return Err(CoreError::DimensionMismatch(format!(
            "weights have {} columns, projector dimension is {}",
            w_out.ncols(),
            op.dim
        )));
    }
    Ok(w_out.dot(&op.matrix))
}

/// Per-row change caused by the surgery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowChange {
    pub row: usize,
    pub norm_before: f64,
    pub norm_after: f64,
    pub reduction_percent: f64,
}

/// Deterministic summary of a weight orthogonalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryReport {
    pub rows: Vec<RowChange>,
    /// Largest `|row . d_i| / ||row||` over all rows and directions after
    /// surgery (0 for zero rows).
    pub max_residual_alignment: f64,
    /// Rows whose norm dropped below 1e-12.
    pub zeroed_rows: usize,
}

/// Summarize the effect of a surgery for reporting.
pub fn surgery_report(
    before: &Array2<f64>,
    after: &Array2<f64>,
    dirs: &DefenseDirectionSet,
) -> Result<SurgeryReport> {
    if before.dim() != after.dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "before is {:?}, after is {:?}",
            before.dim(),
            after.dim()
        )));
    }
    let mut rows = Vec::with_capacity(before.nrows());
    let mut zeroed = 0usize;
    let mut max_align = 0.0_f64;
    for (i, (b, a)) in before.outer_iter().zip(after.outer_iter()).enumerate() {
        let nb = b.dot(&b).sqrt();
        let na = a.dot(&a).sqrt();
        if na < 1e-12 && nb > 1e-12 {
            zeroed += 1;
        }
        let reduction = if nb > 0.0 { 100.0 * (nb - na) / nb } else { 0.0 };
        if na > 0.0 {
            for basis in dirs.directions.outer_iter() {
                max_align = max_align.max(a.dot(&basis).abs() / na);
            }
        }
        rows.push(RowChange {
            row: i,
            norm_before: nb,
            norm_after: na,
            reduction_percent: reduction,
        });
    }
    Ok(SurgeryReport {
        rows,
        max_residual_alignment: max_align,
        zeroed_rows: zeroed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::defense_directions;
    use crate::sae::SaeParams;
    use ndarray::array;

    fn dirs_from_rows(rows: Array2<f64>) -> DefenseDirectionSet {
        let indices = (0..rows.nrows()).collect();
        let set = DefenseDirectionSet {
            indices,
            directions: rows,
        };
        set.validate().unwrap();
        set
    }

    #[test]
    fn empty_basis_is_identity() {
        let op = projector_from_basis(Array2::<f64>::zeros((0, 4)).view(), 4).unwrap();
        assert_eq!(op.m(), 0);
        assert_eq!(op.matrix, Array2::<f64>::eye(4));
        op.validate().unwrap();
    }

    #[test]
    fn single_axis_basis_in_two_dims() {
        let basis = array![[1.0, 0.0]];
        let op = projector_from_basis(basis.view(), 2).unwrap();
        assert_eq!(op.matrix, array![[0.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn random_basis_satisfies_operator_invariants() {
        let params = SaeParams::init(32, 8, 0.0, 3).unwrap();
        let dirs = defense_directions(&params, &[0, 4, 6]).unwrap();
        let op = projector(&dirs, 32).unwrap();
        op.validate().unwrap();
        assert_eq!(op.m(), 3);
        let trace: f64 = (0..32).map(|i| op.matrix[[i, i]]).sum();
        assert!((trace - 29.0).abs() <= 1e-8);
    }

    #[test]
    fn rejects_non_orthonormal_basis() {
        let basis = array![[1.0, 0.0], [1.0, 0.0]];
        assert!(matches!(
            projector_from_basis(basis.view(), 2),
            Err(CoreError::NonOrthonormalInput { .. })
        ));
        let unnormalized = array![[2.0, 0.0]];
        assert!(matches!(
            projector_from_basis(unnormalized.view(), 2),
            Err(CoreError::NonOrthonormalInput { .. })
        ));
    }

    #[test]
    fn orthogonalize_zeroes_first_axis() {
        let dirs = dirs_from_rows(array![[1.0, 0.0]]);
        let op = projector(&dirs, 2).unwrap();
        let w = array![[1.0, 2.0], [3.0, 4.0]];
        let out = orthogonalize_weights(&w, &op).unwrap();
        assert!((out[[0, 0]]).abs() < 1e-12);
        assert!((out[[0, 1]] - 2.0).abs() < 1e-12);
        assert!((out[[1, 0]]).abs() < 1e-12);
        assert!((out[[1, 1]] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_row_becomes_zero() {
        let inv = 1.0 / 2.0_f64.sqrt();
        let dirs = dirs_from_rows(array![[inv, inv]]);
        let op = projector(&dirs, 2).unwrap();
        let w = array![[1.0, 1.0]];
        let out = orthogonalize_weights(&w, &op).unwrap();
        assert!(out.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn matches_naive_per_row_projection() {
        let params = SaeParams::init(24, 6, 0.0, 5).unwrap();
        let dirs = defense_directions(&params, &[1, 3, 5]).unwrap();
        let op = projector(&dirs, 24).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let w = Array2::from_shape_fn((10, 24), |_| rng.random::<f64>() * 4.0 - 2.0);
        let fast = orthogonalize_weights(&w, &op).unwrap();
        // Naive per-row oracle: subtract each direction's projection.
        for (row_idx, row) in w.outer_iter().enumerate() {
            let mut expected = row.to_owned();
            for basis in dirs.directions.outer_iter() {
                let proj = row.dot(&basis);
                expected.scaled_add(-proj, &basis);
            }
            for (a, b) in fast.row(row_idx).iter().zip(expected.iter()) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
        // Exact-null and norm-monotonicity invariants.
        for row in fast.outer_iter() {
            let norm = row.dot(&row).sqrt();
            for basis in dirs.directions.outer_iter() {
                assert!(row.dot(&basis).abs() <= 1e-6 * norm.max(1.0));
            }
        }
        for (b, a) in w.outer_iter().zip(fast.outer_iter()) {
            assert!(a.dot(&a).sqrt() <= b.dot(&b).sqrt() + 1e-12);
        }
    }

    #[test]
    fn double_application_equals_single() {
        let params = SaeParams::init(16, 4, 0.0, 9).unwrap();
        let dirs = defense_directions(&params, &[0, 2]).unwrap();
        let op = projector(&dirs, 16).unwrap();
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let w = Array2::from_shape_fn((5, 16), |_| rng.random::<f64>() - 0.5);
        let once = orthogonalize_weights(&w, &op).unwrap();
        let twice = orthogonalize_weights(&once, &op).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn joint_projection_equals_sequential() {
        let params = SaeParams::init(16, 4, 0.0, 11).unwrap();
        let dirs = defense_directions(&params, &[1, 3]).unwrap();
        let joint = projector(&dirs, 16).unwrap();
        let d1 = dirs_from_rows(dirs.directions.slice(ndarray::s![0..1, ..]).to_owned());
        let d2 = dirs_from_rows(dirs.directions.slice(ndarray::s![1..2, ..]).to_owned());
        let p1 = projector(&d1, 16).unwrap();
        let p2 = projector(&d2, 16).unwrap();
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let w = Array2::from_shape_fn((4, 16), |_| rng.random::<f64>() - 0.5);
        let joint_out = orthogonalize_weights(&w, &joint).unwrap();
        let seq_out =
            orthogonalize_weights(&orthogonalize_weights(&w, &p1).unwrap(), &p2).unwrap();
        for (a, b) in joint_out.iter().zip(seq_out.iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn report_empty_basis_no_change() {
        let dirs = dirs_from_rows(array![[1.0, 0.0]]);
        let w = array![[0.0, 5.0], [0.0, -1.0]];
        // Rows already orthogonal to the basis: zero reductions.
        let op = projector(&dirs, 2).unwrap();
        let after = orthogonalize_weights(&w, &op).unwrap();
        let report = surgery_report(&w, &after, &dirs).unwrap();
        assert_eq!(report.zeroed_rows, 0);
        for r in &report.rows {
            assert!(r.reduction_percent.abs() < 1e-12);
        }
    }

    #[test]
    fn report_parallel_row_full_reduction() {
        let dirs = dirs_from_rows(array![[0.0, 1.0]]);
        let w = array![[0.0, 3.0]];
        let op = projector(&dirs, 2).unwrap();
        let after = orthogonalize_weights(&w, &op).unwrap();
        let report = surgery_report(&w, &after, &dirs).unwrap();
        assert_eq!(report.zeroed_rows, 1);
        assert!((report.rows[0].reduction_percent - 100.0).abs() < 1e-9);
        assert!(report.max_residual_alignment <= 1e-6);
    }
}
