//! Batches of dense residual-stream activation vectors.

use ndarray::Array2;

use crate::error::{CoreError, Result};

/// A batch of dense activation vectors with a dataset label.
///
/// Rows are samples, columns are activation dimensions. Entries are stored as
/// 32-bit floats to match the on-disk dump format; numeric computations widen
/// to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    /// `n x d` activation data, one row per sample.
    pub data: Array2<f32>,
    /// Dataset tag, e.g. `"harm"`, `"attack"`, `"benign"`.
    pub label: String,
}

impl ActivationMatrix {
    /// Build a batch, checking that it is non-empty and finite.
    pub fn new(data: Array2<f32>, label: impl Into<String>) -> Result<Self> {
        let m = Self {
            data,
            label: label.into(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Activation dimension.
    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    /// Check the type invariants: `n >= 1`, `d >= 1`, all entries finite.
    pub fn validate(&self) -> Result<()> {
        if self.n() < 1 || self.d() < 1 {
            return Err(CoreError::Precondition(format!(
                "activation matrix must be at least 1x1, got {}x{}",
                self.n(),
                self.d()
            )));
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFiniteActivation);
        }
        Ok(())
    }

    /// Widened copy of the data for `f64` arithmetic.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    /// Stack several batches row-wise under a new label.
    pub fn concat(parts: &[&ActivationMatrix], label: impl Into<String>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or(CoreError::EmptyInput)?;
        let d = first.d();
        if parts.iter().any(|p| p.d() != d) {
            return Err(CoreError::DimensionMismatch(format!(
                "cannot concat activation matrices with differing d (first has {d})"
            )));
        }
        let n: usize = parts.iter().map(|p| p.n()).sum();
        let mut data = Array2::<f32>::zeros((n, d));
        let mut row = 0;
        for p in parts {
            data.slice_mut(ndarray::s![row..row + p.n(), ..])
                .assign(&p.data);
            row += p.n();
        }
        Self::new(data, label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_non_finite() {
        let data = array![[1.0_f32, f32::NAN]];
        assert!(matches!(
            ActivationMatrix::new(data, "x"),
            Err(CoreError::NonFiniteActivation)
        ));
    }

    #[test]
    fn rejects_empty() {
        let data = Array2::<f32>::zeros((0, 3));
        assert!(ActivationMatrix::new(data, "x").is_err());
    }

    #[test]
    fn concat_stacks_rows() {
        let a = ActivationMatrix::new(array![[1.0_f32, 2.0]], "a").unwrap();
        let b = ActivationMatrix::new(array![[3.0_f32, 4.0], [5.0, 6.0]], "b").unwrap();
        let c = ActivationMatrix::concat(&[&a, &b], "ab").unwrap();
        assert_eq!(c.n(), 3);
        assert_eq!(c.data[[2, 1]], 6.0);
    }
}
