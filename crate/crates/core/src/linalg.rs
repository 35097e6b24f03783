//! Cholesky factorization with escalating jitter and the triangular-solve
//! helpers every model builds on.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{GpError, Result};

/// Smallest relative jitter tried after a plain factorization fails.
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-2;

/// Lower-triangular factor `L` with `L Lᵀ = A + jitter I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

/// Factorizes a symmetric matrix, adding diagonal jitter only when needed.
///
/// The plain matrix is tried first; on failure jitter starts at
/// `1e-8 * mean(diag)` and grows by ×10 up to `1e-2 * mean(diag)`.
pub fn robust_cholesky(a: &DMatrix<f64>) -> Result<CholeskyFactor> {
    if !a.is_square() {
        return Err(GpError::DimensionMismatch {
            context: "cholesky (square)",
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite("cholesky input"));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(CholeskyFactor { l: DMatrix::zeros(0, 0), jitter: 0.0 });
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(CholeskyFactor { l: c.unpack(), jitter: 0.0 });
    }
    let mean_diag = a.diagonal().mean();
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut rel = JITTER_START;
    let mut jitter = rel * scale;
    while rel <= JITTER_MAX * (1.0 + 1e-12) {
        jitter = rel * scale;
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok(CholeskyFactor { l: c.unpack(), jitter });
        }
        rel *= 10.0;
    }
    Err(GpError::NotPositiveDefinite { jitter })
}

impl CholeskyFactor {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Diagonal jitter that was added before factorizing.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `L⁻¹ B`
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.l.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `L⁻ᵀ B`
    pub fn solve_upper(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.l.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.l.solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn solve_upper_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.l.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    /// `(L Lᵀ)⁻¹ b`
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper_vec(&self.solve_lower_vec(b))
    }

    /// `(L Lᵀ)⁻¹ B`
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `(L Lᵀ)⁻¹`
    pub fn inverse(&self) -> DMatrix<f64> {
        let linv = self.solve_lower(&DMatrix::identity(self.dim(), self.dim()));
        linv.tr_mul(&linv)
    }

    /// `log |L Lᵀ|`
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }
}

/// `0.5 (A + Aᵀ)`
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_factor() {
        let f = robust_cholesky(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.l(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn hand_checked_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = robust_cholesky(&a).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2f64.sqrt()]);
        assert_relative_eq!(f.l().clone(), expected, epsilon = 1e-14);
        assert_relative_eq!(f.log_det(), 8f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn duplicate_inputs_need_jitter() {
        // rank-1 kernel matrix from identical inputs
        let a = DMatrix::from_element(4, 4, 1.0);
        let f = robust_cholesky(&a).unwrap();
        assert!(f.jitter() > 0.0);
        assert!(f.jitter() <= JITTER_MAX * 1.0 + 1e-15);
        let err = (f.reconstruct() - &a).abs().max();
        assert!(err <= f.jitter() * (1.0 + 1e-8), "reconstruction error {err} vs jitter {}", f.jitter());
    }

    #[test]
    fn indefinite_fails_with_final_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match robust_cholesky(&a) {
            Err(GpError::NotPositiveDefinite { jitter }) => {
                assert_relative_eq!(jitter, JITTER_MAX, max_relative = 1e-9)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(robust_cholesky(&a), Err(GpError::NonFinite(_))));
    }

    #[test]
    fn solves_are_consistent() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = robust_cholesky(&a).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = f.solve_vec(&b);
        assert_relative_eq!(&a * x, b, epsilon = 1e-12);
        assert_relative_eq!(f.inverse() * &a, DMatrix::identity(3, 3), epsilon = 1e-12);
    }
}
