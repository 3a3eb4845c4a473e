//! Small dense linear-algebra helpers shared by the propagation methods,
//! the factor graph and the metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest absolute entry of `M - Mᵀ`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(M + Mᵀ) / 2`. Exactly symmetric on return.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖_F / ‖b‖_F`, with `‖b‖_F` floored at `1e-300`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    frobenius(&(a - b)) / frobenius(b).max(1e-300)
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Eigen {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(symmetrize(m));
        Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `V · diag(g(λ)) · Vᵀ`, exactly symmetrized.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= g(self.values[j]);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    /// Symmetric square root with negative eigenvalues clamped to zero.
    pub fn sqrt_clamped(&self) -> DMatrix<f64> {
        self.map(|v| v.max(0.0).sqrt())
    }
}

/// Symmetric PSD square root, clamping eigenvalues below zero. Never fails;
/// callers that must reject indefinite input check the spectrum first.
pub fn sqrt_clamped(m: &DMatrix<f64>) -> DMatrix<f64> {
    Eigen::new(m).sqrt_clamped()
}

/// Symmetrizes `m` and clamps its negative eigenvalues to zero. Returns the
/// clamped matrix and the magnitude of the most negative eigenvalue removed
/// (0 when nothing was clamped; the input is then returned symmetrized only).
pub fn clamp_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return (sym, 0.0);
    }
    let eig = Eigen::new(&sym);
    let min = eig.min();
    if min >= 0.0 {
        (sym, 0.0)
    } else {
        (eig.map(|v| v.max(0.0)), -min)
    }
}

/// Whitening operator for an SPD covariance: returns `L⁻¹` where `Σ = L·Lᵀ`,
/// so that `‖L⁻¹ r‖² = rᵀ Σ⁻¹ r`.
///
/// Rejects matrices that are asymmetric beyond `1e-10` or whose smallest
/// eigenvalue (after symmetrization) is at most `1e-12`.
pub fn whitener(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const SYMMETRY_TOL: f64 = 1e-10;
    const MIN_EIGENVALUE: f64 = 1e-12;
    if !cov.is_square() || cov.nrows() == 0 {
        return Err(Error::Covariance(format!(
            "expected a non-empty square matrix, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Covariance("non-finite entry".into()));
    }
    let asym = max_asymmetry(cov);
    if asym > SYMMETRY_TOL {
        return Err(Error::Covariance(format!("asymmetry {asym:e} exceeds {SYMMETRY_TOL:e}")));
    }
    let sym = symmetrize(cov);
    // Cholesky of Σ − τI succeeds exactly when λ_min(Σ) > τ.
    let shifted = &sym - DMatrix::identity(sym.nrows(), sym.ncols()) * MIN_EIGENVALUE;
    if shifted.cholesky().is_none() {
        let min = Eigen::new(&sym).min();
        return Err(Error::Covariance(format!(
            "not positive definite: min eigenvalue {min:e} <= {MIN_EIGENVALUE:e}"
        )));
    }
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::Covariance("Cholesky factorization failed".into()))?;
    let l = chol.l();
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Covariance("triangular inverse failed".into()))
}

/// Lower-triangular inverse of a Cholesky factor `L` applied on the left
/// and right: returns `(L Lᵀ)⁻¹` computed as `L⁻ᵀ L⁻¹`.
pub(crate) fn inverse_from_cholesky_factor(l: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = l.nrows();
    let linv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
    Some(symmetrize(&(linv.transpose() * linv)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitener_reproduces_mahalanobis() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let w = whitener(&cov).unwrap();
        let r = DVector::from_vec(vec![1.0, -2.0]);
        let direct = (r.transpose() * cov.clone().try_inverse().unwrap() * &r)[0];
        assert!(((&w * &r).norm_squared() - direct).abs() < 1e-12);
    }

    #[test]
    fn whitener_rejects_indefinite_and_asymmetric() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(whitener(&indefinite), Err(Error::Covariance(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(whitener(&asym), Err(Error::Covariance(_))));
        let tiny = DMatrix::from_row_slice(1, 1, &[1e-13]);
        assert!(whitener(&tiny).is_err());
    }

    #[test]
    fn clamp_reports_magnitude() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.25]);
        let (c, mag) = clamp_psd(&m);
        assert!((mag - 0.25).abs() < 1e-15);
        assert!(c[(1, 1)].abs() < 1e-15);
        let (same, zero) = clamp_psd(&DMatrix::identity(3, 3));
        assert_eq!(zero, 0.0);
        assert_eq!(same, DMatrix::identity(3, 3));
    }
}
