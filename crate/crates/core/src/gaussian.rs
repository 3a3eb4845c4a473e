use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{clamp_psd, max_asymmetry, symmetrize, Eigen};

const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;

/// Multivariate Gaussian with a full, symmetric PSD covariance.
///
/// The covariance eigendecomposition is computed lazily and shared between
/// clones, so trials that only change the mean ([`Gaussian::with_mean`]) pay
/// for it once.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: Arc<DMatrix<f64>>,
    eigen: Arc<OnceLock<Eigen>>,
    clamped: f64,
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl Gaussian {
    /// Validates symmetry (`‖Σ − Σᵀ‖_max ≤ 1e-9`) and PSD-ness (min eigenvalue
    /// `≥ −1e-9`), then stores the symmetrized, clamped covariance.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_shapes(&mean, &cov)?;
        let asym = max_asymmetry(&cov);
        if asym > SYMMETRY_TOL {
            return Err(Error::Covariance(format!("asymmetry {asym:e} exceeds {SYMMETRY_TOL:e}")));
        }
        let sym = symmetrize(&cov);
        let eig = Eigen::new(&sym);
        let min = if sym.nrows() == 0 { 0.0 } else { eig.min() };
        if min < -PSD_TOL {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        let (cov, clamped) = if min < 0.0 {
            (eig.map(|v| v.max(0.0)), -min)
        } else {
            (sym, 0.0)
        };
        let eigen = OnceLock::new();
        if clamped == 0.0 {
            let _ = eigen.set(eig);
        }
        Ok(Self { mean, cov: Arc::new(cov), eigen: Arc::new(eigen), clamped })
    }

    /// Wraps a covariance estimate produced by a propagation method:
    /// symmetrizes it and clamps any negative eigenvalues, recording the
    /// clamped magnitude.
    pub fn from_estimate(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_shapes(&mean, &cov)?;
        if cov.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite moment estimate".into()));
        }
        let (cov, clamped) = clamp_psd(&cov);
        Ok(Self { mean, cov: Arc::new(cov), eigen: Arc::new(OnceLock::new()), clamped })
    }

    /// Zero-mean isotropic Gaussian `N(0, s²I)`.
    pub fn isotropic(dim: usize, std: f64) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim) * (std * std)).expect("isotropic covariance is PSD")
    }

    /// Same covariance, different mean. Shares the cached decomposition.
    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::Shape { expected: self.dim(), got: mean.len() });
        }
        Ok(Self { mean, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Magnitude of the most negative eigenvalue removed at construction.
    pub fn clamped(&self) -> f64 {
        self.clamped
    }

    pub fn eigen(&self) -> &Eigen {
        self.eigen.get_or_init(|| Eigen::new(&self.cov))
    }

    /// Symmetric square root `S` with `S·S = Σ`.
    pub fn sqrt_cov(&self) -> DMatrix<f64> {
        self.eigen().sqrt_clamped()
    }
}

fn check_shapes(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(Error::Covariance(format!(
            "covariance is {}x{} for a mean of length {}",
            cov.nrows(),
            cov.ncols(),
            mean.len()
        )));
    }
    Ok(())
}

/// Plain serializable view, used for JSON output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianRecord {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// Row-major rows.
    pub cov: Vec<Vec<f64>>,
}

impl From<&Gaussian> for GaussianRecord {
    fn from(g: &Gaussian) -> Self {
        Self {
            dim: g.dim(),
            mean: g.mean.iter().copied().collect(),
            cov: g.cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let m = DVector::zeros(2);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 1e-6, 0.0, 1.0]);
        assert!(matches!(Gaussian::new(m.clone(), asym), Err(Error::Covariance(_))));
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(Gaussian::new(m.clone(), neg), Err(Error::NotPsd { .. })));
        let wrong = DMatrix::identity(3, 3);
        assert!(Gaussian::new(m, wrong).is_err());
    }

    #[test]
    fn tiny_negative_eigenvalue_is_clamped_and_recorded() {
        let g = Gaussian::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-10])).unwrap();
        assert!((g.clamped() - 1e-10).abs() < 1e-20);
        assert!(g.eigen().min() >= -1e-15);
    }

    #[test]
    fn with_mean_shares_covariance() {
        let g = Gaussian::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0])).unwrap();
        let h = g.with_mean(DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert!(Arc::ptr_eq(&g.eigen, &h.eigen));
        let s = h.sqrt_cov();
        assert!((&s * &s - h.cov()).abs().max() < 1e-12);
        assert!(g.with_mean(DVector::zeros(3)).is_err());
    }
}
