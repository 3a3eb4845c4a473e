//! Distances between Gaussians and rank statistics over score tables.

mod stats;

use nalgebra::DMatrix;

pub use stats::{friedman_test, nemenyi_q, nemenyi_test, rank_row, FriedmanResult, NemenyiResult, ScoreTable};

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::linalg::{max_asymmetry, symmetrize, Eigen};

const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;

/// Symmetric square root of a PSD matrix; eigenvalues down to `−1e-9` are
/// clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Covariance(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::Covariance(format!("asymmetry {asym:e} exceeds {SYMMETRY_TOL:e}")));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = Eigen::new(&symmetrize(m));
    let min = eig.min();
    if min < -PSD_TOL {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(eig.sqrt_clamped())
}

/// 2-Wasserstein distance between Gaussians:
/// `W₂² = ‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_b^{1/2} Σ_a Σ_b^{1/2})^{1/2})`,
/// with the mean term only when `include_means` is set.
pub fn wasserstein2(a: &Gaussian, b: &Gaussian, include_means: bool) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape { expected: a.dim(), got: b.dim() });
    }
    let mean_sq = if include_means { (a.mean() - b.mean()).norm_squared() } else { 0.0 };
    if a.cov() == b.cov() {
        return Ok(mean_sq.sqrt());
    }
    let root_b = b.sqrt_cov();
    let inner = symmetrize(&(&root_b * a.cov() * &root_b));
    let cross: f64 = inner.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).sum();
    let w2_sq = mean_sq + a.cov().trace() + b.cov().trace() - 2.0 * cross;
    Ok(w2_sq.max(0.0).sqrt())
}

/// Covariance-only 2-Wasserstein distance between two PSD matrices.
pub fn wasserstein2_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let zero = nalgebra::DVector::zeros(a.nrows());
    let ga = Gaussian::new(zero.clone(), a.clone())?;
    let gb = Gaussian::new(nalgebra::DVector::zeros(b.nrows()), b.clone())?;
    wasserstein2(&ga, &gb, false)
}
