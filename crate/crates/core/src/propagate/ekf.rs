use nalgebra::DMatrix;

use super::check_input;
use crate::error::Result;
use crate::gaussian::Gaussian;
use crate::net::Network;

/// First-order propagation with full covariance.
///
/// Carries a square-root factor `F` with `Σ = F·Fᵀ` layer by layer: affine
/// layers map `F ← W·F`, ReLU zeroes the rows of inactive units and `Add`
/// sums the branch factors, so branch correlations are kept exactly.
pub fn propagate_ekf(net: &Network, input: &Gaussian) -> Result<Gaussian> {
    check_input(net, input)?;
    let root = input.sqrt_cov();
    let (mean, factor) = net.push_tangent(input.mean(), net.output_id(), &root)?;
    let cov: DMatrix<f64> = &factor * factor.transpose();
    Gaussian::from_estimate(mean, cov)
}
