use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::check_input;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::net::Network;

/// Scaled unscented-transform parameters; `λ = α²(n + κ) − n`.
/// `kappa = None` picks `κ = 3 − n`, so that `n + λ = 3` when `α = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: Option<f64>,
}

impl Default for UtParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0, kappa: None }
    }
}

impl UtParams {
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        let kappa = self.kappa.unwrap_or(3.0 - n);
        self.alpha * self.alpha * (n + kappa) - n
    }
}

/// Sigma points as columns, with mean and covariance weights.
#[derive(Debug, Clone)]
pub struct SigmaPoints {
    pub points: DMatrix<f64>,
    pub mean_weights: DVector<f64>,
    pub cov_weights: DVector<f64>,
}

pub fn sigma_points(input: &Gaussian, params: &UtParams) -> Result<SigmaPoints> {
    let n = input.dim();
    let lambda = params.lambda(n);
    let spread = n as f64 + lambda;
    if !(spread > 0.0) || !params.alpha.is_finite() || !params.beta.is_finite() {
        return Err(Error::Config(format!("unscented transform needs n + λ > 0, got {spread}")));
    }
    let root = input.sqrt_cov() * spread.sqrt();
    let mu = input.mean();
    let mut points = DMatrix::zeros(n, 2 * n + 1);
    points.set_column(0, mu);
    for i in 0..n {
        let c = root.column(i);
        points.set_column(1 + i, &(mu + c));
        points.set_column(1 + n + i, &(mu - c));
    }
    let w = 1.0 / (2.0 * spread);
    let mut mean_weights = DVector::from_element(2 * n + 1, w);
    mean_weights[0] = lambda / spread;
    let mut cov_weights = mean_weights.clone();
    cov_weights[0] += 1.0 - params.alpha * params.alpha + params.beta;
    Ok(SigmaPoints { points, mean_weights, cov_weights })
}

/// Unscented transform through a batched map (columns in, columns out).
pub fn unscented_transform<F>(input: &Gaussian, params: &UtParams, f: F) -> Result<Gaussian>
where
    F: FnOnce(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let sp = sigma_points(input, params)?;
    let ys = f(&sp.points)?;
    if ys.ncols() != sp.points.ncols() {
        return Err(Error::Shape { expected: sp.points.ncols(), got: ys.ncols() });
    }
    let mean = &ys * &sp.mean_weights;
    let mut centred = ys;
    for mut col in centred.column_iter_mut() {
        col -= &mean;
    }
    let weighted = DMatrix::from_fn(centred.nrows(), centred.ncols(), |i, j| centred[(i, j)] * sp.cov_weights[j]);
    let cov = weighted * centred.transpose();
    Gaussian::from_estimate(mean, cov)
}

/// Whole-network unscented transform with `2n + 1` forward passes.
pub fn propagate_ut(net: &Network, input: &Gaussian, params: &UtParams) -> Result<Gaussian> {
    check_input(net, input)?;
    unscented_transform(input, params, |pts| net.output_batch(pts))
}
