use nalgebra::{DMatrix, DVector};
use serde_json::json;

use super::VarId;
use crate::error::{Error, Result};
use crate::function::VectorFunction;
use crate::linalg::whitener;

/// A Gaussian factor `exp(−½‖r(X)‖²_Σ)` over a set of variables.
///
/// Implementations return residuals and Jacobians already whitened by
/// `Σ^{-1/2}`, so the factor's negative log-likelihood is `½‖r‖²`.
pub trait Factor: Send + Sync {
    fn keys(&self) -> &[VarId];

    /// Residual dimension.
    fn dim(&self) -> usize;

    fn whitened_residual(&self, values: &[DVector<f64>]) -> Result<DVector<f64>>;

    fn linearize(&self, values: &[DVector<f64>]) -> Result<LinearFactor>;

    fn kind(&self) -> &'static str;

    /// Diagnostic description for graph dumps.
    fn describe(&self) -> serde_json::Value {
        json!({
            "kind": self.kind(),
            "keys": self.keys().iter().map(|k| k.0).collect::<Vec<_>>(),
            "dim": self.dim(),
        })
    }
}

/// Whitened linear model `r + Σ_k J_k·δ_k` of a factor around the current values.
#[derive(Debug, Clone)]
pub struct LinearFactor {
    pub keys: Vec<VarId>,
    pub jacobians: Vec<DMatrix<f64>>,
    pub residual: DVector<f64>,
}

/// Unary Gaussian prior `x ~ N(μ, Σ)`; residual `x − μ`.
#[derive(Debug, Clone)]
pub struct PriorFactor {
    keys: [VarId; 1],
    mean: DVector<f64>,
    whitener: DMatrix<f64>,
}

impl PriorFactor {
    pub fn new(target: VarId, mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::Shape { expected: mean.len(), got: cov.nrows() });
        }
        Ok(Self { keys: [target], mean, whitener: whitener(cov)? })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
}

impl Factor for PriorFactor {
    fn keys(&self) -> &[VarId] {
        &self.keys
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn whitened_residual(&self, values: &[DVector<f64>]) -> Result<DVector<f64>> {
        Ok(&self.whitener * (&values[self.keys[0].0] - &self.mean))
    }

    fn linearize(&self, values: &[DVector<f64>]) -> Result<LinearFactor> {
        Ok(LinearFactor {
            keys: self.keys.to_vec(),
            jacobians: vec![self.whitener.clone()],
            residual: self.whitened_residual(values)?,
        })
    }

    fn kind(&self) -> &'static str {
        "prior"
    }
}

/// Between factor tying `m` input nodes to one output node through a
/// function `f`: residual `Σ_j (f(x_j) − y)`. With one input this is the
/// usual `f(x) − y` measurement.
pub struct NAryBetweenFactor<'f> {
    keys: Vec<VarId>,
    function: &'f dyn VectorFunction,
    whitener: DMatrix<f64>,
}

impl<'f> NAryBetweenFactor<'f> {
    pub fn new(inputs: &[VarId], output: VarId, function: &'f dyn VectorFunction, noise_cov: &DMatrix<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Config("between factor needs at least one input node".into()));
        }
        if noise_cov.nrows() != function.output_dim() {
            return Err(Error::Shape { expected: function.output_dim(), got: noise_cov.nrows() });
        }
        let mut keys = inputs.to_vec();
        keys.push(output);
        let mut sorted: Vec<usize> = keys.iter().map(|k| k.0).collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("between factor references a variable twice".into()));
        }
        Ok(Self { keys, function, whitener: whitener(noise_cov)? })
    }

    pub fn input_count(&self) -> usize {
        self.keys.len() - 1
    }

    fn output(&self) -> VarId {
        self.keys[self.keys.len() - 1]
    }

    fn raw_residual(&self, values: &[DVector<f64>]) -> Result<DVector<f64>> {
        let y = &values[self.output().0];
        let mut r = DVector::zeros(y.len());
        for k in &self.keys[..self.input_count()] {
            r += self.function.eval(&values[k.0])? - y;
        }
        Ok(r)
    }

    /// Unwhitened residual and Jacobian blocks, in key order.
    pub fn raw_linearize(&self, values: &[DVector<f64>]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let y = &values[self.output().0];
        let m = self.input_count();
        let mut r = DVector::zeros(y.len());
        let mut jacobians = Vec::with_capacity(m + 1);
        for k in &self.keys[..m] {
            let (fx, j) = self.function.linearize(&values[k.0])?;
            r += fx - y;
            jacobians.push(j);
        }
        jacobians.push(DMatrix::identity(y.len(), y.len()) * -(m as f64));
        Ok((r, jacobians))
    }
}

impl Factor for NAryBetweenFactor<'_> {
    fn keys(&self) -> &[VarId] {
        &self.keys
    }

    fn dim(&self) -> usize {
        self.function.output_dim()
    }

    fn whitened_residual(&self, values: &[DVector<f64>]) -> Result<DVector<f64>> {
        Ok(&self.whitener * self.raw_residual(values)?)
    }

    fn linearize(&self, values: &[DVector<f64>]) -> Result<LinearFactor> {
        let (r, jacobians) = self.raw_linearize(values)?;
        Ok(LinearFactor {
            keys: self.keys.clone(),
            jacobians: jacobians.into_iter().map(|j| &self.whitener * j).collect(),
            residual: &self.whitener * r,
        })
    }

    fn kind(&self) -> &'static str {
        "nary-between"
    }
}
