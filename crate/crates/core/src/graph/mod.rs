//! Gaussian factor graphs solved as nonlinear least squares.

mod factor;
mod optimize;
mod solver;

use nalgebra::{DMatrix, DVector};
use serde_json::json;

pub use factor::{Factor, LinearFactor, NAryBetweenFactor, PriorFactor};
pub use optimize::{OptimizeReport, OptimizerConfig};
pub use solver::{DenseCholesky, LinearSolver, LinearSystem, LowRankSchur, SolverKind};

use crate::error::{Error, Result};
use crate::function::VectorFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

/// Variables, factors and the trace of the last optimization.
///
/// Factors may borrow measurement functions (typically a network) for the
/// graph's lifetime `'f`.
#[derive(Default)]
pub struct FactorGraph<'f> {
    values: Vec<DVector<f64>>,
    factors: Vec<Box<dyn Factor + 'f>>,
    nll_trace: Vec<f64>,
}

impl<'f> FactorGraph<'f> {
    pub fn new() -> Self {
        Self { values: Vec::new(), factors: Vec::new(), nll_trace: Vec::new() }
    }

    pub fn add_variable(&mut self, initial: DVector<f64>) -> Result<VarId> {
        if initial.is_empty() {
            return Err(Error::Config("variables must have positive dimension".into()));
        }
        self.values.push(initial);
        Ok(VarId(self.values.len() - 1))
    }

    pub fn add_prior_factor(&mut self, target: VarId, mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
        let f = PriorFactor::new(target, mean, cov)?;
        self.add_factor(Box::new(f))
    }

    pub fn add_nary_between_factor(
        &mut self,
        inputs: &[VarId],
        output: VarId,
        function: &'f dyn VectorFunction,
        noise_cov: &DMatrix<f64>,
    ) -> Result<()> {
        for &k in inputs {
            self.check_dim(k, function.input_dim())?;
        }
        self.check_dim(output, function.output_dim())?;
        let f = NAryBetweenFactor::new(inputs, output, function, noise_cov)?;
        self.add_factor(Box::new(f))
    }

    /// Adds an arbitrary factor after checking its keys exist.
    pub fn add_factor(&mut self, factor: Box<dyn Factor + 'f>) -> Result<()> {
        for &k in factor.keys() {
            self.value(k)?;
        }
        if let [k] = factor.keys() {
            self.check_dim(*k, factor.dim())?;
        }
        self.factors.push(factor);
        Ok(())
    }

    fn check_dim(&self, id: VarId, dim: usize) -> Result<()> {
        let v = self.value(id)?;
        if v.len() != dim {
            return Err(Error::Shape { expected: dim, got: v.len() });
        }
        Ok(())
    }

    pub fn value(&self, id: VarId) -> Result<&DVector<f64>> {
        self.values.get(id.0).ok_or(Error::UnknownVariable(id.0))
    }

    pub fn set_value(&mut self, id: VarId, value: DVector<f64>) -> Result<()> {
        self.check_dim(id, value.len())?;
        self.values[id.0] = value;
        Ok(())
    }

    pub fn variable_count(&self) -> usize {
        self.values.len()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Box<dyn Factor + 'f>] {
        &self.factors
    }

    pub fn negative_log_likelihood(&self) -> Result<f64> {
        nll_at(&self.factors, &self.values)
    }

    /// Linear model of every factor at the current values.
    pub fn linearize(&self) -> Result<LinearSystem> {
        Ok(LinearSystem {
            dims: self.values.iter().map(|v| v.len()).collect(),
            factors: self.factors.iter().map(|f| f.linearize(&self.values)).collect::<Result<_>>()?,
        })
    }

    /// Marginal covariance of `id` at the current linearization point, read
    /// off the inverse of the Gauss-Newton information matrix.
    pub fn marginal_covariance(&self, id: VarId, solver: SolverKind) -> Result<DMatrix<f64>> {
        self.value(id)?;
        let sys = self.linearize()?;
        solver.solver_for(&sys).marginal(&sys, id)
    }

    /// NLL after each accepted step of the last optimization, starting with
    /// the initial value.
    pub fn nll_trace(&self) -> &[f64] {
        &self.nll_trace
    }

    /// Diagnostic snapshot of variables, factors and the optimization trace.
    pub fn dump(&self) -> Result<serde_json::Value> {
        Ok(json!({
            "variables": self.values.iter().enumerate().map(|(i, v)| json!({
                "id": i,
                "dim": v.len(),
                "value": v.iter().copied().collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "factors": self.factors.iter().map(|f| f.describe()).collect::<Vec<_>>(),
            "nll": self.negative_log_likelihood()?,
            "nll_trace": self.nll_trace,
        }))
    }
}

fn nll_at(factors: &[Box<dyn Factor + '_>], values: &[DVector<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for f in factors {
        total += 0.5 * f.whitened_residual(values)?.norm_squared();
    }
    if total.is_nan() {
        return Err(Error::Numeric("negative log-likelihood is NaN".into()));
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
