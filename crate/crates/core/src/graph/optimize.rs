use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::solver::SolverKind;
use super::{nll_at, FactorGraph};
use crate::error::{Error, Result};

const MAX_DAMPING: f64 = 1e8;
const FALLBACK_DAMPING: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop when an accepted step lowers the NLL by less than this.
    pub abs_tol: f64,
    /// Stop when `‖δ‖ ≤ rel_tol·‖x‖`.
    pub rel_tol: f64,
    /// Initial damping `λ` of `Λ + λI`; 0 starts with plain Gauss-Newton.
    pub damping_init: f64,
    pub solver: SolverKind,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_iters: 100, abs_tol: 1e-9, rel_tol: 1e-8, damping_init: 1e-4, solver: SolverKind::Auto }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.abs_tol >= 0.0 && self.rel_tol >= 0.0 && self.damping_init >= 0.0 && self.damping_init.is_finite();
        if !ok {
            return Err(Error::Config("optimizer tolerances and damping must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeReport {
    pub converged: bool,
    /// Accepted steps.
    pub iterations: usize,
    pub final_nll: f64,
    pub final_damping: f64,
}

impl FactorGraph<'_> {
    /// Levenberg-Marquardt on the whitened least-squares problem.
    pub fn optimize(&mut self, cfg: &OptimizerConfig) -> Result<OptimizeReport> {
        cfg.validate()?;
        self.check_coverage()?;
        let mut nll = self.negative_log_likelihood()?;
        self.nll_trace = vec![nll];
        let mut damping = cfg.damping_init;
        let mut iterations = 0;
        let mut converged = false;

        'outer: while iterations < cfg.max_iters {
            let sys = self.linearize()?;
            let solver = cfg.solver.solver_for(&sys);
            loop {
                let delta = match solver.solve(&sys, damping) {
                    Ok(d) => d,
                    Err(Error::Singular { .. }) => {
                        damping = escalate(damping);
                        if damping > MAX_DAMPING {
                            return Err(Error::Singular { damping });
                        }
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let x_norm = self.values.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
                let step = delta.norm();
                if step <= cfg.rel_tol * x_norm || step == 0.0 {
                    converged = true;
                    break 'outer;
                }
                let candidate = self.stepped(&delta);
                let new_nll = nll_at(&self.factors, &candidate)?;
                if new_nll <= nll {
                    let decrease = nll - new_nll;
                    self.values = candidate;
                    nll = new_nll;
                    self.nll_trace.push(nll);
                    iterations += 1;
                    damping /= 3.0;
                    if decrease < cfg.abs_tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                damping = escalate(damping);
                if damping > MAX_DAMPING {
                    // No damped step lowers the NLL: a numerical minimum.
                    converged = true;
                    break 'outer;
                }
            }
        }
        Ok(OptimizeReport { converged, iterations, final_nll: nll, final_damping: damping })
    }

    /// Every variable must appear in at least one factor.
    fn check_coverage(&self) -> Result<()> {
        let mut seen = vec![false; self.values.len()];
        for f in &self.factors {
            for k in f.keys() {
                seen[k.0] = true;
            }
        }
        match seen.iter().position(|s| !s) {
            Some(v) => Err(Error::NotIdentifiable(v)),
            None => Ok(()),
        }
    }

    fn stepped(&self, delta: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut off = 0;
        self.values
            .iter()
            .map(|v| {
                let out = v + delta.rows(off, v.len());
                off += v.len();
                out
            })
            .collect()
    }
}

fn escalate(damping: f64) -> f64 {
    if damping == 0.0 {
        FALLBACK_DAMPING
    } else {
        damping * 10.0
    }
}
