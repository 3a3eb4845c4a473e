use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_input, stream};
use crate::error::{Error, Result};
use crate::function::{Reparameterized, VectorFunction};
use crate::gaussian::Gaussian;
use crate::graph::{FactorGraph, OptimizerConfig, VarId};
use crate::linalg::symmetrize;
use crate::net::Network;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FgConfig {
    /// Number of input variable nodes.
    pub m: usize,
    /// Between-factor noise `Σ_f = ε·I`.
    pub epsilon: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for FgConfig {
    fn default() -> Self {
        Self { m: 4, epsilon: 1e-6, seed: 0, optimizer: OptimizerConfig::default() }
    }
}

impl FgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Config("factor-graph propagation needs m >= 1 input nodes".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("factor noise scale must be positive, got {}", self.epsilon)));
        }
        self.optimizer.validate()
    }
}

/// Factor-graph propagation.
///
/// Builds `m` input nodes, each with a Gaussian prior of covariance `Σ_in`
/// centred on its own input sample, one output node and one n-ary between
/// factor `Σ_j f(x_j) − m·y`. After optimization the output covariance is
/// `m·Cov(y) − Σ_f/m`, which for an affine `f` is exactly `J·Σ_in·Jᵀ`, and
/// for a nonlinear `f` averages the linearizations at the `m` nodes.
///
/// The samples are recentred on `μ` and rescaled to keep covariance `Σ_in`,
/// so `m = 1` reduces to first-order propagation at the mean. Singular
/// input covariances are handled in whitened coordinates on their range.
pub fn propagate_fg(net: &Network, input: &Gaussian, cfg: &FgConfig) -> Result<Gaussian> {
    check_input(net, input)?;
    cfg.validate()?;
    let eig = input.eigen();
    let scale = eig.max().max(0.0);
    let keep: Vec<usize> = (0..input.dim()).filter(|&i| eig.values[i] > RANK_TOL * scale && scale > 0.0).collect();
    if keep.is_empty() {
        let k = net.output_dim();
        return Gaussian::from_estimate(net.output(input.mean())?, DMatrix::zeros(k, k));
    }

    if keep.len() == input.dim() {
        let samples = input_samples(input.mean(), &input.sqrt_cov(), cfg);
        solve_graph(net, input.mean(), &samples, input.cov(), cfg)
    } else {
        // x = μ + U_r Λ_r^{1/2} z with z ~ N(0, I_r).
        let r = keep.len();
        let mut basis = DMatrix::zeros(input.dim(), r);
        for (c, &i) in keep.iter().enumerate() {
            basis.set_column(c, &(eig.vectors.column(i) * eig.values[i].sqrt()));
        }
        let f = Reparameterized::new(net, input.mean().clone(), basis)?;
        let zero = DVector::zeros(r);
        let samples = input_samples(&zero, &DMatrix::identity(r, r), cfg);
        solve_graph(&f, &zero, &samples, &DMatrix::identity(r, r), cfg)
    }
}

/// `m` seeded draws from `N(μ, S·Sᵀ)`, recentred to mean exactly `μ` and
/// rescaled by `√(m/(m−1))`. A single node sits at `μ`.
fn input_samples(mean: &DVector<f64>, root: &DMatrix<f64>, cfg: &FgConfig) -> Vec<DVector<f64>> {
    let m = cfg.m;
    if m == 1 {
        return vec![mean.clone()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream::FG_SAMPLES);
    let n = mean.len();
    let z = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
    let centre = z.column_mean();
    let gain = (m as f64 / (m as f64 - 1.0)).sqrt();
    (0..m).map(|j| mean + root * ((z.column(j) - &centre) * gain)).collect()
}

fn solve_graph(
    f: &dyn VectorFunction,
    mean: &DVector<f64>,
    samples: &[DVector<f64>],
    prior_cov: &DMatrix<f64>,
    cfg: &FgConfig,
) -> Result<Gaussian> {
    let m = samples.len();
    let k = f.output_dim();
    let noise = DMatrix::identity(k, k) * cfg.epsilon;
    let mut graph = FactorGraph::new();
    let inputs: Vec<VarId> = samples.iter().map(|s| graph.add_variable(s.clone())).collect::<Result<_>>()?;
    let output = graph.add_variable(f.eval(mean)?)?;
    for (&id, s) in inputs.iter().zip(samples) {
        graph.add_prior_factor(id, s.clone(), prior_cov)?;
    }
    graph.add_nary_between_factor(&inputs, output, f, &noise)?;
    graph.optimize(&cfg.optimizer)?;

    let marginal = graph.marginal_covariance(output, cfg.optimizer.solver)?;
    let cov = symmetrize(&(marginal * m as f64 - noise / m as f64));
    Gaussian::from_estimate(graph.value(output)?.clone(), cov)
}
