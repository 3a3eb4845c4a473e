use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::function::FnFunction;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(xs)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn affine(a: DMatrix<f64>, b: DVector<f64>) -> impl VectorFunction {
    let (a1, a2, b1) = (a.clone(), a.clone(), b);
    FnFunction::new(a.ncols(), a.nrows(), move |x| &a1 * x + &b1, move |_| a2.clone())
}

/// Dense whitened stacked system `A·X ≈ z` for a linear-Gaussian graph,
/// solved by Householder QR.
struct StackedOracle {
    rows: Vec<(Vec<(usize, DMatrix<f64>)>, DVector<f64>, DMatrix<f64>)>,
    offsets: Vec<usize>,
    n: usize,
}

impl StackedOracle {
    fn new(dims: &[usize]) -> Self {
        let mut offsets = Vec::new();
        let mut n = 0;
        for d in dims {
            offsets.push(n);
            n += d;
        }
        Self { rows: Vec::new(), offsets, n }
    }

    /// Adds `Σ_k B_k x_k − z ~ N(0, cov)`.
    fn add(&mut self, blocks: Vec<(usize, DMatrix<f64>)>, z: DVector<f64>, cov: DMatrix<f64>) {
        self.rows.push((blocks, z, cov));
    }

    fn solve(&self) -> (DVector<f64>, DMatrix<f64>) {
        let total: usize = self.rows.iter().map(|r| r.1.len()).sum();
        let mut a = DMatrix::zeros(total, self.n);
        let mut z = DVector::zeros(total);
        let mut row = 0;
        for (blocks, zz, cov) in &self.rows {
            let h = zz.len();
            let e = cov.clone().symmetric_eigen();
            let w = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.sqrt())) * e.eigenvectors.transpose();
            for (var, b) in blocks {
                let mut blk = a.view_mut((row, self.offsets[*var]), (h, b.ncols()));
                blk += &w * b;
            }
            z.rows_mut(row, h).copy_from(&(&w * zz));
            row += h;
        }
        // Householder QR: x = R⁻¹Qᵀz and (AᵀA)⁻¹ = R⁻¹R⁻ᵀ.
        let qr = a.qr();
        let r_inv = qr.r().try_inverse().expect("full column rank");
        let x = &r_inv * qr.q().transpose() * z;
        let cov = &r_inv * r_inv.transpose();
        (x, cov)
    }
}

#[test]
fn product_of_two_priors() {
    let mut g = FactorGraph::new();
    let x = g.add_variable(v(&[5.0])).unwrap();
    g.add_prior_factor(x, v(&[0.0]), &DMatrix::identity(1, 1)).unwrap();
    g.add_prior_factor(x, v(&[2.0]), &DMatrix::identity(1, 1)).unwrap();
    let report = g.optimize(&OptimizerConfig::default()).unwrap();
    assert!(report.converged);
    assert!((g.value(x).unwrap()[0] - 1.0).abs() < 1e-8);
    for kind in [SolverKind::Dense, SolverKind::LowRankSchur] {
        let c = g.marginal_covariance(x, kind).unwrap();
        assert!((c[(0, 0)] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn nary_jacobian_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 2, 3);
    let f = affine(a.clone(), v(&[0.5, -1.0]));
    let values = vec![v(&[1.0, 2.0, 3.0]), v(&[0.0, 1.0, 0.0]), v(&[-1.0, 0.5, 2.0]), v(&[0.3, 0.4])];
    let keys = [VarId(0), VarId(1), VarId(2)];
    let factor = NAryBetweenFactor::new(&keys, VarId(3), &f, &DMatrix::identity(2, 2)).unwrap();
    let (r, j) = factor.raw_linearize(&values).unwrap();
    assert_eq!(j.len(), 4);
    for jk in &j[..3] {
        assert!((jk - &a).abs().max() < 1e-15);
    }
    assert!((&j[3] + DMatrix::identity(2, 2) * 3.0).abs().max() < 1e-15);
    let expected: DVector<f64> = values[..3].iter().map(|x| &a * x + v(&[0.5, -1.0]) - &values[3]).sum();
    assert!((r - expected).abs().max() < 1e-12);
    // Whitening by the identity leaves the linearization unchanged.
    let lin = factor.linearize(&values).unwrap();
    assert!((&lin.jacobians[0] - &a).abs().max() < 1e-15);
}

#[test]
fn nary_factor_rejects_repeated_keys() {
    let f = affine(DMatrix::identity(2, 2), DVector::zeros(2));
    assert!(NAryBetweenFactor::new(&[VarId(0), VarId(0)], VarId(1), &f, &DMatrix::identity(2, 2)).is_err());
    assert!(NAryBetweenFactor::new(&[], VarId(1), &f, &DMatrix::identity(2, 2)).is_err());
}

/// The propagation-shaped graph: m input nodes with priors, one free output
/// node and one n-ary factor through an affine map.
fn linear_graph_case(seed: u64, m: usize, n: usize, k: usize, output_prior: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_matrix(&mut rng, k, n);
    let b = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
    let f = affine(a.clone(), b.clone());
    let sigma = random_spd(&mut rng, n);
    let sigma_f = random_spd(&mut rng, k) * 0.1;
    let means: Vec<DVector<f64>> = (0..m).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))).collect();

    let mut dims = vec![n; m];
    dims.push(k);
    let mut oracle = StackedOracle::new(&dims);
    let mut g = FactorGraph::new();
    let xs: Vec<VarId> = (0..m).map(|_| g.add_variable(DVector::zeros(n)).unwrap()).collect();
    let y = g.add_variable(DVector::zeros(k)).unwrap();
    for (j, mu) in means.iter().enumerate() {
        g.add_prior_factor(xs[j], mu.clone(), &sigma).unwrap();
        oracle.add(vec![(j, DMatrix::identity(n, n))], mu.clone(), sigma.clone());
    }
    g.add_nary_between_factor(&xs, y, &f, &sigma_f).unwrap();
    let mut blocks: Vec<(usize, DMatrix<f64>)> = (0..m).map(|j| (j, a.clone())).collect();
    blocks.push((m, DMatrix::identity(k, k) * -(m as f64)));
    oracle.add(blocks, -b.clone() * m as f64, sigma_f.clone());
    if output_prior {
        let mu_y = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        g.add_prior_factor(y, mu_y.clone(), &DMatrix::identity(k, k)).unwrap();
        oracle.add(vec![(m, DMatrix::identity(k, k))], mu_y, DMatrix::identity(k, k));
    }

    let (x_star, cov_star) = oracle.solve();
    for kind in [SolverKind::Dense, SolverKind::LowRankSchur] {
        let mut gg = FactorGraph::new();
        std::mem::swap(&mut gg, &mut g);
        for id in 0..=m {
            gg.set_value(VarId(id), DVector::zeros(dims[id])).unwrap();
        }
        let cfg = OptimizerConfig { solver: kind, ..Default::default() };
        let rep = gg.optimize(&cfg).unwrap();
        assert!(rep.converged, "{kind:?}");
        let mut off = 0;
        for id in 0..=m {
            let d = dims[id];
            let got = gg.value(VarId(id)).unwrap();
            let want = x_star.rows(off, d);
            assert!((got - &want).abs().max() < 1e-6, "{kind:?} var {id}: {:e} after {} iterations, nll {:e}", (got - &want).abs().max(), rep.iterations, rep.final_nll);
            let c = gg.marginal_covariance(VarId(id), kind).unwrap();
            let cw = cov_star.view((off, off), (d, d));
            assert!((&c - cw).abs().max() < 1e-8 * (1.0 + cw.abs().max()), "{kind:?} marginal {id}: {:e} vs scale {:e}", (&c - cw).abs().max(), cw.abs().max());
            off += d;
        }
        std::mem::swap(&mut gg, &mut g);
    }
}

#[test]
fn linear_gaussian_matches_stacked_least_squares() {
    linear_graph_case(3, 4, 5, 3, false);
    linear_graph_case(4, 1, 3, 3, false);
    linear_graph_case(5, 3, 4, 6, true);
}

#[test]
fn cubic_map_matches_grid_search() {
    let f = FnFunction::new(1, 1, |x: &DVector<f64>| x.map(|t| t.powi(3)), |x: &DVector<f64>| DMatrix::from_element(1, 1, 3.0 * x[0] * x[0]));
    let (mu_x, sx, mu_y, sy, sf) = (0.5, 0.3, 2.0, 0.5, 0.1);
    let mut g = FactorGraph::new();
    let x = g.add_variable(v(&[mu_x])).unwrap();
    let y = g.add_variable(v(&[0.0])).unwrap();
    g.add_prior_factor(x, v(&[mu_x]), &DMatrix::from_element(1, 1, sx * sx)).unwrap();
    g.add_prior_factor(y, v(&[mu_y]), &DMatrix::from_element(1, 1, sy * sy)).unwrap();
    g.add_nary_between_factor(&[x], y, &f, &DMatrix::from_element(1, 1, sf * sf)).unwrap();
    assert!(g.optimize(&OptimizerConfig::default()).unwrap().converged);

    // For fixed x the optimal y is a precision-weighted average, so the grid
    // only runs over x.
    let cost = |t: f64| {
        let c = t.powi(3);
        let yy = (c / (sf * sf) + mu_y / (sy * sy)) / (1.0 / (sf * sf) + 1.0 / (sy * sy));
        ((t - mu_x) / sx).powi(2) + ((c - yy) / sf).powi(2) + ((yy - mu_y) / sy).powi(2)
    };
    let best = (0..=20_000).map(|i| i as f64 * 1e-4).min_by(|a, b| cost(*a).total_cmp(&cost(*b))).unwrap();
    assert!((g.value(x).unwrap()[0] - best).abs() < 1e-3);
}

#[test]
fn insertion_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_matrix(&mut rng, 2, 3);
    let f = FnFunction::new(
        3,
        2,
        {
            let a = a.clone();
            move |x: &DVector<f64>| (&a * x).map(f64::tanh)
        },
        {
            let a = a.clone();
            move |x: &DVector<f64>| {
                let d = (&a * x).map(|t| 1.0 - t.tanh().powi(2));
                DMatrix::from_diagonal(&d) * &a
            }
        },
    );
    let sigma = random_spd(&mut rng, 3);
    let means = [v(&[0.1, 0.2, -0.3]), v(&[1.0, -0.5, 0.2]), v(&[-0.4, 0.3, 0.9])];

    let solve = |reverse: bool| {
        let mut g = FactorGraph::new();
        let mut ids = vec![VarId(0); 4];
        let order: Vec<usize> = if reverse { vec![3, 2, 1, 0] } else { vec![0, 1, 2, 3] };
        for &i in &order {
            ids[i] = g.add_variable(DVector::zeros(if i == 3 { 2 } else { 3 })).unwrap();
        }
        let mut prior_order = vec![0, 1, 2];
        if reverse {
            prior_order.reverse();
            g.add_nary_between_factor(&ids[..3], ids[3], &f, &(DMatrix::identity(2, 2) * 1e-2)).unwrap();
        }
        for &i in &prior_order {
            g.add_prior_factor(ids[i], means[i].clone(), &sigma).unwrap();
        }
        if !reverse {
            g.add_nary_between_factor(&ids[..3], ids[3], &f, &(DMatrix::identity(2, 2) * 1e-2)).unwrap();
        }
        g.optimize(&OptimizerConfig::default()).unwrap();
        (g.value(ids[3]).unwrap().clone(), g.marginal_covariance(ids[3], SolverKind::Dense).unwrap())
    };
    let (m1, c1) = solve(false);
    let (m2, c2) = solve(true);
    assert!((m1 - m2).abs().max() < 1e-9);
    assert!((c1 - c2).abs().max() < 1e-9);
}

#[test]
fn already_at_map_takes_at_most_one_step() {
    let mut g = FactorGraph::new();
    let x = g.add_variable(v(&[1.0, 2.0])).unwrap();
    g.add_prior_factor(x, v(&[1.0, 2.0]), &DMatrix::identity(2, 2)).unwrap();
    let rep = g.optimize(&OptimizerConfig::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.iterations <= 1);
    assert_eq!(rep.final_nll, 0.0);
}

#[test]
fn unconstrained_variable_is_singular() {
    let mut g = FactorGraph::new();
    let x = g.add_variable(v(&[0.0])).unwrap();
    let y = g.add_variable(v(&[0.0])).unwrap();
    g.add_prior_factor(x, v(&[1.0]), &DMatrix::identity(1, 1)).unwrap();
    let err = g.optimize(&OptimizerConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NotIdentifiable(1)), "{err}");
    let err = g.marginal_covariance(y, SolverKind::Dense).unwrap_err();
    assert!(matches!(err, Error::NotIdentifiable(1)));
    assert!(g.marginal_covariance(VarId(7), SolverKind::Dense).is_err());
}

#[test]
fn nan_residual_is_a_numeric_error() {
    let f = FnFunction::new(1, 1, |_: &DVector<f64>| v(&[f64::NAN]), |_: &DVector<f64>| DMatrix::identity(1, 1));
    let mut g = FactorGraph::new();
    let x = g.add_variable(v(&[0.0])).unwrap();
    let y = g.add_variable(v(&[0.0])).unwrap();
    g.add_prior_factor(x, v(&[0.0]), &DMatrix::identity(1, 1)).unwrap();
    g.add_nary_between_factor(&[x], y, &f, &DMatrix::identity(1, 1)).unwrap();
    assert!(matches!(g.optimize(&OptimizerConfig::default()), Err(Error::Numeric(_))));
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut g = FactorGraph::new();
    assert!(g.add_variable(DVector::zeros(0)).is_err());
    let x = g.add_variable(v(&[0.0, 0.0])).unwrap();
    assert!(g.add_prior_factor(x, v(&[0.0]), &DMatrix::identity(1, 1)).is_err());
    assert!(g.add_prior_factor(VarId(3), v(&[0.0, 0.0]), &DMatrix::identity(2, 2)).is_err());
    let not_spd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(g.add_prior_factor(x, v(&[0.0, 0.0]), &not_spd).is_err());
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 1e-6, 0.0, 1.0]);
    assert!(g.add_prior_factor(x, v(&[0.0, 0.0]), &asym).is_err());
    let bad = OptimizerConfig { abs_tol: -1.0, ..Default::default() };
    assert!(g.optimize(&bad).is_err());
}

#[test]
fn undamped_gauss_newton_converges() {
    let f = FnFunction::new(1, 1, |x: &DVector<f64>| x.map(|t| t.powi(3)), |x: &DVector<f64>| DMatrix::from_element(1, 1, 3.0 * x[0] * x[0]));
    let mut g = FactorGraph::new();
    let x = g.add_variable(v(&[1.0])).unwrap();
    let y = g.add_variable(v(&[0.0])).unwrap();
    g.add_prior_factor(x, v(&[1.0]), &DMatrix::identity(1, 1)).unwrap();
    g.add_prior_factor(y, v(&[8.0]), &DMatrix::identity(1, 1)).unwrap();
    g.add_nary_between_factor(&[x], y, &f, &DMatrix::from_element(1, 1, 0.01)).unwrap();
    let cfg = OptimizerConfig { damping_init: 0.0, ..Default::default() };
    let rep = g.optimize(&cfg).unwrap();
    assert!(rep.converged);
    let trace = g.nll_trace();
    assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    let dump = g.dump().unwrap();
    assert_eq!(dump["variables"].as_array().unwrap().len(), 2);
    assert_eq!(dump["factors"][2]["kind"], "nary-between");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schur_matches_dense(seed in 0u64..10_000, m in 1usize..5, n in 1usize..6, k in 1usize..4, output_prior: bool) {
        linear_graph_case(seed, m, n, k, output_prior);
    }

    #[test]
    fn nll_trace_never_increases(seed in 0u64..10_000, scale in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, 2, 2) * scale;
        let f = FnFunction::new(
            2,
            2,
            { let a = a.clone(); move |x: &DVector<f64>| (&a * x).map(|t| t.sin()) },
            { let a = a.clone(); move |x: &DVector<f64>| DMatrix::from_diagonal(&(&a * x).map(|t| t.cos())) * &a },
        );
        let mut g = FactorGraph::new();
        let xs: Vec<VarId> = (0..3).map(|_| g.add_variable(DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0))).unwrap()).collect();
        let y = g.add_variable(DVector::zeros(2)).unwrap();
        for &x in &xs {
            let mu = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            g.add_prior_factor(x, mu, &DMatrix::identity(2, 2)).unwrap();
        }
        g.add_prior_factor(y, DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)), &DMatrix::identity(2, 2)).unwrap();
        g.add_nary_between_factor(&xs, y, &f, &(DMatrix::identity(2, 2) * 0.05)).unwrap();
        let rep = g.optimize(&OptimizerConfig::default()).unwrap();
        let trace = g.nll_trace();
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(trace.len(), rep.iterations + 1);
    }
}

