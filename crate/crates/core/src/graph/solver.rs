//! Linear solvers for the damped Gauss-Newton normal equations
//! `(Λ + λI)·δ = −Aᵀr` with `Λ = AᵀA`, and for marginal covariance
//! blocks of `Λ⁻¹`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::factor::LinearFactor;
use super::VarId;
use crate::error::{Error, Result};
use crate::linalg::{inverse_from_cholesky_factor, symmetrize};

/// A graph linearized at its current values.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub dims: Vec<usize>,
    pub factors: Vec<LinearFactor>,
}

impl LinearSystem {
    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    fn offsets(&self, order: &[usize]) -> Vec<usize> {
        let mut offsets = vec![0; self.dims.len()];
        let mut acc = 0;
        for &v in order {
            offsets[v] = acc;
            acc += self.dims[v];
        }
        offsets
    }

    /// Dense `Λ` and `g = −Aᵀr` with variable blocks laid out in `order`.
    fn assemble(&self, order: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.total_dim();
        let offsets = self.offsets(order);
        let mut info = DMatrix::zeros(n, n);
        let mut grad = DVector::zeros(n);
        for f in &self.factors {
            for (a, ja) in f.keys.iter().zip(&f.jacobians) {
                let oa = offsets[a.0];
                let mut g = grad.rows_mut(oa, ja.ncols());
                g -= ja.transpose() * &f.residual;
                for (b, jb) in f.keys.iter().zip(&f.jacobians) {
                    let ob = offsets[b.0];
                    let mut blk = info.view_mut((oa, ob), (ja.ncols(), jb.ncols()));
                    blk += ja.transpose() * jb;
                }
            }
        }
        (info, grad)
    }
}

pub trait LinearSolver {
    /// Damped Gauss-Newton step, stacked in variable order.
    fn solve(&self, sys: &LinearSystem, damping: f64) -> Result<DVector<f64>>;

    /// Block of `Λ⁻¹` for `var`.
    fn marginal(&self, sys: &LinearSystem, var: VarId) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Low-rank Schur solver when the structure allows, dense otherwise.
    #[default]
    Auto,
    Dense,
    LowRankSchur,
}

impl SolverKind {
    pub fn solver_for(self, sys: &LinearSystem) -> Box<dyn LinearSolver> {
        match self {
            SolverKind::Dense => Box::new(DenseCholesky),
            SolverKind::LowRankSchur => Box::new(LowRankSchur),
            SolverKind::Auto => {
                let n = sys.total_dim();
                let coupled: usize = sys.factors.iter().filter(|f| f.keys.len() > 1).map(|f| f.residual.len()).sum();
                let anchored = anchored_dims(sys);
                if 2 * (coupled + n - anchored) <= n {
                    Box::new(LowRankSchur)
                } else {
                    Box::new(DenseCholesky)
                }
            }
        }
    }
}

/// Total dimension of variables carrying at least one unary factor.
fn anchored_dims(sys: &LinearSystem) -> usize {
    let mut seen = vec![false; sys.dims.len()];
    for f in sys.factors.iter().filter(|f| f.keys.len() == 1) {
        seen[f.keys[0].0] = true;
    }
    seen.iter().zip(&sys.dims).filter(|(s, _)| **s).map(|(_, d)| d).sum()
}

fn damp(info: &mut DMatrix<f64>, damping: f64) {
    if damping > 0.0 {
        for i in 0..info.nrows() {
            info[(i, i)] += damping;
        }
    }
}

/// Dense Cholesky of the full information matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseCholesky;

impl LinearSolver for DenseCholesky {
    fn solve(&self, sys: &LinearSystem, damping: f64) -> Result<DVector<f64>> {
        let order: Vec<usize> = (0..sys.dims.len()).collect();
        let (mut info, grad) = sys.assemble(&order);
        damp(&mut info, damping);
        let chol = Cholesky::new(info).ok_or(Error::Singular { damping })?;
        Ok(chol.solve(&grad))
    }

    fn marginal(&self, sys: &LinearSystem, var: VarId) -> Result<DMatrix<f64>> {
        // With the target ordered last, the trailing block of L gives the
        // marginal: Σ_vv = (L_vv L_vvᵀ)⁻¹.
        let mut order: Vec<usize> = (0..sys.dims.len()).filter(|&v| v != var.0).collect();
        order.push(var.0);
        let (info, _) = sys.assemble(&order);
        let n = info.nrows();
        let d = sys.dims[var.0];
        let chol = Cholesky::new(info).ok_or(Error::NotIdentifiable(var.0))?;
        let l = chol.l();
        let lvv = l.view((n - d, n - d), (d, d)).into_owned();
        inverse_from_cholesky_factor(&lvv).ok_or(Error::NotIdentifiable(var.0))
    }
}

/// Exploits `Λ = D + UᵀU`, where `D` is block-diagonal (unary factors) and
/// `U` stacks the few rows of the multi-variable factors.
///
/// Free variables (those without an invertible unary block) are eliminated
/// first through a QR factorization of their stacked rows, which leaves the
/// anchored variables with a reweighted low-rank term `Uᵀ·M·U`. That system
/// is solved with the Woodbury identity, so every dense factorization is of
/// size `R` (coupled rows) or smaller than a single variable.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowRankSchur;

struct Anchored {
    chol: Cholesky<f64, Dyn>,
    /// `R × d` slice of `U`.
    u: DMatrix<f64>,
    /// `D⁻¹Uᵀ`.
    f: DMatrix<f64>,
    /// Unary part of the gradient.
    c: DVector<f64>,
}

/// Elimination of the free block `Y`: `[U_Y; J_Y; √λ·I] = Q·R_Y`.
struct FreeBlock {
    vars: Vec<usize>,
    offset: Vec<usize>,
    dim: usize,
    r: DMatrix<f64>,
    /// `Z = U_Y·R_Y⁻¹`.
    z: DMatrix<f64>,
    /// `R_Y⁻ᵀ(U_Yᵀ·r_b − c_Y)`.
    s: DVector<f64>,
}

struct Structured {
    dims: Vec<usize>,
    anchored: Vec<Option<Anchored>>,
    free: Option<FreeBlock>,
    rows: usize,
    /// `M = I − Z·Zᵀ = GᵀG`.
    g: DMatrix<f64>,
    /// `P = U_X·D⁻¹·U_Xᵀ`.
    p: DMatrix<f64>,
    /// `K = I + G·P·Gᵀ`.
    k_chol: Cholesky<f64, Dyn>,
    /// Coupled residual left after eliminating the free block, `r_b − Z·s`.
    h: DVector<f64>,
}

impl Structured {
    fn build(sys: &LinearSystem, damping: f64) -> Option<Self> {
        let nv = sys.dims.len();
        let rows: usize = sys.factors.iter().filter(|f| f.keys.len() > 1).map(|f| f.residual.len()).sum();
        let mut unary: Vec<DMatrix<f64>> = sys.dims.iter().map(|&d| DMatrix::identity(d, d) * damping).collect();
        let mut unary_rows: Vec<Vec<(&DMatrix<f64>, &DVector<f64>)>> = vec![Vec::new(); nv];
        let mut c: Vec<DVector<f64>> = sys.dims.iter().map(|&d| DVector::zeros(d)).collect();
        let mut u: Vec<DMatrix<f64>> = sys.dims.iter().map(|&d| DMatrix::zeros(rows, d)).collect();
        let mut r_b = DVector::zeros(rows);
        let mut row = 0;
        for f in &sys.factors {
            if f.keys.len() == 1 {
                let (v, j) = (f.keys[0].0, &f.jacobians[0]);
                unary[v] += j.transpose() * j;
                c[v] -= j.transpose() * &f.residual;
                unary_rows[v].push((j, &f.residual));
            } else {
                let h = f.residual.len();
                for (k, j) in f.keys.iter().zip(&f.jacobians) {
                    let mut blk = u[k.0].rows_mut(row, h);
                    blk += j;
                }
                r_b.rows_mut(row, h).copy_from(&f.residual);
                row += h;
            }
        }

        let mut anchored = Vec::with_capacity(nv);
        let mut free_vars = Vec::new();
        for v in 0..nv {
            let chol = if unary_rows[v].is_empty() { None } else { well_conditioned_cholesky(&unary[v]) };
            match chol {
                Some(chol) => {
                    let f = chol.solve(&u[v].transpose());
                    anchored.push(Some(Anchored { chol, u: std::mem::take(&mut u[v]), f, c: std::mem::take(&mut c[v]) }));
                }
                None => {
                    free_vars.push(v);
                    anchored.push(None);
                }
            }
        }

        let free = if free_vars.is_empty() {
            None
        } else {
            Some(FreeBlock::build(&sys.dims, free_vars, &u, &unary_rows, &c, &r_b, damping)?)
        };

        let m = match &free {
            Some(fb) => DMatrix::identity(rows, rows) - &fb.z * fb.z.transpose(),
            None => DMatrix::identity(rows, rows),
        };
        let g = psd_factor(&m);
        let mut p = DMatrix::zeros(rows, rows);
        for a in anchored.iter().flatten() {
            p += &a.u * &a.f;
        }
        let p = symmetrize(&p);
        let k = DMatrix::identity(rows, rows) + &g * &p * g.transpose();
        let k_chol = Cholesky::new(symmetrize(&k))?;
        let h = match &free {
            Some(fb) => &r_b - &fb.z * &fb.s,
            None => r_b,
        };
        Some(Self { dims: sys.dims.clone(), anchored, free, rows, g, p, k_chol, h })
    }

    /// `(D + U_XᵀMU_X)⁻¹ q` for the anchored variables.
    fn solve_anchored(&self, q: &[Option<DVector<f64>>]) -> Vec<Option<DVector<f64>>> {
        let mut t = DVector::zeros(self.rows);
        let a: Vec<Option<DVector<f64>>> = self
            .anchored
            .iter()
            .zip(q)
            .map(|(blk, qv)| {
                blk.as_ref().map(|b| {
                    let av = b.chol.solve(qv.as_ref().unwrap());
                    t += &b.u * &av;
                    av
                })
            })
            .collect();
        let w = self.g.transpose() * self.k_chol.solve(&(&self.g * t));
        a.into_iter().zip(&self.anchored).map(|(av, blk)| av.map(|av| av - &blk.as_ref().unwrap().f * &w)).collect()
    }

    /// `U_X·Cov_XX·U_Xᵀ = P − P·Gᵀ·K⁻¹·G·P`.
    fn coupled_covariance(&self) -> DMatrix<f64> {
        let gp = &self.g * &self.p;
        &self.p - gp.transpose() * self.k_chol.solve(&gp)
    }
}

impl FreeBlock {
    fn build(
        dims: &[usize],
        vars: Vec<usize>,
        u: &[DMatrix<f64>],
        unary_rows: &[Vec<(&DMatrix<f64>, &DVector<f64>)>],
        c: &[DVector<f64>],
        r_b: &DVector<f64>,
        damping: f64,
    ) -> Option<Self> {
        let rows = r_b.len();
        let mut offset = vec![usize::MAX; dims.len()];
        let mut dim = 0;
        for &v in &vars {
            offset[v] = dim;
            dim += dims[v];
        }
        let extra: usize = vars.iter().flat_map(|&v| unary_rows[v].iter().map(|(j, _)| j.nrows())).sum();
        let damp_rows = if damping > 0.0 { dim } else { 0 };
        let total = rows + extra + damp_rows;
        if total < dim {
            return None;
        }
        let mut a = DMatrix::zeros(total, dim);
        let mut u_y = DMatrix::zeros(rows, dim);
        let mut c_y = DVector::zeros(dim);
        let mut row = rows;
        for &v in &vars {
            let (o, d) = (offset[v], dims[v]);
            u_y.columns_mut(o, d).copy_from(&u[v]);
            c_y.rows_mut(o, d).copy_from(&c[v]);
            for (j, _) in &unary_rows[v] {
                a.view_mut((row, o), (j.nrows(), d)).copy_from(j);
                row += j.nrows();
            }
        }
        a.view_mut((0, 0), (rows, dim)).copy_from(&u_y);
        if damp_rows > 0 {
            a.view_mut((row, 0), (dim, dim)).fill_diagonal(damping.sqrt());
        }
        let r = a.qr().r();
        let scale = r.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 || r.diagonal().iter().any(|x| x.abs() <= 1e-12 * scale) {
            return None;
        }
        let z = r.tr_solve_upper_triangular(&u_y.transpose())?.transpose();
        let s = r.tr_solve_upper_triangular(&(u_y.transpose() * r_b - c_y))?;
        Some(Self { vars, offset, dim, r, z, s })
    }
}

/// `G` with `GᵀG = M` for a symmetric PSD `M`.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let e = symmetrize(m).symmetric_eigen();
    let root = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    DMatrix::from_diagonal(&root) * e.eigenvectors.transpose()
}

/// Cholesky that refuses blocks whose pivots collapse relative to the
/// largest diagonal entry.
fn well_conditioned_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = m.diagonal().iter().fold(0.0f64, |a, &b| a.max(b));
    if scale <= 0.0 {
        return None;
    }
    let c = Cholesky::new(m.clone())?;
    let min_pivot = c.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b));
    (min_pivot * min_pivot > 1e-14 * scale).then_some(c)
}

impl LinearSolver for LowRankSchur {
    fn solve(&self, sys: &LinearSystem, damping: f64) -> Result<DVector<f64>> {
        let st = Structured::build(sys, damping).ok_or(Error::Singular { damping })?;
        let q: Vec<Option<DVector<f64>>> = st.anchored.iter().map(|a| a.as_ref().map(|a| &a.c - a.u.transpose() * &st.h)).collect();
        let delta_x = st.solve_anchored(&q);

        let mut out = DVector::zeros(sys.total_dim());
        let mut offsets = Vec::with_capacity(st.dims.len());
        let mut off = 0;
        for &d in &st.dims {
            offsets.push(off);
            off += d;
        }
        let mut ux_dx = DVector::zeros(st.rows);
        for (v, (dx, blk)) in delta_x.iter().zip(&st.anchored).enumerate() {
            if let (Some(dx), Some(b)) = (dx, blk) {
                ux_dx += &b.u * dx;
                out.rows_mut(offsets[v], dx.len()).copy_from(dx);
            }
        }
        if let Some(fb) = &st.free {
            // δ_Y = −R_Y⁻¹ (s + Zᵀ·U_X·δ_X).
            let rhs = &fb.s + fb.z.transpose() * ux_dx;
            let dy = -fb.r.solve_upper_triangular(&rhs).ok_or(Error::Singular { damping })?;
            for &v in &fb.vars {
                out.rows_mut(offsets[v], st.dims[v]).copy_from(&dy.rows(fb.offset[v], st.dims[v]));
            }
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Singular { damping });
        }
        Ok(out)
    }

    fn marginal(&self, sys: &LinearSystem, var: VarId) -> Result<DMatrix<f64>> {
        let v = var.0;
        let st = Structured::build(sys, 0.0).ok_or(Error::NotIdentifiable(v))?;
        let out = match (&st.anchored[v], &st.free) {
            (Some(b), _) => {
                // D_v⁻¹ − F_v·Gᵀ·K⁻¹·G·F_vᵀ.
                let d = st.dims[v];
                let gf = &st.g * b.f.transpose();
                b.chol.solve(&DMatrix::identity(d, d)) - gf.transpose() * st.k_chol.solve(&gf)
            }
            (None, Some(fb)) => {
                // R_Y⁻¹R_Y⁻ᵀ + T·(U_X·Cov_XX·U_Xᵀ)·Tᵀ with T = R_Y⁻¹Zᵀ.
                let (o, d) = (fb.offset[v], st.dims[v]);
                let r_inv = fb.r.solve_upper_triangular(&DMatrix::identity(fb.dim, fb.dim)).ok_or(Error::NotIdentifiable(v))?;
                let r_inv = r_inv.rows(o, d).into_owned();
                let t = &r_inv * fb.z.transpose();
                &r_inv * r_inv.transpose() + &t * st.coupled_covariance() * t.transpose()
            }
            (None, None) => return Err(Error::NotIdentifiable(v)),
        };
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotIdentifiable(v));
        }
        Ok(symmetrize(&out))
    }
}
