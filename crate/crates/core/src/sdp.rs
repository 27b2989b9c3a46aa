//! Block-diagonal semidefinite programs and a primal-dual interior-point
//! solver.
//!
//! Problems are stored in the standard primal form
//!
//! ```text
//! minimize    <C, X> + c_f^T x_f
//! subject to  <A_i, X> + (F x_f)_i = b_i,   i = 1..m
//!             X = diag(X_1, ..., X_k) PSD,  x_f free
//! ```
//!
//! with dual `maximize b^T y  s.t.  C - sum_i y_i A_i = S PSD, F^T y = c_f`.
//!
//! The solver runs a Mehrotra predictor-corrector on the homogeneous
//! self-dual embedding of this pair with Nesterov-Todd scaling, so it
//! returns either an optimal pair or a certificate of primal or dual
//! infeasibility. Linear algebra is dense per block; the Newton system is
//! the Schur complement bordered by the free-variable columns.

use std::fmt::Write as _;
use std::path::Path;

use faer::linalg::solvers::{Lblt, Llt, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::systems::fmt_f64;

/// Symmetric sparse matrix stored by its upper triangle. An entry `(i, j, v)`
/// with `i < j` stands for both `A[i][j]` and `A[j][i]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymSparse {
    entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        match self.entries.iter_mut().find(|e| e.0 == i && e.1 == j) {
            Some(e) => e.2 += v,
            None => self.entries.push((i, j, v)),
        }
    }

    fn canonicalize(&mut self) {
        self.entries.retain(|e| e.2 != 0.0);
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    }

    /// `<A, X>` for symmetric dense `X`.
    pub fn inner(&self, x: MatRef<'_, f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * x[(i, i)] } else { 2.0 * v * x[(i, j)] })
            .sum()
    }

    fn add_scaled_to(&self, s: f64, out: &mut Mat<f64>) {
        for &(i, j, v) in &self.entries {
            out[(i, j)] += s * v;
            if i != j {
                out[(j, i)] += s * v;
            }
        }
    }

    pub fn to_dense(&self, n: usize) -> Mat<f64> {
        let mut m = Mat::zeros(n, n);
        self.add_scaled_to(1.0, &mut m);
        m
    }

    fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, e| a.max(e.2.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    block_sizes: Vec<usize>,
    cost: Vec<SymSparse>,
    /// `coeffs[block][constraint]`
    coeffs: Vec<Vec<SymSparse>>,
    /// `free_columns[var]` lists `(constraint, value)`
    free_columns: Vec<Vec<(usize, f64)>>,
    free_cost: Vec<f64>,
    rhs: Vec<f64>,
    sense: Sense,
}

impl SdpProblem {
    pub fn new(block_sizes: Vec<usize>, num_constraints: usize) -> Self {
        let k = block_sizes.len();
        Self {
            coeffs: (0..k).map(|_| vec![SymSparse::default(); num_constraints]).collect(),
            cost: vec![SymSparse::default(); k],
            block_sizes,
            free_columns: Vec::new(),
            free_cost: Vec::new(),
            rhs: vec![0.0; num_constraints],
            sense: Sense::Minimize,
        }
    }

    pub fn num_constraints(&self) -> usize {
        self.rhs.len()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn num_free(&self) -> usize {
        self.free_cost.len()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn set_sense(&mut self, sense: Sense) {
        self.sense = sense;
    }

    pub fn set_rhs(&mut self, constraint: usize, v: f64) {
        self.rhs[constraint] = v;
    }

    /// Adds `v` to `A_constraint[block][(i, j)]` (and its mirror).
    pub fn add_constraint_entry(&mut self, constraint: usize, block: usize, i: usize, j: usize, v: f64) {
        assert!(i < self.block_sizes[block] && j < self.block_sizes[block], "entry outside block");
        self.coeffs[block][constraint].add(i, j, v);
    }

    pub fn add_cost_entry(&mut self, block: usize, i: usize, j: usize, v: f64) {
        assert!(i < self.block_sizes[block] && j < self.block_sizes[block], "entry outside block");
        self.cost[block].add(i, j, v);
    }

    /// Appends a free scalar variable with objective coefficient `cost`.
    pub fn add_free_variable(&mut self, cost: f64) -> usize {
        self.free_cost.push(cost);
        self.free_columns.push(Vec::new());
        self.free_cost.len() - 1
    }

    pub fn add_free_entry(&mut self, constraint: usize, var: usize, v: f64) {
        let col = &mut self.free_columns[var];
        match col.iter_mut().find(|e| e.0 == constraint) {
            Some(e) => e.1 += v,
            None => col.push((constraint, v)),
        }
    }

    pub fn constraint_matrix(&self, block: usize, constraint: usize) -> &SymSparse {
        &self.coeffs[block][constraint]
    }

    pub fn cost_matrix(&self, block: usize) -> &SymSparse {
        &self.cost[block]
    }

    pub fn free_column(&self, var: usize) -> &[(usize, f64)] {
        &self.free_columns[var]
    }

    pub fn free_cost(&self) -> &[f64] {
        &self.free_cost
    }

    fn canonicalize(&mut self) {
        for b in &mut self.coeffs {
            for a in b {
                a.canonicalize();
            }
        }
        for c in &mut self.cost {
            c.canonicalize();
        }
        for col in &mut self.free_columns {
            col.retain(|e| e.1 != 0.0);
            col.sort_by_key(|e| e.0);
        }
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        let mut m = self.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        m = self.free_cost.iter().fold(m, |a, v| a.max(v.abs()));
        for c in &self.cost {
            m = m.max(c.max_abs());
        }
        for b in &self.coeffs {
            for a in b {
                m = m.max(a.max_abs());
            }
        }
        for col in &self.free_columns {
            m = col.iter().fold(m, |a, e| a.max(e.1.abs()));
        }
        m
    }

    /// Primal objective of a candidate `(X, x_f)` in the problem's sense.
    pub fn objective(&self, x: &[Mat<f64>], free: &[f64]) -> f64 {
        let v: f64 = self.cost.iter().zip(x).map(|(c, xb)| c.inner(xb.as_ref())).sum::<f64>()
            + self.free_cost.iter().zip(free).map(|(c, v)| c * v).sum::<f64>();
        v
    }

    /// `A(X) + F x_f - b`.
    pub fn primal_residual(&self, x: &[Mat<f64>], free: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.rhs.iter().map(|b| -b).collect();
        for (b, xb) in x.iter().enumerate() {
            for (i, a) in self.coeffs[b].iter().enumerate() {
                if !a.is_empty() {
                    r[i] += a.inner(xb.as_ref());
                }
            }
        }
        for (k, col) in self.free_columns.iter().enumerate() {
            for &(i, v) in col {
                r[i] += v * free[k];
            }
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// The primal constraints admit no PSD solution.
    Infeasible,
    /// The dual is infeasible; the primal objective is unbounded.
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `|A(X) + F x_f - b| / max(1, |b|)`
    pub primal: f64,
    /// `|(A*(y) + S - C, F^T y - c_f)| / max(1, |C| + |c_f|)`
    pub dual: f64,
    /// `<X, S>`
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<Mat<f64>>,
    pub s: Vec<Mat<f64>>,
    pub y: Vec<f64>,
    pub free: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl SdpSolution {
    pub fn min_eigenvalue(&self, block: usize) -> f64 {
        min_eig(self.x[block].as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Print one progress line per iteration to stderr.
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 100, verbose: false }
    }
}

/// `tau / kappa` below which the embedding is declared to have no
/// finite solution.
const TAU_KAPPA_THRESHOLD: f64 = 1e-8;
const STEP_FRACTION: f64 = 0.99;

fn min_eig(m: MatRef<'_, f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.self_adjoint_eigenvalues(Side::Lower).map(|v| v[0]).unwrap_or(f64::NAN)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mat_inner(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * b[(i, j)];
        }
    }
    s
}

fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Nesterov-Todd scaling of one block: `X = R diag(lambda) R^T`,
/// `S = R^{-T} diag(lambda) R^{-1}`, `W = R R^T`.
struct NtScaling {
    r: Mat<f64>,
    r_inv: Mat<f64>,
    w: Mat<f64>,
    lambda: Vec<f64>,
}

fn nt_scaling(x: &Mat<f64>, s: &Mat<f64>) -> Option<NtScaling> {
    let n = x.nrows();
    let lx = Llt::new(x.as_ref(), Side::Lower).ok()?;
    let ls = Llt::new(s.as_ref(), Side::Lower).ok()?;
    let lx = lx.L().to_owned();
    let ls = ls.L().to_owned();
    let prod = ls.transpose() * &lx;
    let svd = prod.svd().ok()?;
    let lambda: Vec<f64> = (0..n).map(|i| svd.S()[i]).collect();
    if lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return None;
    }
    let v = svd.V().to_owned();
    let r = Mat::from_fn(n, n, |i, j| {
        let mut acc = 0.0;
        for k in 0..n {
            acc += lx[(i, k)] * v[(k, j)];
        }
        acc / lambda[j].sqrt()
    });
    // R^{-1} = diag(sqrt(lambda)) V^T Lx^{-1}
    let mut lx_inv = Mat::<f64>::identity(n, n);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(lx.as_ref(), lx_inv.as_mut(), faer::Par::Seq);
    let vt_lxinv = v.transpose() * &lx_inv;
    let r_inv = Mat::from_fn(n, n, |i, j| lambda[i].sqrt() * vt_lxinv[(i, j)]);
    let mut w = &r * r.transpose();
    symmetrize(&mut w);
    Some(NtScaling { r, r_inv, w, lambda })
}

/// `W A W` for sparse symmetric `A`.
fn sandwich_sparse(w: &Mat<f64>, a: &SymSparse) -> Mat<f64> {
    let n = w.nrows();
    let mut out = Mat::<f64>::zeros(n, n);
    for &(r, c, v) in a.entries() {
        for j in 0..n {
            let wcj = w[(c, j)];
            let wrj = w[(r, j)];
            for i in 0..n {
                if r == c {
                    out[(i, j)] += v * w[(i, r)] * wrj;
                } else {
                    out[(i, j)] += v * (w[(i, r)] * wcj + w[(i, c)] * wrj);
                }
            }
        }
    }
    out
}

fn sandwich(w: &Mat<f64>, a: &Mat<f64>) -> Mat<f64> {
    let mut out = w * a * w;
    symmetrize(&mut out);
    out
}

/// Largest `alpha` with `lambda + alpha * d` PSD, where `lambda` is the
/// diagonal scaled point.
fn max_step(lambda: &[f64], d: &Mat<f64>) -> f64 {
    let n = lambda.len();
    if n == 0 {
        return f64::INFINITY;
    }
    let scaled = Mat::from_fn(n, n, |i, j| d[(i, j)] / (lambda[i] * lambda[j]).sqrt());
    let m = min_eig(scaled.as_ref());
    if m < 0.0 { -1.0 / m } else { f64::INFINITY }
}

struct Direction {
    dx: Vec<Mat<f64>>,
    ds: Vec<Mat<f64>>,
    dy: Vec<f64>,
    dfree: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

struct Iterate {
    x: Vec<Mat<f64>>,
    s: Vec<Mat<f64>>,
    y: Vec<f64>,
    free: Vec<f64>,
    tau: f64,
    kappa: f64,
}

/// Internal minimization-form copy of the problem with per-block
/// constraint lists.
struct Data<'a> {
    prob: &'a SdpProblem,
    cost_sign: f64,
    /// per block: constraints with a nonzero matrix in that block
    active: Vec<Vec<usize>>,
}

impl Data<'_> {
    fn m(&self) -> usize {
        self.prob.rhs.len()
    }

    fn p(&self) -> usize {
        self.prob.free_cost.len()
    }

    fn cost_dense(&self, b: usize) -> Mat<f64> {
        let n = self.prob.block_sizes[b];
        let mut m = Mat::zeros(n, n);
        self.prob.cost[b].add_scaled_to(self.cost_sign, &mut m);
        m
    }

    fn cf(&self, k: usize) -> f64 {
        self.cost_sign * self.prob.free_cost[k]
    }

    fn apply_a(&self, x: &[Mat<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        for (b, xb) in x.iter().enumerate() {
            for &i in &self.active[b] {
                out[i] += self.prob.coeffs[b][i].inner(xb.as_ref());
            }
        }
        out
    }

    fn apply_at(&self, y: &[f64]) -> Vec<Mat<f64>> {
        self.prob
            .block_sizes
            .iter()
            .enumerate()
            .map(|(b, &n)| {
                let mut m = Mat::zeros(n, n);
                for &i in &self.active[b] {
                    self.prob.coeffs[b][i].add_scaled_to(y[i], &mut m);
                }
                m
            })
            .collect()
    }

    fn apply_f(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        for (k, col) in self.prob.free_columns.iter().enumerate() {
            for &(i, v) in col {
                out[i] += v * free[k];
            }
        }
        out
    }

    fn apply_ft(&self, y: &[f64]) -> Vec<f64> {
        self.prob.free_columns.iter().map(|col| col.iter().map(|&(i, v)| v * y[i]).sum()).collect()
    }

    fn c_inner(&self, x: &[Mat<f64>]) -> f64 {
        x.iter().enumerate().map(|(b, xb)| self.cost_sign * self.prob.cost[b].inner(xb.as_ref())).sum()
    }
}

struct ResidualState {
    r1: Vec<f64>,
    r2: Vec<Mat<f64>>,
    r3: Vec<f64>,
    r4: f64,
    mu: f64,
}

fn residuals(d: &Data<'_>, it: &Iterate, costs: &[Mat<f64>]) -> ResidualState {
    let ax = d.apply_a(&it.x);
    let fx = d.apply_f(&it.free);
    let r1: Vec<f64> = (0..d.m()).map(|i| ax[i] + fx[i] - d.prob.rhs[i] * it.tau).collect();
    let aty = d.apply_at(&it.y);
    let r2: Vec<Mat<f64>> = (0..costs.len()).map(|b| &aty[b] + &it.s[b] - &costs[b] * faer::Scale(it.tau)).collect();
    let fty = d.apply_ft(&it.y);
    let r3: Vec<f64> = (0..d.p()).map(|k| fty[k] - d.cf(k) * it.tau).collect();
    let cfx: f64 = (0..d.p()).map(|k| d.cf(k) * it.free[k]).sum();
    let r4 = d.c_inner(&it.x) + cfx - dot(&d.prob.rhs, &it.y) + it.kappa;
    let nu: usize = d.prob.block_sizes.iter().sum();
    let xs: f64 = it.x.iter().zip(&it.s).map(|(a, b)| mat_inner(a, b)).sum();
    let mu = (xs + it.tau * it.kappa) / (nu as f64 + 1.0);
    ResidualState { r1, r2, r3, r4, mu }
}

/// Solves the embedded Newton system for one right-hand side.
struct NewtonSystem<'a> {
    d: &'a Data<'a>,
    scalings: Vec<NtScaling>,
    kkt: Mat<f64>,
    factor: Lblt<f64>,
    costs: Vec<Mat<f64>>,
    h_c: Vec<f64>,
    c_wcw: f64,
    v: Vec<f64>,
}

impl<'a> NewtonSystem<'a> {
    fn new(d: &'a Data<'a>, it: &Iterate, costs: &[Mat<f64>]) -> Option<Self> {
        let (m, p) = (d.m(), d.p());
        let mut scalings = Vec::with_capacity(costs.len());
        for b in 0..costs.len() {
            scalings.push(nt_scaling(&it.x[b], &it.s[b])?);
        }
        let mut kkt = Mat::<f64>::zeros(m + p, m + p);
        for (b, sc) in scalings.iter().enumerate() {
            let act = &d.active[b];
            for (jj, &j) in act.iter().enumerate() {
                let waw = sandwich_sparse(&sc.w, &d.prob.coeffs[b][j]);
                for &i in &act[..=jj] {
                    let v = d.prob.coeffs[b][i].inner(waw.as_ref());
                    kkt[(i, j)] += v;
                    if i != j {
                        kkt[(j, i)] += v;
                    }
                }
            }
        }
        for (k, col) in d.prob.free_columns.iter().enumerate() {
            for &(i, v) in col {
                kkt[(i, m + k)] += v;
                kkt[(m + k, i)] += v;
            }
        }
        if (0..m + p).any(|j| (0..m + p).any(|i| !kkt[(i, j)].is_finite())) {
            return None;
        }
        let factor = Lblt::new(kkt.as_ref(), Side::Lower);
        let wcw: Vec<Mat<f64>> = scalings.iter().zip(costs).map(|(sc, c)| sandwich(&sc.w, c)).collect();
        let h_c = d.apply_a(&wcw);
        let c_wcw: f64 = costs.iter().zip(&wcw).map(|(c, g)| mat_inner(c, g)).sum();
        let mut sys = Self { d, scalings, kkt, factor, costs: costs.to_vec(), h_c, c_wcw, v: Vec::new() };
        let mut rhs: Vec<f64> = (0..m).map(|i| sys.h_c[i] + d.prob.rhs[i]).collect();
        rhs.extend((0..p).map(|k| d.cf(k)));
        sys.v = sys.solve_kkt(&rhs);
        Some(sys)
    }

    /// Bordered Schur solve with two rounds of iterative refinement.
    fn solve_kkt(&self, rhs: &[f64]) -> Vec<f64> {
        let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let mut z = self.factor.solve(&b);
        for _ in 0..2 {
            let r = &b - &self.kkt * &z;
            z += self.factor.solve(&r);
        }
        (0..rhs.len()).map(|i| z[(i, 0)]).collect()
    }

    /// Direction targeting residual reduction by `1 - sigma` and
    /// complementarity `sigma * mu`, with an optional second-order term from
    /// a previous (affine) direction.
    fn direction(&self, it: &Iterate, res: &ResidualState, sigma: f64, corr: Option<&Direction>) -> Direction {
        let d = self.d;
        let (m, p) = (d.m(), d.p());
        let eta = 1.0 - sigma;
        let rhs1: Vec<f64> = res.r1.iter().map(|v| -eta * v).collect();
        let rhs2: Vec<Mat<f64>> = res.r2.iter().map(|v| v * faer::Scale(-eta)).collect();
        let rhs3: Vec<f64> = res.r3.iter().map(|v| -eta * v).collect();
        let rhs4 = -eta * res.r4;

        let mut rzr = Vec::with_capacity(self.scalings.len());
        let mut g2 = Vec::with_capacity(self.scalings.len());
        for (b, sc) in self.scalings.iter().enumerate() {
            let n = sc.lambda.len();
            let mut t = Mat::<f64>::zeros(n, n);
            for i in 0..n {
                t[(i, i)] = sigma * res.mu - sc.lambda[i] * sc.lambda[i];
            }
            if let Some(c) = corr {
                let dxs = &sc.r_inv * &c.dx[b] * sc.r_inv.transpose();
                let dss = sc.r.transpose() * &c.ds[b] * &sc.r;
                let prod = &dxs * &dss;
                for j in 0..n {
                    for i in 0..n {
                        t[(i, j)] -= 0.5 * (prod[(i, j)] + prod[(j, i)]);
                    }
                }
            }
            let z = Mat::from_fn(n, n, |i, j| 2.0 * t[(i, j)] / (sc.lambda[i] + sc.lambda[j]));
            let mut v = &sc.r * &z * sc.r.transpose();
            symmetrize(&mut v);
            rzr.push(v);
            g2.push(sandwich(&sc.w, &rhs2[b]));
        }
        let mut tc = sigma * res.mu - it.tau * it.kappa;
        if let Some(c) = corr {
            tc -= c.dtau * c.dkappa;
        }
        let a_rzr = d.apply_a(&rzr);
        let a_g2 = d.apply_a(&g2);
        let mut g: Vec<f64> = (0..m).map(|i| rhs1[i] - a_rzr[i] + a_g2[i]).collect();
        g.extend_from_slice(&rhs3);
        let u = self.solve_kkt(&g);

        let c_rzr: f64 = self.costs.iter().zip(&rzr).map(|(c, z)| mat_inner(c, z)).sum();
        let c_g2: f64 = self.costs.iter().zip(&g2).map(|(c, z)| mat_inner(c, z)).sum();
        let b = &d.prob.rhs;
        let cf: Vec<f64> = (0..p).map(|k| d.cf(k)).collect();
        let constant = c_rzr - c_g2 + dot(&self.h_c, &u[..m]) + dot(&cf, &u[m..]) - dot(b, &u[..m]);
        let coef = dot(&self.h_c, &self.v[..m]) - self.c_wcw + dot(&cf, &self.v[m..]) - dot(b, &self.v[..m])
            - it.kappa / it.tau;
        let dtau = (rhs4 - tc / it.tau - constant) / coef;
        let dy: Vec<f64> = (0..m).map(|i| u[i] + dtau * self.v[i]).collect();
        let dfree: Vec<f64> = (0..p).map(|k| u[m + k] + dtau * self.v[m + k]).collect();
        let aty = d.apply_at(&dy);
        let ds: Vec<Mat<f64>> =
            (0..self.costs.len()).map(|b| &rhs2[b] - &aty[b] + &self.costs[b] * faer::Scale(dtau)).collect();
        let dx: Vec<Mat<f64>> = (0..self.costs.len())
            .map(|b| {
                let mut v = &rzr[b] - sandwich(&self.scalings[b].w, &ds[b]);
                symmetrize(&mut v);
                v
            })
            .collect();
        let dkappa = (tc - it.kappa * dtau) / it.tau;
        Direction { dx, ds, dy, dfree, dtau, dkappa }
    }

    fn step_length(&self, it: &Iterate, dir: &Direction) -> f64 {
        let mut alpha = f64::INFINITY;
        for (b, sc) in self.scalings.iter().enumerate() {
            let dxs = &sc.r_inv * &dir.dx[b] * sc.r_inv.transpose();
            let dss = sc.r.transpose() * &dir.ds[b] * &sc.r;
            alpha = alpha.min(max_step(&sc.lambda, &dxs)).min(max_step(&sc.lambda, &dss));
        }
        if dir.dtau < 0.0 {
            alpha = alpha.min(-it.tau / dir.dtau);
        }
        if dir.dkappa < 0.0 {
            alpha = alpha.min(-it.kappa / dir.dkappa);
        }
        alpha
    }
}

fn summarize(d: &Data<'_>, it: &Iterate, status: SdpStatus, iterations: usize, costs: &[Mat<f64>]) -> SdpSolution {
    let res = residuals(d, it, costs);
    let tau = it.tau;
    let scale_mats = |v: &[Mat<f64>], s: f64| v.iter().map(|m| m * faer::Scale(s)).collect::<Vec<_>>();
    let (x, s, y, free) = match status {
        SdpStatus::Infeasible | SdpStatus::Unbounded => (
            scale_mats(&it.x, 1.0),
            scale_mats(&it.s, 1.0),
            it.y.clone(),
            it.free.clone(),
        ),
        _ => (
            scale_mats(&it.x, 1.0 / tau),
            scale_mats(&it.s, 1.0 / tau),
            it.y.iter().map(|v| v / tau).collect(),
            it.free.iter().map(|v| v / tau).collect(),
        ),
    };
    let b_norm = norm(&d.prob.rhs).max(1.0);
    let c_norm = (costs.iter().map(|c| mat_inner(c, c)).sum::<f64>().sqrt() + norm(&d.prob.free_cost)).max(1.0);
    let r2sq: f64 = res.r2.iter().map(|m| mat_inner(m, m)).sum();
    let residuals = Residuals {
        primal: norm(&res.r1) / tau / b_norm,
        dual: (r2sq + dot(&res.r3, &res.r3)).sqrt() / tau / c_norm,
        gap: x.iter().zip(&s).map(|(a, b)| mat_inner(a, b)).sum(),
    };
    let pobj = d.c_inner(&x) + (0..d.p()).map(|k| d.cf(k) * free[k]).sum::<f64>();
    let dobj = dot(&d.prob.rhs, &y);
    let (primal_objective, dual_objective) = (d.cost_sign * pobj, d.cost_sign * dobj);
    SdpSolution { status, x, s, y, free, primal_objective, dual_objective, residuals, iterations }
}

/// Solves `prob` to relative tolerance `tol`.
///
/// Returns `Err` only for malformed input; solver outcomes (including
/// infeasibility and numerical failure) are reported through
/// [`SdpSolution::status`].
pub fn solve(prob: &SdpProblem, settings: SolverSettings) -> Result<SdpSolution> {
    let tol = settings.tol;
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::InvalidParameter { name: "tol", reason: format!("must lie in (0, 1e-2], got {tol}") });
    }
    let mut prob = prob.clone();
    prob.canonicalize();
    let prob = &prob;
    let cost_sign = match prob.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let active: Vec<Vec<usize>> =
        prob.coeffs.iter().map(|b| (0..b.len()).filter(|&i| !b[i].is_empty()).collect()).collect();
    for (i, b) in prob.rhs.iter().enumerate() {
        let touched = active.iter().any(|a| a.contains(&i)) || prob.free_columns.iter().any(|c| c.iter().any(|e| e.0 == i));
        if !touched {
            return Err(Error::InvalidParameter {
                name: "constraints",
                reason: format!("constraint {i} has no coefficients (rhs {b})"),
            });
        }
    }
    let d = Data { prob, cost_sign, active };
    let costs: Vec<Mat<f64>> = (0..prob.block_sizes.len()).map(|b| d.cost_dense(b)).collect();
    let (m, p) = (d.m(), d.p());

    let mut it = Iterate {
        x: prob.block_sizes.iter().map(|&n| Mat::identity(n, n)).collect(),
        s: prob.block_sizes.iter().map(|&n| Mat::identity(n, n)).collect(),
        y: vec![0.0; m],
        free: vec![0.0; p],
        tau: 1.0,
        kappa: 1.0,
    };

    let b_norm = norm(&prob.rhs).max(1.0);
    let c_norm = (costs.iter().map(|c| mat_inner(c, c)).sum::<f64>().sqrt() + norm(&prob.free_cost)).max(1.0);

    for iter in 0..=settings.max_iters {
        let res = residuals(&d, &it, &costs);
        let tau = it.tau;
        let pcost = (d.c_inner(&it.x) + (0..p).map(|k| d.cf(k) * it.free[k]).sum::<f64>()) / tau;
        let dcost = dot(&prob.rhs, &it.y) / tau;
        let xs: f64 = it.x.iter().zip(&it.s).map(|(a, b)| mat_inner(a, b)).sum();
        let gap = xs / (tau * tau);
        let pres = norm(&res.r1) / tau / b_norm;
        let r2sq: f64 = res.r2.iter().map(|m| mat_inner(m, m)).sum();
        let dres = (r2sq + dot(&res.r3, &res.r3)).sqrt() / tau / c_norm;
        let obj_scale = 1.0 + pcost.abs().min(dcost.abs());
        if settings.verbose {
            eprintln!(
                "{iter:3} pcost {pcost:+.6e} dcost {dcost:+.6e} gap {gap:.2e} pres {pres:.2e} dres {dres:.2e} tau {:.2e} kappa {:.2e}",
                it.tau, it.kappa
            );
        }
        if pres <= tol && dres <= tol && gap <= tol * obj_scale && (pcost - dcost).abs() <= tol * obj_scale {
            return Ok(summarize(&d, &it, SdpStatus::Optimal, iter, &costs));
        }

        // infeasibility certificates, normalized as rays
        let by = dot(&prob.rhs, &it.y);
        let cx = d.c_inner(&it.x) + (0..p).map(|k| d.cf(k) * it.free[k]).sum::<f64>();
        let aty = d.apply_at(&it.y);
        let ray_dual: f64 = aty.iter().zip(&it.s).map(|(a, s)| { let t = a + s; mat_inner(&t, &t) }).sum::<f64>()
            + { let f = d.apply_ft(&it.y); dot(&f, &f) };
        let pinf = if by > 0.0 { ray_dual.sqrt() / c_norm / by } else { f64::INFINITY };
        let ax = d.apply_a(&it.x);
        let fx = d.apply_f(&it.free);
        let ray_primal: Vec<f64> = (0..m).map(|i| ax[i] + fx[i]).collect();
        let dinf = if cx < 0.0 { norm(&ray_primal) / b_norm / (-cx) } else { f64::INFINITY };
        let collapsed = it.tau < TAU_KAPPA_THRESHOLD * it.kappa;
        if pinf <= tol || (collapsed && by > 0.0 && pinf <= tol.sqrt()) {
            return Ok(summarize(&d, &it, SdpStatus::Infeasible, iter, &costs));
        }
        if dinf <= tol || (collapsed && cx < 0.0 && dinf <= tol.sqrt()) {
            return Ok(summarize(&d, &it, SdpStatus::Unbounded, iter, &costs));
        }
        if iter == settings.max_iters {
            break;
        }

        let Some(sys) = NewtonSystem::new(&d, &it, &costs) else {
            return Ok(summarize(&d, &it, SdpStatus::NumericalFailure, iter, &costs));
        };
        let aff = sys.direction(&it, &res, 0.0, None);
        let alpha_aff = sys.step_length(&it, &aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);
        let dir = sys.direction(&it, &res, sigma, Some(&aff));
        let alpha = (STEP_FRACTION * sys.step_length(&it, &dir)).min(1.0);
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Ok(summarize(&d, &it, SdpStatus::NumericalFailure, iter, &costs));
        }
        for b in 0..it.x.len() {
            it.x[b] = &it.x[b] + &dir.dx[b] * faer::Scale(alpha);
            it.s[b] = &it.s[b] + &dir.ds[b] * faer::Scale(alpha);
            symmetrize(&mut it.x[b]);
            symmetrize(&mut it.s[b]);
        }
        for i in 0..m {
            it.y[i] += alpha * dir.dy[i];
        }
        for k in 0..p {
            it.free[k] += alpha * dir.dfree[k];
        }
        it.tau += alpha * dir.dtau;
        it.kappa += alpha * dir.dkappa;
    }
    Ok(summarize(&d, &it, SdpStatus::NumericalFailure, settings.max_iters, &costs))
}

const SDPA_TAG: &str = "\"cme-barrier export:";

/// Writes the problem in sparse SDPA format.
///
/// The problem becomes the SDPA dual `max <F0, Y>` with `F_i = A_i`,
/// `c_i = b_i` and `F0 = -C` (or `C` when maximizing). Free variables are
/// split into a nonnegative pair held in a trailing diagonal block. A
/// comment line records the sense and the free-variable count so the file
/// can be read back into an identical problem.
pub fn to_sdpa_string(prob: &SdpProblem) -> String {
    let mut prob = prob.clone();
    prob.canonicalize();
    let p = prob.num_free();
    let mut s = String::new();
    if p > 0 || prob.sense == Sense::Maximize {
        let sense = match prob.sense {
            Sense::Minimize => "minimize",
            Sense::Maximize => "maximize",
        };
        writeln!(s, "{SDPA_TAG} sense={sense} free={p}").unwrap();
    }
    let nblocks = prob.block_sizes.len() + usize::from(p > 0);
    writeln!(s, "{}", prob.num_constraints()).unwrap();
    writeln!(s, "{nblocks}").unwrap();
    let mut sizes: Vec<String> = prob.block_sizes.iter().map(|n| n.to_string()).collect();
    if p > 0 {
        sizes.push(format!("-{}", 2 * p));
    }
    writeln!(s, "{}", sizes.join(" ")).unwrap();
    writeln!(s, "{}", prob.rhs.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")).unwrap();
    let f0_sign = match prob.sense {
        Sense::Minimize => -1.0,
        Sense::Maximize => 1.0,
    };
    for (b, c) in prob.cost.iter().enumerate() {
        for &(i, j, v) in c.entries() {
            writeln!(s, "0 {} {} {} {}", b + 1, i + 1, j + 1, fmt_f64(f0_sign * v)).unwrap();
        }
    }
    let lp = prob.block_sizes.len() + 1;
    for (k, c) in prob.free_cost.iter().enumerate() {
        if *c != 0.0 {
            writeln!(s, "0 {lp} {0} {0} {1}", 2 * k + 1, fmt_f64(f0_sign * c)).unwrap();
            writeln!(s, "0 {lp} {0} {0} {1}", 2 * k + 2, fmt_f64(-f0_sign * c)).unwrap();
        }
    }
    for i in 0..prob.num_constraints() {
        for b in 0..prob.block_sizes.len() {
            for &(r, c, v) in prob.coeffs[b][i].entries() {
                writeln!(s, "{} {} {} {} {}", i + 1, b + 1, r + 1, c + 1, fmt_f64(v)).unwrap();
            }
        }
        for (k, col) in prob.free_columns.iter().enumerate() {
            for &(row, v) in col {
                if row == i {
                    writeln!(s, "{} {lp} {1} {1} {2}", i + 1, 2 * k + 1, fmt_f64(v)).unwrap();
                    writeln!(s, "{} {lp} {1} {1} {2}", i + 1, 2 * k + 2, fmt_f64(-v)).unwrap();
                }
            }
        }
    }
    s
}

pub fn export_sdpa(prob: &SdpProblem, path: &Path) -> Result<()> {
    std::fs::write(path, to_sdpa_string(prob))?;
    Ok(())
}

/// Reads a sparse SDPA file. Files written by [`export_sdpa`] come back as
/// the original problem; other files are read as minimization problems over
/// their blocks, with diagonal blocks kept as diagonal SDP blocks.
pub fn from_sdpa_str(text: &str) -> Result<SdpProblem> {
    let perr = |line: usize, msg: String| Error::Parse(format!("SDPA line {line}: {msg}"));
    let mut sense = Sense::Minimize;
    let mut free = 0usize;
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix(SDPA_TAG) {
            for kv in rest.split_whitespace() {
                match kv.split_once('=') {
                    Some(("sense", "maximize")) => sense = Sense::Maximize,
                    Some(("sense", _)) => sense = Sense::Minimize,
                    Some(("free", v)) => free = v.parse().map_err(|e| perr(ln + 1, format!("free count: {e}")))?,
                    _ => {}
                }
            }
            continue;
        }
        if t.is_empty() || t.starts_with('"') || t.starts_with('*') {
            continue;
        }
        for tok in t.split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}' || c == '(' || c == ')') {
            if !tok.is_empty() {
                tokens.push((ln + 1, tok.to_string()));
            }
        }
    }
    let pos = std::cell::Cell::new(0usize);
    let next = |what: &str| -> Result<(usize, String)> {
        let t = tokens
            .get(pos.get())
            .cloned()
            .ok_or_else(|| Error::Parse(format!("SDPA: unexpected end of file reading {what}")))?;
        pos.set(pos.get() + 1);
        Ok(t)
    };
    let parse_usize = |(ln, t): (usize, String)| t.parse::<usize>().map_err(|e| perr(ln, format!("`{t}`: {e}")));
    let parse_i64 = |(ln, t): (usize, String)| t.parse::<i64>().map_err(|e| perr(ln, format!("`{t}`: {e}")));
    let parse_f64 = |(ln, t): (usize, String)| t.parse::<f64>().map_err(|e| perr(ln, format!("`{t}`: {e}")));
    let m = parse_usize(next("constraint count")?)?;
    let nblocks = parse_usize(next("block count")?)?;
    let mut raw_sizes = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        raw_sizes.push(parse_i64(next("block size")?)?);
    }
    let mut rhs = Vec::with_capacity(m);
    for _ in 0..m {
        rhs.push(parse_f64(next("rhs")?)?);
    }
    let has_free_block = free > 0;
    if has_free_block && raw_sizes.last().copied() != Some(-(2 * free as i64)) {
        return Err(Error::Parse("SDPA: free-variable block does not match header".into()));
    }
    let sdp_blocks = if has_free_block { nblocks - 1 } else { nblocks };
    let sizes: Vec<usize> = raw_sizes[..sdp_blocks].iter().map(|s| s.unsigned_abs() as usize).collect();
    let mut prob = SdpProblem::new(sizes, m);
    prob.sense = sense;
    for _ in 0..free {
        prob.add_free_variable(0.0);
    }
    for (i, v) in rhs.into_iter().enumerate() {
        prob.rhs[i] = v;
    }
    let f0_sign = match sense {
        Sense::Minimize => -1.0,
        Sense::Maximize => 1.0,
    };
    while pos.get() < tokens.len() {
        let line = tokens[pos.get()].0;
        let cons = parse_usize(next("constraint index")?)?;
        let block = parse_usize(next("block index")?)?;
        let i = parse_usize(next("row")?)?;
        let j = parse_usize(next("column")?)?;
        let v = parse_f64(next("value")?)?;
        if cons > m || block == 0 || block > nblocks || i == 0 || j == 0 {
            return Err(perr(line, "index out of range".into()));
        }
        if has_free_block && block == nblocks {
            // only the first of each (+, -) pair carries the value
            if i % 2 == 0 {
                continue;
            }
            let k = (i - 1) / 2;
            if cons == 0 {
                prob.free_cost[k] += f0_sign * v;
            } else {
                prob.add_free_entry(cons - 1, k, v);
            }
            continue;
        }
        let b = block - 1;
        if i > prob.block_sizes[b] || j > prob.block_sizes[b] {
            return Err(perr(line, "entry outside block".into()));
        }
        if cons == 0 {
            prob.cost[b].add(i - 1, j - 1, f0_sign * v);
        } else {
            prob.coeffs[b][cons - 1].add(i - 1, j - 1, v);
        }
    }
    prob.canonicalize();
    Ok(prob)
}

pub fn import_sdpa(path: &Path) -> Result<SdpProblem> {
    from_sdpa_str(&std::fs::read_to_string(path)?)
}
