//! Sum-of-squares programs for barrier synthesis.
//!
//! A [`SosProgram`] is a list of polynomial identities
//!
//! ```text
//! target(v) = z_0^T Q_0 z_0 + sum_k g_k z_k^T Q_k z_k,   Q_k PSD
//! ```
//!
//! where `target` is affine in a vector `v` of free decision scalars. Each
//! identity is lowered to coefficient-matching equalities over the full
//! graded-lex basis of its degree ([`sos_to_sdp`]), one PSD block per Gram
//! matrix.
//!
//! [`build_sos_program`] emits the four barrier conditions. They are posed
//! in box-normalized coordinates `u = (x - center) / half_width` of the
//! state set, which keeps the Gram blocks well scaled when the state axes
//! have very different ranges; [`extract_certificate`] maps the barrier back.

use faer::Mat;

use crate::cme::{lift_features, sup_sqrt_kx, AmbiguityConfig, EmpiricalCme};
use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::polynomials::{Monomial, MonomialBasis, Polynomial, SemiAlgebraicSet};
use crate::sdp::{solve, Residuals, SdpProblem, SdpSolution, SdpStatus, SolverSettings};
use crate::systems::{stream, StateBox, Stream};

/// `constant + sum_k v_k * linear_k` for free decision scalars `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolynomial {
    pub constant: Polynomial,
    pub linear: Vec<(usize, Polynomial)>,
}

impl AffinePolynomial {
    pub fn constant(p: Polynomial) -> Self {
        Self { constant: p, linear: Vec::new() }
    }

    pub fn with_term(mut self, var: usize, p: Polynomial) -> Self {
        self.linear.push((var, p));
        self
    }

    pub fn degree(&self) -> u32 {
        self.linear.iter().map(|(_, p)| p.degree()).fold(self.constant.degree(), u32::max)
    }

    pub fn evaluate_at(&self, values: &[f64]) -> Polynomial {
        let mut p = self.constant.clone();
        for (k, q) in &self.linear {
            p = p.add(&q.scale(values[*k])).expect("same arity");
        }
        p
    }
}

/// `multiplier(x) * z(x)^T Q z(x)` with `z` the graded-lex basis.
#[derive(Debug, Clone, PartialEq)]
pub struct GramTerm {
    pub multiplier: Polynomial,
    pub basis: MonomialBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosConstraint {
    pub label: String,
    pub target: AffinePolynomial,
    pub terms: Vec<GramTerm>,
    /// Basis over which coefficients are matched.
    pub rows: MonomialBasis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    Minimize,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SosSynthesisConfig {
    pub barrier_degree: u32,
    pub multiplier_degree: u32,
    pub gamma: f64,
    pub c: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub ambiguity: AmbiguityConfig,
    pub objective: EtaMode,
}

impl SosSynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if self.barrier_degree < 2 || self.barrier_degree % 2 != 0 {
            return bad("barrier_degree", format!("must be even and at least 2, got {}", self.barrier_degree));
        }
        if self.multiplier_degree % 2 != 0 {
            return bad("multiplier_degree", format!("must be even, got {}", self.multiplier_degree));
        }
        if !(self.gamma > 0.0) {
            return bad("gamma", format!("must be positive, got {}", self.gamma));
        }
        if !(self.c >= 0.0) {
            return bad("c", format!("must be nonnegative, got {}", self.c));
        }
        if !(self.zeta1 > 0.0) || !(self.zeta2 > 0.0) {
            return bad("zeta", format!("zeta1 and zeta2 must be positive, got {} and {}", self.zeta1, self.zeta2));
        }
        if let EtaMode::Fixed(eta) = self.objective {
            if !(eta >= 0.0 && eta < self.gamma) {
                return bad("eta", format!("fixed eta must lie in [0, gamma), got {eta}"));
            }
        }
        self.ambiguity.validate()
    }
}

/// The state sets of a safety problem. Each unsafe component gets its own
/// Putinar block.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySets {
    pub domain: SemiAlgebraicSet,
    pub initial: SemiAlgebraicSet,
    pub unsafe_sets: Vec<SemiAlgebraicSet>,
}

/// Where the barrier lives inside a program built by [`build_sos_program`].
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierLayout {
    pub basis: MonomialBasis,
    /// Free variable index of the first barrier coefficient.
    pub first_coefficient: usize,
    /// Free variable holding `eta` in minimize mode.
    pub eta_var: Option<usize>,
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub config: SosSynthesisConfig,
    /// `eps * sup sqrt(k_x) * B_bar - c + zeta1 + zeta2`
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosProgram {
    num_vars: usize,
    free_costs: Vec<f64>,
    constraints: Vec<SosConstraint>,
    barrier: Option<BarrierLayout>,
}

impl SosProgram {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, free_costs: Vec::new(), constraints: Vec::new(), barrier: None }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_free(&self) -> usize {
        self.free_costs.len()
    }

    pub fn constraints(&self) -> &[SosConstraint] {
        &self.constraints
    }

    pub fn barrier_layout(&self) -> Option<&BarrierLayout> {
        self.barrier.as_ref()
    }

    pub fn add_free_variable(&mut self, cost: f64) -> usize {
        self.free_costs.push(cost);
        self.free_costs.len() - 1
    }

    /// Adds `target = z_0^T Q_0 z_0 + sum_k g_k z_k^T Q_k z_k` with each
    /// `z_k` of degree `multiplier_degree / 2` and `z_0` just large enough to
    /// carry the highest product `g_k * sigma_k`.
    pub fn add_putinar_constraint(
        &mut self,
        label: &str,
        target: AffinePolynomial,
        inequalities: &[Polynomial],
        multiplier_degree: u32,
    ) -> Result<()> {
        let n = self.num_vars;
        let half_mult = multiplier_degree / 2;
        let top = inequalities.iter().map(|g| g.degree() + 2 * half_mult).max();
        let t0 = match top {
            Some(d) => d.div_ceil(2),
            None => target.degree().div_ceil(2),
        };
        let mut terms = vec![GramTerm { multiplier: Polynomial::constant(n, 1.0), basis: MonomialBasis::new(n, t0) }];
        for g in inequalities {
            terms.push(GramTerm { multiplier: g.clone(), basis: MonomialBasis::new(n, half_mult) });
        }
        self.add_constraint(label, target, terms)
    }

    /// Adds a constraint with explicit Gram terms. Coefficients are matched
    /// over all monomials up to twice the degree of the first Gram basis.
    pub fn add_constraint(&mut self, label: &str, target: AffinePolynomial, terms: Vec<GramTerm>) -> Result<()> {
        let n = self.num_vars;
        check_dim(n, target.constant.num_vars())?;
        for (k, p) in &target.linear {
            check_dim(n, p.num_vars())?;
            if *k >= self.free_costs.len() {
                return Err(Error::InvalidParameter { name: "target", reason: format!("unknown free variable {k}") });
            }
        }
        let Some(first) = terms.first() else {
            return Err(Error::DegreeBookkeeping { constraint: label.into(), reason: "no Gram terms".into() });
        };
        let row_degree = 2 * first.basis.max_degree();
        if target.degree() > row_degree {
            return Err(Error::DegreeBookkeeping {
                constraint: label.into(),
                reason: format!("target has degree {} but the certificate reaches only {row_degree}", target.degree()),
            });
        }
        for t in &terms {
            check_dim(n, t.basis.num_vars())?;
            let d = t.multiplier.degree() + 2 * t.basis.max_degree();
            if d > row_degree {
                return Err(Error::DegreeBookkeeping {
                    constraint: label.into(),
                    reason: format!("a multiplier term has degree {d} above the matched degree {row_degree}"),
                });
            }
        }
        self.constraints.push(SosConstraint {
            label: label.into(),
            target,
            terms,
            rows: MonomialBasis::new(n, row_degree),
        });
        Ok(())
    }

    /// Gram blocks in SDP order: constraint-major, then term order.
    pub fn gram_blocks(&self) -> impl Iterator<Item = (usize, usize, &GramTerm)> {
        self.constraints
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| c.terms.iter().enumerate().map(move |(ti, t)| (ci, ti, t)))
    }

    /// `target(v) - sum_k g_k z_k^T Q_k z_k` for constraint `index`, with
    /// Gram matrices taken from `grams` (one per term).
    pub fn residual_polynomial(&self, index: usize, free: &[f64], grams: &[Mat<f64>]) -> Result<Polynomial> {
        let c = &self.constraints[index];
        check_dim(c.terms.len(), grams.len())?;
        let mut p = c.target.evaluate_at(free);
        for (t, q) in c.terms.iter().zip(grams) {
            let form = quadratic_form(&t.basis, q)?;
            p = p.sub(&t.multiplier.mul(&form)?)?;
        }
        Ok(p)
    }
}

/// `z^T Q z` for the graded-lex basis `z`.
pub fn quadratic_form(basis: &MonomialBasis, q: &Mat<f64>) -> Result<Polynomial> {
    check_dim(basis.len(), q.nrows())?;
    check_dim(basis.len(), q.ncols())?;
    let ms = basis.monomials();
    let mut terms = Vec::with_capacity(ms.len() * ms.len());
    for i in 0..ms.len() {
        for j in 0..ms.len() {
            terms.push((ms[i].mul(&ms[j]), q[(i, j)]));
        }
    }
    Ok(Polynomial::from_terms(basis.num_vars(), terms))
}

/// Compiles the barrier conditions on `sets` into an SOS program:
///
/// 1. `B - zeta1 >= 0` on the domain,
/// 2. `eta - zeta1 - B >= 0` on the initial set,
/// 3. `B - zeta1 - gamma >= 0` on each unsafe component,
/// 4. `B - sum_j b_j q_j - xi >= 0` on the domain,
///
/// each as a Putinar certificate. `q_j` is the embedding lift of the
/// barrier monomials, so `sum_j b_j q_j(x)` is the empirical conditional
/// expectation of `B` at `x`.
pub fn build_sos_program(cme: &EmpiricalCme, sets: &SafetySets, cfg: &SosSynthesisConfig) -> Result<SosProgram> {
    cfg.validate()?;
    let n = cme.dim();
    check_dim(n, sets.domain.ambient_dim())?;
    check_dim(n, sets.initial.ambient_dim())?;
    for u in &sets.unsafe_sets {
        check_dim(n, u.ambient_dim())?;
    }
    let hull = sets.domain.box_hull().ok_or_else(|| Error::InvalidParameter {
        name: "domain",
        reason: "the state set needs a bounding box".into(),
    })?;
    let center = hull.center();
    let half = hull.half_widths();

    let xi = cfg.ambiguity.epsilon * sup_sqrt_kx(cme.kernel(), hull) * cfg.ambiguity.b_bar - cfg.c + cfg.zeta1 + cfg.zeta2;

    let basis = MonomialBasis::new(n, cfg.barrier_degree);
    let mut prog = SosProgram::new(n);
    let first = prog.num_free();
    for _ in 0..basis.len() {
        prog.add_free_variable(0.0);
    }
    let eta_var = match cfg.objective {
        EtaMode::Minimize => Some(prog.add_free_variable(1.0)),
        EtaMode::Fixed(_) => None,
    };

    // lift of the normalized barrier monomials, as polynomials in u
    let succ = cme.successors();
    let features = Mat::from_fn(succ.len(), basis.len(), |i, j| {
        let u: Vec<f64> = succ[i].iter().zip(&center).zip(&half).map(|((x, c), h)| (x - c) / h).collect();
        basis.monomials()[j].eval(&u)
    });
    let lifted: Vec<Polynomial> = lift_features(cme, &features)?
        .into_iter()
        .map(|q| q.affine_substitute(&center, &half))
        .collect::<Result<_>>()?;

    let to_u = |s: &SemiAlgebraicSet| s.affine_substitute(&center, &half);
    let dom = to_u(&sets.domain)?;
    let init = to_u(&sets.initial)?;
    let unsafe_u: Vec<SemiAlgebraicSet> = sets.unsafe_sets.iter().map(to_u).collect::<Result<_>>()?;

    let mono = |j: usize| Polynomial::from_terms(n, [(basis.monomials()[j].clone(), 1.0)]);
    let barrier_plus = |sign: f64, constant: f64| {
        let mut t = AffinePolynomial::constant(Polynomial::constant(n, constant));
        for j in 0..basis.len() {
            t = t.with_term(first + j, mono(j).scale(sign));
        }
        t
    };
    let md = cfg.multiplier_degree;

    prog.add_putinar_constraint("nonnegativity", barrier_plus(1.0, -cfg.zeta1), dom.inequalities(), md)?;

    let init_target = match cfg.objective {
        EtaMode::Minimize => barrier_plus(-1.0, -cfg.zeta1).with_term(eta_var.unwrap(), Polynomial::constant(n, 1.0)),
        EtaMode::Fixed(eta) => barrier_plus(-1.0, eta - cfg.zeta1),
    };
    prog.add_putinar_constraint("initial", init_target, init.inequalities(), md)?;

    // keeps the bound nonvacuous, so hopeless radii fail as infeasible
    if let Some(k) = eta_var {
        let cap = AffinePolynomial::constant(Polynomial::constant(n, cfg.gamma - cfg.zeta1))
            .with_term(k, Polynomial::constant(n, -1.0));
        let scalar = GramTerm { multiplier: Polynomial::constant(n, 1.0), basis: MonomialBasis::new(n, 0) };
        prog.add_constraint("eta_cap", cap, vec![scalar])?;
    }

    for (k, u) in unsafe_u.iter().enumerate() {
        let label = format!("unsafe[{k}]");
        prog.add_putinar_constraint(&label, barrier_plus(1.0, -cfg.zeta1 - cfg.gamma), u.inequalities(), md)?;
    }

    let mut decrease = AffinePolynomial::constant(Polynomial::constant(n, -xi));
    for j in 0..basis.len() {
        decrease = decrease.with_term(first + j, mono(j).sub(&lifted[j])?);
    }
    prog.add_putinar_constraint("martingale", decrease, dom.inequalities(), md)?;

    prog.barrier = Some(BarrierLayout {
        basis,
        first_coefficient: first,
        eta_var,
        center,
        half_widths: half,
        config: *cfg,
        xi,
    });
    Ok(prog)
}

/// Lowers the program: one PSD block per Gram term, one equality per
/// matched monomial, free scalars as SDP free variables.
pub fn sos_to_sdp(prog: &SosProgram) -> SdpProblem {
    let sizes: Vec<usize> = prog.gram_blocks().map(|(_, _, t)| t.basis.len()).collect();
    let rows: usize = prog.constraints.iter().map(|c| c.rows.len()).sum();
    let mut sdp = SdpProblem::new(sizes, rows);
    for &cost in &prog.free_costs {
        sdp.add_free_variable(cost);
    }
    let mut row0 = 0;
    let mut block = 0;
    for c in &prog.constraints {
        let row = |m: &Monomial| row0 + c.rows.index_of(m).expect("degree checked on insertion");
        for t in &c.terms {
            let ms = t.basis.monomials();
            for i in 0..ms.len() {
                for j in i..ms.len() {
                    let zz = ms[i].mul(&ms[j]);
                    for (gm, gc) in t.multiplier.terms() {
                        sdp.add_constraint_entry(row(&zz.mul(gm)), block, i, j, gc);
                    }
                }
            }
            block += 1;
        }
        // sum_k <A_k, Q_k> - sum_v v * p_v(m) = constant(m)
        for (m, v) in c.target.constant.terms() {
            sdp.set_rhs(row(m), v);
        }
        for (k, p) in &c.target.linear {
            for (m, v) in p.terms() {
                sdp.add_free_entry(row(m), *k, -v);
            }
        }
        row0 += c.rows.len();
    }
    sdp
}

/// Free values and Gram matrices of a solved program.
#[derive(Debug, Clone)]
pub struct SosSolution {
    pub free: Vec<f64>,
    /// `grams[constraint][term]`
    pub grams: Vec<Vec<Mat<f64>>>,
    pub sdp: SdpSolution,
}

/// Splits an optimal SDP solution back into per-constraint Gram matrices.
pub fn sos_solution(prog: &SosProgram, sol: &SdpSolution) -> Result<SosSolution> {
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => {
            return Err(Error::Solver(
                "SOS program is infeasible; relax epsilon, B_bar, c or the slacks, or raise the degrees".into(),
            ))
        }
        other => {
            return Err(Error::Solver(format!(
                "status {other:?} after {} iterations (primal residual {:.2e}, dual residual {:.2e})",
                sol.iterations, sol.residuals.primal, sol.residuals.dual
            )))
        }
    }
    let mut grams: Vec<Vec<Mat<f64>>> = prog.constraints.iter().map(|c| Vec::with_capacity(c.terms.len())).collect();
    for (b, (ci, _, _)) in prog.gram_blocks().enumerate() {
        grams[ci].push(sol.x[b].clone());
    }
    Ok(SosSolution { free: sol.free.clone(), grams, sdp: sol.clone() })
}

pub fn solve_sos(prog: &SosProgram, settings: SolverSettings) -> Result<SosSolution> {
    let sdp = sos_to_sdp(prog);
    let sol = solve(&sdp, settings)?;
    sos_solution(prog, &sol)
}

/// Settings recorded alongside a certificate that are not part of the SOS
/// program itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateContext {
    pub lambda: f64,
    pub kx: KernelSpec,
    pub target_kernel: KernelSpec,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierCertificate {
    /// Barrier in the original state coordinates.
    pub barrier: Polynomial,
    pub eta: f64,
    pub gamma: f64,
    pub c: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub ambiguity: AmbiguityConfig,
    pub lambda: f64,
    pub kx: KernelSpec,
    pub target_kernel: KernelSpec,
    pub fingerprint: String,
    pub residuals: Residuals,
    /// Largest identity residual seen at the random check points.
    pub identity_violation: f64,
}

const IDENTITY_CHECK_POINTS: usize = 10_000;
const IDENTITY_CHECK_TOL: f64 = 1e-6;

/// Reads `b` and `eta` from the solution and re-checks every polynomial
/// identity at random points of the normalized domain.
pub fn extract_certificate(prog: &SosProgram, sol: &SdpSolution, ctx: &CertificateContext) -> Result<BarrierCertificate> {
    let layout = prog.barrier.as_ref().ok_or_else(|| Error::InvalidParameter {
        name: "program",
        reason: "not a barrier program".into(),
    })?;
    let sos = sos_solution(prog, sol)?;
    let n = prog.num_vars;
    let cube = StateBox::new(vec![-1.0; n], vec![1.0; n])?;
    let mut rng = stream(0, Stream::Validation);
    let points: Vec<Vec<f64>> = (0..IDENTITY_CHECK_POINTS).map(|_| cube.sample_uniform(&mut rng)).collect();
    let mut worst = 0.0f64;
    for (ci, c) in prog.constraints.iter().enumerate() {
        let resid = prog.residual_polynomial(ci, &sos.free, &sos.grams[ci])?;
        let target = c.target.evaluate_at(&sos.free);
        let scale = target.max_abs_coefficient().max(1.0);
        let violation = points.iter().map(|u| resid.eval_unchecked(u).abs()).fold(0.0, f64::max) / scale;
        if !(violation <= IDENTITY_CHECK_TOL) {
            return Err(Error::Certificate(format!(
                "identity `{}` violated by {violation:.3e} (relative); tighten the solver tolerance or increase the slacks",
                c.label
            )));
        }
        worst = worst.max(violation);
    }
    let k0 = layout.first_coefficient;
    let coeffs = &sos.free[k0..k0 + layout.basis.len()];
    let normalized = layout.basis.combine(coeffs)?;
    let offset: Vec<f64> = layout.center.iter().zip(&layout.half_widths).map(|(c, h)| -c / h).collect();
    let scale: Vec<f64> = layout.half_widths.iter().map(|h| 1.0 / h).collect();
    let barrier = normalized.affine_substitute(&offset, &scale)?;
    let cfg = layout.config;
    let eta = match (cfg.objective, layout.eta_var) {
        (EtaMode::Fixed(eta), _) => eta,
        (EtaMode::Minimize, Some(k)) => sos.free[k].max(0.0),
        (EtaMode::Minimize, None) => unreachable!("minimize mode always allocates eta"),
    };
    if !(eta < cfg.gamma) {
        return Err(Error::Certificate(format!("eta = {eta} is not below gamma = {}; the bound is vacuous", cfg.gamma)));
    }
    Ok(BarrierCertificate {
        barrier,
        eta,
        gamma: cfg.gamma,
        c: cfg.c,
        zeta1: cfg.zeta1,
        zeta2: cfg.zeta2,
        ambiguity: cfg.ambiguity,
        lambda: ctx.lambda,
        kx: ctx.kx,
        target_kernel: ctx.target_kernel,
        fingerprint: ctx.fingerprint.clone(),
        residuals: sol.residuals,
        identity_violation: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cme::fit_cme;
    use crate::polynomials::box_to_semialgebraic;
    use crate::systems::{sample_transitions, System};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> SolverSettings {
        SolverSettings { tol: 1e-9, max_iters: 100, verbose: std::env::var_os("SDP_TRACE").is_some() }
    }

    fn x1() -> Polynomial {
        Polynomial::var(1, 0)
    }

    fn plain_sos(p: Polynomial) -> SosProgram {
        let mut prog = SosProgram::new(p.num_vars());
        prog.add_putinar_constraint("p", AffinePolynomial::constant(p), &[], 0).unwrap();
        prog
    }

    #[test]
    fn square_lowering_structure() {
        // (x + 1)^2: rows {1, x, x^2}, Q over z = (1, x)
        let p = x1().add(&Polynomial::constant(1, 1.0)).unwrap().pow(2);
        let prog = plain_sos(p);
        let sdp = sos_to_sdp(&prog);
        assert_eq!(sdp.block_sizes(), &[2]);
        assert_eq!(sdp.num_constraints(), 3);
        assert_eq!(sdp.rhs(), &[1.0, 2.0, 1.0]);
        assert_eq!(sdp.constraint_matrix(0, 0).entries(), &[(0, 0, 1.0)]);
        // Q01 + Q10 = 2 with the symmetric entry counted twice
        assert_eq!(sdp.constraint_matrix(0, 1).entries(), &[(0, 1, 1.0)]);
        assert_eq!(sdp.constraint_matrix(0, 2).entries(), &[(1, 1, 1.0)]);
        let sol = solve_sos(&prog, settings()).unwrap();
        let q = &sol.grams[0][0];
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!((q[(i, j)] - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_is_sos() {
        let prog = plain_sos(Polynomial::constant(1, 5.0));
        let sol = solve_sos(&prog, settings()).unwrap();
        assert_eq!(sol.grams[0][0].nrows(), 1);
        assert!((sol.grams[0][0][(0, 0)] - 5.0).abs() < 1e-8);
    }

    #[test]
    fn quartic_square_is_sos() {
        let p = x1().pow(2).sub(&Polynomial::constant(1, 1.0)).unwrap().pow(2);
        let prog = plain_sos(p.clone());
        let sol = solve_sos(&prog, settings()).unwrap();
        let rebuilt = quadratic_form(&prog.constraints()[0].terms[0].basis, &sol.grams[0][0]).unwrap();
        let diff = rebuilt.sub(&p).unwrap();
        assert!(diff.max_abs_coefficient() <= 1e-7, "{diff}");
    }

    #[test]
    fn motzkin_is_not_sos() {
        let x = Polynomial::var(2, 0);
        let y = Polynomial::var(2, 1);
        let t = |p: Polynomial, c: f64| p.scale(c);
        let m = t(x.pow(4).mul(&y.pow(2)).unwrap(), 1.0)
            .add(&x.pow(2).mul(&y.pow(4)).unwrap())
            .unwrap()
            .sub(&t(x.pow(2).mul(&y.pow(2)).unwrap(), 3.0))
            .unwrap()
            .add(&Polynomial::constant(2, 1.0))
            .unwrap();
        let sol = solve(&sos_to_sdp(&plain_sos(m)), settings()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn degree_bookkeeping_error() {
        let mut prog = SosProgram::new(1);
        let g = Polynomial::constant(1, 1.0).sub(&x1().pow(2)).unwrap();
        let err = prog.add_putinar_constraint("deg", AffinePolynomial::constant(x1().pow(6)), &[g], 2).unwrap_err();
        assert!(matches!(err, Error::DegreeBookkeeping { .. }));
    }

    fn toy_setup(n: usize) -> (EmpiricalCme, SafetySets) {
        let sys = System::LinearGaussian { alpha: 0.5, noise_std: 0.05 };
        let dom = StateBox::from_bounds(&[(-1.0, 1.0)]).unwrap();
        let data = sample_transitions(&sys, &dom, n, 11).unwrap();
        let cme = fit_cme(&data, KernelSpec::polynomial(1.0, 1.0, 2).unwrap(), 1e-3).unwrap();
        let sets = SafetySets {
            domain: box_to_semialgebraic(&dom),
            initial: box_to_semialgebraic(&StateBox::from_bounds(&[(-0.1, 0.1)]).unwrap()),
            unsafe_sets: vec![
                box_to_semialgebraic(&StateBox::from_bounds(&[(-1.0, -0.9)]).unwrap()),
                box_to_semialgebraic(&StateBox::from_bounds(&[(0.9, 1.0)]).unwrap()),
            ],
        };
        (cme, sets)
    }

    fn toy_config(epsilon: f64) -> SosSynthesisConfig {
        SosSynthesisConfig {
            barrier_degree: 2,
            multiplier_degree: 2,
            gamma: 1.0,
            c: 0.02,
            zeta1: 1e-3,
            zeta2: 1e-3,
            ambiguity: AmbiguityConfig::new(epsilon, 0.05, 0.1).unwrap(),
            objective: EtaMode::Minimize,
        }
    }

    fn ctx() -> CertificateContext {
        CertificateContext {
            lambda: 1e-3,
            kx: KernelSpec::polynomial(1.0, 1.0, 2).unwrap(),
            target_kernel: KernelSpec::squared_exponential(1.0, 1.0).unwrap(),
            fingerprint: "toy".into(),
        }
    }

    #[test]
    fn toy_program_shape() {
        let (cme, sets) = toy_setup(200);
        let prog = build_sos_program(&cme, &sets, &toy_config(0.0)).unwrap();
        // nonnegativity, initial, eta cap, two unsafe, martingale
        assert_eq!(prog.constraints().len(), 6);
        let blocks = prog.gram_blocks().count();
        assert!(blocks >= 5);
        for c in prog.constraints() {
            // matched degree 4 in one variable
            let rows = if c.label == "eta_cap" { 1 } else { 5 };
            assert_eq!(c.rows.len(), rows);
        }
        let sdp = sos_to_sdp(&prog);
        assert_eq!(sdp.num_constraints(), 26);
        assert_eq!(sdp.num_free(), 3 + 1);
    }

    #[test]
    fn toy_certificate() {
        let (cme, sets) = toy_setup(200);
        let prog = build_sos_program(&cme, &sets, &toy_config(0.0)).unwrap();
        let sdp = sos_to_sdp(&prog);
        let sol = solve(&sdp, settings()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        let cert = extract_certificate(&prog, &sol, &ctx()).unwrap();
        assert!(cert.eta > 0.0 && cert.eta < cert.gamma, "eta {}", cert.eta);
        // B(0) lies below eta and B at the unsafe boundary above gamma
        assert!(cert.barrier.evaluate(&[0.0]).unwrap() <= cert.eta - cert.zeta1 + 1e-6);
        assert!(cert.barrier.evaluate(&[0.95]).unwrap() >= cert.gamma + cert.zeta1 - 1e-6);
    }

    #[test]
    fn lowering_is_sound() {
        let (cme, sets) = toy_setup(200);
        let prog = build_sos_program(&cme, &sets, &toy_config(0.0)).unwrap();
        let sol = solve_sos(&prog, settings()).unwrap();
        for (ci, c) in prog.constraints().iter().enumerate() {
            let resid = prog.residual_polynomial(ci, &sol.free, &sol.grams[ci]).unwrap();
            let scale = c.target.evaluate_at(&sol.free).max_abs_coefficient().max(1.0);
            assert!(resid.max_abs_coefficient() <= 1e-7 * scale, "{}: {resid}", c.label);
        }
    }

    #[test]
    fn gram_forms_are_nonnegative() {
        let (cme, sets) = toy_setup(200);
        let prog = build_sos_program(&cme, &sets, &toy_config(0.0)).unwrap();
        let sol = solve_sos(&prog, settings()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (ci, c) in prog.constraints().iter().enumerate() {
            for (t, q) in c.terms.iter().zip(&sol.grams[ci]) {
                let form = quadratic_form(&t.basis, q).unwrap();
                for _ in 0..20_000 {
                    let u = rng.random_range(-3.0..3.0);
                    assert!(form.evaluate(&[u]).unwrap() >= -1e-8);
                }
            }
        }
    }

    #[test]
    fn larger_epsilon_never_helps() {
        let (cme, sets) = toy_setup(200);
        let eta_at = |eps: f64| {
            let prog = build_sos_program(&cme, &sets, &toy_config(eps)).unwrap();
            let k = prog.barrier_layout().unwrap().eta_var.unwrap();
            solve_sos(&prog, settings()).map(|s| s.free[k])
        };
        let etas: Vec<f64> = [0.0, 0.02, 0.05, 0.1].iter().map(|&e| eta_at(e).unwrap()).collect();
        // past the point where eta would have to exceed the cap
        assert!(eta_at(100.0).is_err());
        for w in etas.windows(2) {
            assert!(w[1] >= w[0] - 1e-6, "{etas:?}");
        }
        let feasible_at = |eps: f64| {
            let mut cfg = toy_config(eps);
            cfg.objective = EtaMode::Fixed(0.5);
            solve_sos(&build_sos_program(&cme, &sets, &cfg).unwrap(), settings()).is_ok()
        };
        assert!(feasible_at(0.0));
        assert!(!feasible_at(50.0));
        assert!(!feasible_at(100.0));
    }

    #[test]
    fn zero_lift_collapses_to_nonnegativity_margin() {
        let (cme, sets) = toy_setup(50);
        let mut cfg = toy_config(0.0);
        cfg.c = 0.0;
        let prog = build_sos_program(&cme, &sets, &cfg).unwrap();
        let layout = prog.barrier_layout().unwrap();
        assert!((layout.xi - (cfg.zeta1 + cfg.zeta2)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = toy_config(0.0);
        cfg.barrier_degree = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = toy_config(0.0);
        cfg.objective = EtaMode::Fixed(2.0);
        assert!(cfg.validate().is_err());
        let mut cfg = toy_config(0.0);
        cfg.zeta1 = 0.0;
        assert!(cfg.validate().is_err());
    }
}
