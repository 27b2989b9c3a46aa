//! Empirical conditional mean embeddings.
//!
//! Given transitions `(x_i, x_i+)`, the conditional expectation of a function
//! `f` of the successor is estimated as `w(x)^T f(X+)` with weights
//! `w(x)^T = k_X(x)^T (K_X + N lambda I)^{-1}`. With a polynomial
//! conditioning kernel the weights are polynomial in `x`, which is what lets
//! the martingale condition enter an SOS program ([`cme_monomial_lift`]).

use faer::Mat;

use crate::error::{check_dim, Error, Result};
use crate::kernels::{factorize_regularized, gram, kvec, GramFactorization, KernelSpec};
use crate::polynomials::{poly_kernel_weight, Monomial, MonomialBasis, Polynomial};
use crate::systems::{StateBox, TransitionDataset};

/// Radius and norm cap of the RKHS ambiguity ball around the empirical
/// embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguityConfig {
    /// MMD radius `epsilon`; chosen by the user.
    pub epsilon: f64,
    /// The true embedding is assumed to lie in the ball with probability
    /// at least `1 - rho`.
    pub rho: f64,
    /// Cap `B_bar` on the RKHS norm of the barrier approximation.
    pub b_bar: f64,
}

impl AmbiguityConfig {
    pub fn new(epsilon: f64, rho: f64, b_bar: f64) -> Result<Self> {
        let cfg = Self { epsilon, rho, b_bar };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter { name: "epsilon", reason: format!("must be nonnegative, got {}", self.epsilon) });
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter { name: "rho", reason: format!("must lie in [0, 1], got {}", self.rho) });
        }
        if !(self.b_bar >= 0.0 && self.b_bar.is_finite()) {
            return Err(Error::InvalidParameter { name: "b_bar", reason: format!("must be nonnegative, got {}", self.b_bar) });
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct EmpiricalCme {
    anchors: Vec<Vec<f64>>,
    successors: Vec<Vec<f64>>,
    factorization: GramFactorization,
    kx_spec: KernelSpec,
    lambda: f64,
}

pub fn fit_cme(data: &TransitionDataset, kx_spec: KernelSpec, lambda: f64) -> Result<EmpiricalCme> {
    fit_cme_from(data.states.clone(), data.successors.clone(), kx_spec, lambda)
}

pub fn fit_cme_from(
    anchors: Vec<Vec<f64>>,
    successors: Vec<Vec<f64>>,
    kx_spec: KernelSpec,
    lambda: f64,
) -> Result<EmpiricalCme> {
    kx_spec.validate()?;
    check_dim(anchors.len(), successors.len())?;
    if anchors.is_empty() {
        return Err(Error::InvalidParameter { name: "N", reason: "at least one transition is required".into() });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter { name: "lambda", reason: format!("must be nonnegative, got {lambda}") });
    }
    let k = gram(&kx_spec, &anchors)?;
    let n = anchors.len();
    let factorization = factorize_regularized(k.as_ref(), n as f64 * lambda)?;
    Ok(EmpiricalCme { anchors, successors, factorization, kx_spec, lambda })
}

/// A function of the successor state pushed through the embedding:
/// `x -> k_X(x)^T beta` with `beta = (K + N lambda I)^{-1} f(X+)`.
///
/// Precomputing `beta` makes each evaluation `O(N)` instead of a solve.
#[derive(Debug, Clone)]
pub struct ConditionalExpectation<'a> {
    cme: &'a EmpiricalCme,
    beta: Vec<f64>,
}

impl ConditionalExpectation<'_> {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.cme.dim(), x.len())?;
        Ok(self
            .cme
            .anchors
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| self.cme.kx_spec.eval_unchecked(x, a) * b)
            .sum())
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.beta
    }
}

impl EmpiricalCme {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn successors(&self) -> &[Vec<f64>] {
        &self.successors
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kx_spec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn factorization(&self) -> &GramFactorization {
        &self.factorization
    }

    /// `w(x)`; the weights need not sum to one.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = kvec(&self.kx_spec, &self.anchors, x)?;
        self.factorization.solve(&k)
    }

    /// `w(x)^T f(X+)`.
    pub fn expected_value(&self, f_at_successors: &[f64], x: &[f64]) -> Result<f64> {
        self.expectation_of(f_at_successors)?.eval(x)
    }

    pub fn expectation_of(&self, f_at_successors: &[f64]) -> Result<ConditionalExpectation<'_>> {
        check_dim(self.len(), f_at_successors.len())?;
        Ok(ConditionalExpectation { cme: self, beta: self.factorization.solve(f_at_successors)? })
    }

    /// Same as [`Self::expectation_of`] with `f` evaluated on the successors.
    pub fn expectation_of_fn(&self, f: impl Fn(&[f64]) -> f64) -> Result<ConditionalExpectation<'_>> {
        let values: Vec<f64> = self.successors.iter().map(|x| f(x)).collect();
        self.expectation_of(&values)
    }
}

/// `epsilon * B_bar * sqrt(k_x(x, x))`: the worst-case shift of the
/// conditional expectation over the ambiguity ball.
pub fn robust_margin(kx_spec: &KernelSpec, cfg: &AmbiguityConfig, x: &[f64]) -> f64 {
    cfg.epsilon * cfg.b_bar * kx_spec.diagonal(x).max(0.0).sqrt()
}

/// `sup_{x in box} sqrt(k_x(x, x))`.
///
/// For the polynomial kernel `k(x, x)` grows with `|x|^2`, so the maximum is
/// attained at the corner farthest from the origin.
pub fn sup_sqrt_kx(kx_spec: &KernelSpec, domain: &StateBox) -> f64 {
    match *kx_spec {
        KernelSpec::Polynomial { a, b, degree } => {
            let r2 = domain
                .lower()
                .iter()
                .zip(domain.upper())
                .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                .sum::<f64>();
            (a * r2 + b).powf(degree as f64 / 2.0)
        }
        KernelSpec::SquaredExponential { signal_variance, .. } => signal_variance.sqrt(),
    }
}

/// Lifts the embedding weights onto a set of successor features.
///
/// Column `j` of `features` holds `phi_j(x_i+)`. Returns `q_j(x) =
/// sum_i A[i, j] k_x(x, x_i)` with `A = (K + N lambda I)^{-1} features`, as
/// explicit polynomials, so that `w(x)^T (sum_j b_j phi_j(X+)) = sum_j b_j
/// q_j(x)` for every `b`.
pub fn lift_features(cme: &EmpiricalCme, features: &Mat<f64>) -> Result<Vec<Polynomial>> {
    let KernelSpec::Polynomial { a, b, degree } = cme.kx_spec else {
        return Err(Error::UnsupportedKernel("the monomial lift requires the polynomial conditioning kernel".into()));
    };
    check_dim(cme.len(), features.nrows())?;
    let coeffs = cme.factorization.solve_mat(features.as_ref())?;
    let n = cme.dim();
    let alphas = MonomialBasis::new(n, degree);
    // moments[a][j] = sum_i anchor_i^alpha * coeffs[i, j]
    let mut out: Vec<Vec<(Monomial, f64)>> = vec![Vec::with_capacity(alphas.len()); features.ncols()];
    for alpha in alphas.monomials() {
        let weight = poly_kernel_weight(alpha, a, b, degree);
        let powers: Vec<f64> = cme.anchors.iter().map(|x| alpha.eval(x)).collect();
        for (j, terms) in out.iter_mut().enumerate() {
            let moment: f64 = powers.iter().enumerate().map(|(i, p)| p * coeffs[(i, j)]).sum();
            terms.push((alpha.clone(), weight * moment));
        }
    }
    Ok(out.into_iter().map(|t| Polynomial::from_terms(n, t)).collect())
}

/// [`lift_features`] with `phi_j = m_j`, the monomials of `basis`.
pub fn cme_monomial_lift(cme: &EmpiricalCme, basis: &MonomialBasis) -> Result<Vec<Polynomial>> {
    check_dim(cme.dim(), basis.num_vars())?;
    let succ = &cme.successors;
    let features = Mat::from_fn(succ.len(), basis.len(), |i, j| basis.monomials()[j].eval(&succ[i]));
    lift_features(cme, &features)
}

/// Non-rigorous diagnostic for choosing `epsilon` by hand: fits the embedding
/// separately on the two halves of the data and reports the largest
/// disagreement of the estimated conditional expectation of `f` over
/// `probes`. This is not a concentration bound.
pub fn half_split_discrepancy(
    data: &TransitionDataset,
    kx_spec: KernelSpec,
    lambda: f64,
    f: impl Fn(&[f64]) -> f64 + Copy,
    probes: &[Vec<f64>],
) -> Result<f64> {
    let half = data.len() / 2;
    if half == 0 {
        return Err(Error::InvalidParameter { name: "N", reason: "need at least two transitions".into() });
    }
    let first = fit_cme_from(data.states[..half].to_vec(), data.successors[..half].to_vec(), kx_spec, lambda)?;
    let second = fit_cme_from(data.states[half..].to_vec(), data.successors[half..].to_vec(), kx_spec, lambda)?;
    let e1 = first.expectation_of_fn(f)?;
    let e2 = second.expectation_of_fn(f)?;
    probes.iter().try_fold(0.0f64, |acc, x| Ok(acc.max((e1.eval(x)? - e2.eval(x)?).abs())))
}
