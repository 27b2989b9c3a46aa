//! Multivariate polynomials in monomial-coefficient form.
//!
//! Terms are kept in graded-lexicographic order (total degree first, then
//! higher powers of earlier variables first), so a coefficient vector over a
//! [`MonomialBasis`] means the same thing everywhere in the crate and in
//! serialized certificates.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{check_dim, Error, Result};
use crate::systems::{fmt_f64, StateBox};

/// Coefficients smaller than this in magnitude are dropped after arithmetic.
pub const PRUNE_TOL: f64 = 1e-14;

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn one(num_vars: usize) -> Self {
        Monomial(vec![0; num_vars])
    }

    pub fn var(num_vars: usize, i: usize) -> Self {
        let mut e = vec![0; num_vars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn num_vars(&self) -> usize {
        self.0.len()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(e, v)| v.powi(*e as i32)).product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials in `num_vars` variables up to `max_degree`, graded-lex.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    num_vars: usize,
    max_degree: u32,
    monomials: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
}

impl MonomialBasis {
    pub fn new(num_vars: usize, max_degree: u32) -> Self {
        let mut monomials = Vec::new();
        for d in 0..=max_degree {
            let mut cur = vec![0u32; num_vars];
            push_degree(&mut monomials, &mut cur, 0, d);
        }
        monomials.sort();
        let index = monomials.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        Self { num_vars, max_degree, monomials, index }
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    /// Evaluates every basis monomial at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.monomials.iter().map(|m| m.eval(x)).collect()
    }

    /// `sum_j coeffs[j] * m_j`.
    pub fn combine(&self, coeffs: &[f64]) -> Result<Polynomial> {
        check_dim(self.len(), coeffs.len())?;
        Ok(Polynomial::from_terms(
            self.num_vars,
            self.monomials.iter().cloned().zip(coeffs.iter().copied()),
        ))
    }
}

fn push_degree(out: &mut Vec<Monomial>, cur: &mut Vec<u32>, var: usize, remaining: u32) {
    if var + 1 == cur.len() {
        cur[var] = remaining;
        out.push(Monomial(cur.clone()));
        cur[var] = 0;
        return;
    }
    if cur.is_empty() {
        if remaining == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    for e in (0..=remaining).rev() {
        cur[var] = e;
        push_degree(out, cur, var + 1, remaining - e);
    }
    cur[var] = 0;
}

/// A polynomial in `num_vars` real variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    num_vars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(num_vars: usize) -> Self {
        Self { num_vars, terms: BTreeMap::new() }
    }

    pub fn constant(num_vars: usize, c: f64) -> Self {
        Self::from_terms(num_vars, [(Monomial::one(num_vars), c)])
    }

    /// The coordinate function `x_i`.
    pub fn var(num_vars: usize, i: usize) -> Self {
        Self::from_terms(num_vars, [(Monomial::var(num_vars, i), 1.0)])
    }

    /// Builds a polynomial, summing duplicate monomials and pruning.
    pub fn from_terms(num_vars: usize, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (m, c) in terms {
            assert_eq!(m.num_vars(), num_vars, "monomial arity does not match polynomial");
            *map.entry(m).or_insert(0.0) += c;
        }
        let mut p = Self { num_vars, terms: map };
        p.prune();
        p
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= PRUNE_TOL);
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Total degree; zero for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Coefficient vector over `basis`; errors if a term is outside it.
    pub fn coefficients_in(&self, basis: &MonomialBasis) -> Result<Vec<f64>> {
        check_dim(basis.num_vars(), self.num_vars)?;
        let mut out = vec![0.0; basis.len()];
        for (m, c) in &self.terms {
            let i = basis.index_of(m).ok_or_else(|| Error::InvalidParameter {
                name: "basis",
                reason: format!("monomial {:?} exceeds basis degree {}", m.0, basis.max_degree()),
            })?;
            out[i] = *c;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        check_dim(self.num_vars, other.num_vars)?;
        Ok(Self::from_terms(self.num_vars, self.terms().chain(other.terms()).map(|(m, c)| (m.clone(), c))))
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Self::from_terms(self.num_vars, self.terms().map(|(m, c)| (m.clone(), s * c)))
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        check_dim(self.num_vars, other.num_vars)?;
        let mut map: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                *map.entry(m1.mul(m2)).or_insert(0.0) += c1 * c2;
            }
        }
        let mut p = Self { num_vars: self.num_vars, terms: map };
        p.prune();
        Ok(p)
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.num_vars, 1.0);
        for _ in 0..e {
            acc = acc.mul(self).expect("same arity");
        }
        acc
    }

    /// Direct monomial evaluation with Neumaier-compensated summation.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.num_vars, x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let mut sum = 0.0;
        let mut comp = 0.0;
        for (m, c) in &self.terms {
            let v = c * m.eval(x);
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
        }
        sum + comp
    }

    /// `p(offset + scale .* u)` as a polynomial in `u`.
    pub fn affine_substitute(&self, offset: &[f64], scale: &[f64]) -> Result<Polynomial> {
        check_dim(self.num_vars, offset.len())?;
        check_dim(self.num_vars, scale.len())?;
        let n = self.num_vars;
        let maxdeg = self.degree() as usize;
        // powers[i][e] = (offset_i + scale_i u_i)^e
        let powers: Vec<Vec<Polynomial>> = (0..n)
            .map(|i| {
                let lin = Polynomial::from_terms(
                    n,
                    [(Monomial::one(n), offset[i]), (Monomial::var(n, i), scale[i])],
                );
                let mut v = vec![Polynomial::constant(n, 1.0)];
                for e in 1..=maxdeg {
                    let next = v[e - 1].mul(&lin).expect("same arity");
                    v.push(next);
                }
                v
            })
            .collect();
        let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, c) in &self.terms {
            let mut t = Polynomial::constant(n, *c);
            for (i, e) in m.0.iter().enumerate() {
                if *e > 0 {
                    t = t.mul(&powers[i][*e as usize]).expect("same arity");
                }
            }
            for (tm, tc) in t.terms {
                *acc.entry(tm).or_insert(0.0) += tc;
            }
        }
        let mut p = Self { num_vars: n, terms: acc };
        p.prune();
        Ok(p)
    }

    /// Text form `c * x1^e1 ... xn^en + ...` in graded-lex order with 17
    /// significant digits.
    pub fn serialize(&self) -> String {
        if self.terms.is_empty() {
            let zeros: Vec<String> = (1..=self.num_vars).map(|i| format!("x{i}^0")).collect();
            return format!("{} * {}", fmt_f64(0.0), zeros.join(" "));
        }
        self.terms
            .iter()
            .map(|(m, c)| {
                let vars: Vec<String> = m.0.iter().enumerate().map(|(i, e)| format!("x{}^{}", i + 1, e)).collect();
                format!("{} * {}", fmt_f64(*c), vars.join(" "))
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }

    pub fn parse(num_vars: usize, s: &str) -> Result<Polynomial> {
        let mut terms = Vec::new();
        for raw in s.split(" + ") {
            let (coef, rest) = raw
                .split_once('*')
                .ok_or_else(|| Error::Parse(format!("term `{raw}` lacks `*`")))?;
            let coef: f64 = coef.trim().parse().map_err(|e| Error::Parse(format!("coefficient `{coef}`: {e}")))?;
            let mut exps = vec![0u32; num_vars];
            for factor in rest.split_whitespace() {
                let (var, e) = factor
                    .strip_prefix('x')
                    .and_then(|f| f.split_once('^'))
                    .ok_or_else(|| Error::Parse(format!("factor `{factor}` is not of the form xi^e")))?;
                let i: usize = var.parse().map_err(|e| Error::Parse(format!("variable `{factor}`: {e}")))?;
                if i == 0 || i > num_vars {
                    return Err(Error::Parse(format!("variable index {i} out of range 1..={num_vars}")));
                }
                exps[i - 1] += e.parse::<u32>().map_err(|e| Error::Parse(format!("exponent `{factor}`: {e}")))?;
            }
            terms.push((Monomial(exps), coef));
        }
        Ok(Polynomial::from_terms(num_vars, terms))
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `|alpha|! / prod(alpha_i!)`
pub(crate) fn multinomial(alpha: &Monomial) -> f64 {
    let mut acc = 1.0;
    let mut total = 0;
    for &e in &alpha.0 {
        total += e;
        acc *= binomial(total, e);
    }
    acc
}

/// Weight of `x^alpha` in `(a <x, y> + b)^d` divided by `y^alpha`:
/// `C(d, |alpha|) a^|alpha| b^(d - |alpha|) |alpha|! / alpha!`.
pub(crate) fn poly_kernel_weight(alpha: &Monomial, a: f64, b: f64, d: u32) -> f64 {
    let m = alpha.degree();
    if m > d {
        return 0.0;
    }
    binomial(d, m) * a.powi(m as i32) * b.powi((d - m) as i32) * multinomial(alpha)
}

/// Multinomial expansion of `x -> (a <x, anchor> + b)^d`.
pub fn expand_poly_kernel_section(anchor: &[f64], a: f64, b: f64, d: u32) -> Polynomial {
    let n = anchor.len();
    let basis = MonomialBasis::new(n, d);
    Polynomial::from_terms(
        n,
        basis
            .monomials()
            .iter()
            .map(|m| (m.clone(), poly_kernel_weight(m, a, b, d) * m.eval(anchor))),
    )
}

/// `{x : g_k(x) >= 0 for all k}`, optionally with a bounding box for
/// gridding and sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiAlgebraicSet {
    ambient_dim: usize,
    inequalities: Vec<Polynomial>,
    box_hull: Option<StateBox>,
}

impl SemiAlgebraicSet {
    pub fn new(ambient_dim: usize, inequalities: Vec<Polynomial>, box_hull: Option<StateBox>) -> Result<Self> {
        for g in &inequalities {
            check_dim(ambient_dim, g.num_vars())?;
        }
        if let Some(b) = &box_hull {
            check_dim(ambient_dim, b.dim())?;
        }
        Ok(Self { ambient_dim, inequalities, box_hull })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn inequalities(&self) -> &[Polynomial] {
        &self.inequalities
    }

    pub fn box_hull(&self) -> Option<&StateBox> {
        self.box_hull.as_ref()
    }

    /// Membership with absolute slack `tol` on each inequality.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.ambient_dim && self.inequalities.iter().all(|g| g.eval_unchecked(x) >= -tol)
    }

    /// The same set in coordinates `u` with `x = offset + scale .* u`.
    pub fn affine_substitute(&self, offset: &[f64], scale: &[f64]) -> Result<SemiAlgebraicSet> {
        let inequalities =
            self.inequalities.iter().map(|g| g.affine_substitute(offset, scale)).collect::<Result<Vec<_>>>()?;
        let box_hull = match &self.box_hull {
            Some(b) => {
                let map = |v: &[f64]| -> Vec<f64> { v.iter().zip(offset).zip(scale).map(|((x, o), s)| (x - o) / s).collect() };
                let (lo, hi) = (map(b.lower()), map(b.upper()));
                let bounds: Vec<(f64, f64)> = lo.iter().zip(&hi).map(|(a, b)| (a.min(*b), a.max(*b))).collect();
                Some(StateBox::from_bounds(&bounds)?)
            }
            None => None,
        };
        Ok(Self { ambient_dim: self.ambient_dim, inequalities, box_hull })
    }
}

/// One quadratic inequality `(x_i - l_i)(u_i - x_i) >= 0` per axis.
pub fn box_to_semialgebraic(b: &StateBox) -> SemiAlgebraicSet {
    let n = b.dim();
    let inequalities = (0..n)
        .map(|i| {
            let xi = Polynomial::var(n, i);
            let left = xi.sub(&Polynomial::constant(n, b.lower()[i])).expect("same arity");
            let right = Polynomial::constant(n, b.upper()[i]).sub(&xi).expect("same arity");
            left.mul(&right).expect("same arity")
        })
        .collect();
    SemiAlgebraicSet { ambient_dim: n, inequalities, box_hull: Some(b.clone()) }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kernels::{eval_kernel, KernelSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn x(n: usize, i: usize) -> Polynomial {
        Polynomial::var(n, i)
    }

    fn c(n: usize, v: f64) -> Polynomial {
        Polynomial::constant(n, v)
    }

    fn random_poly(rng: &mut ChaCha8Rng, n: usize, deg: u32) -> Polynomial {
        let basis = MonomialBasis::new(n, deg);
        let coeffs: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        basis.combine(&coeffs).unwrap()
    }

    /// Reference barrier for the lane-keeping case study (variables x, y, phi).
    pub(crate) fn reference_barrier() -> Polynomial {
        let m = |e: [u32; 3]| Monomial(e.to_vec());
        Polynomial::from_terms(
            3,
            [
                (m([2, 0, 0]), -1.425e-4),
                (m([1, 1, 0]), -0.012),
                (m([1, 0, 1]), -0.028),
                (m([0, 2, 0]), 0.162),
                (m([0, 1, 1]), 0.774),
                (m([0, 0, 2]), 0.716),
                (m([1, 0, 0]), -0.048),
                (m([0, 1, 0]), 0.044),
                (m([0, 0, 1]), -0.270),
                (m([0, 0, 0]), 0.562),
            ],
        )
    }

    #[test]
    fn graded_lex_basis_order() {
        let b = MonomialBasis::new(2, 2);
        let got: Vec<Vec<u32>> = b.monomials().iter().map(|m| m.0.clone()).collect();
        assert_eq!(got, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(MonomialBasis::new(3, 4).len(), 35);
        assert_eq!(MonomialBasis::new(1, 3).len(), 4);
        for w in MonomialBasis::new(3, 3).monomials().windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn multiply_by_one_and_square() {
        let p = x(1, 0).add(&c(1, 1.0)).unwrap();
        assert_eq!(p.mul(&c(1, 1.0)).unwrap(), p);
        let sq = p.mul(&p).unwrap();
        let expected = Polynomial::from_terms(
            1,
            [(Monomial(vec![2]), 1.0), (Monomial(vec![1]), 2.0), (Monomial(vec![0]), 1.0)],
        );
        assert_eq!(sq, expected);
        assert_eq!(p.pow(3).evaluate(&[2.0]).unwrap(), 27.0);
    }

    #[test]
    fn canonical_form_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_poly(&mut rng, 3, 3);
        assert!(p.add(&p.scale(-1.0)).unwrap().is_zero());
        assert_eq!(p.add(&p.scale(-1.0)).unwrap().num_terms(), 0);
    }

    #[test]
    fn product_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let p = random_poly(&mut rng, 3, 3);
            let q = random_poly(&mut rng, 3, 3);
            let pq = p.mul(&q).unwrap();
            for _ in 0..50 {
                let pt: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let want = p.evaluate(&pt).unwrap() * q.evaluate(&pt).unwrap();
                let got = pq.evaluate(&pt).unwrap();
                assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn evaluation_cases() {
        assert_eq!(c(2, 3.25).evaluate(&[7.0, -1.0]).unwrap(), 3.25);
        let b = reference_barrier();
        let v = b.evaluate(&[1.5, 0.0, 0.0]).unwrap();
        assert!((v - 0.48968).abs() < 1e-4, "{v}");
        assert!(b.evaluate(&[1.0]).is_err());
    }

    #[test]
    fn arity_mismatch_errors() {
        assert!(x(1, 0).add(&x(2, 0)).is_err());
        assert!(x(1, 0).mul(&x(2, 0)).is_err());
    }

    #[test]
    fn kernel_section_expansion() {
        let anchor = [0.3, -1.1, 2.0];
        let d1 = expand_poly_kernel_section(&anchor, 0.5, 0.2, 1);
        let expected = Polynomial::from_terms(
            3,
            [
                (Monomial(vec![0, 0, 0]), 0.2),
                (Monomial(vec![1, 0, 0]), 0.5 * 0.3),
                (Monomial(vec![0, 1, 0]), 0.5 * -1.1),
                (Monomial(vec![0, 0, 1]), 0.5 * 2.0),
            ],
        );
        assert_eq!(d1, expected);

        let sq = expand_poly_kernel_section(&[1.0, 1.0], 1.0, 0.0, 2);
        let want = x(2, 0).add(&x(2, 1)).unwrap().pow(2);
        assert_eq!(sq, want);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let anchor: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let spec = KernelSpec::polynomial(0.005, 0.11, 2).unwrap();
        let p = expand_poly_kernel_section(&anchor, 0.005, 0.11, 2);
        for _ in 0..20 {
            let pt: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let want = eval_kernel(&spec, &pt, &anchor).unwrap();
            assert!((p.evaluate(&pt).unwrap() - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn unit_interval_box() {
        let s = box_to_semialgebraic(&StateBox::from_bounds(&[(0.0, 1.0)]).unwrap());
        let want = Polynomial::from_terms(1, [(Monomial(vec![2]), -1.0), (Monomial(vec![1]), 1.0)]);
        assert_eq!(s.inequalities(), &[want]);
    }

    #[test]
    fn initial_set_contains_reference_point() {
        let x0 = StateBox::from_bounds(&[(1.0, 2.0), (-0.5, 0.5), (-0.005, 0.005)]).unwrap();
        let s = box_to_semialgebraic(&x0);
        assert_eq!(s.inequalities().len(), 3);
        assert!(s.contains(&[1.5, 0.0, 0.0], 0.0));
        for g in s.inequalities() {
            assert!(g.evaluate(&x0.center()).unwrap() > 0.0);
        }
    }

    #[test]
    fn box_membership_on_grid_and_outside() {
        let b = StateBox::from_bounds(&[(1.0, 10.0), (-7.0, 7.0), (-0.05, 0.05)]).unwrap();
        let s = box_to_semialgebraic(&b);
        for p in b.grid(&[7, 7, 7]) {
            assert!(s.contains(&p, 1e-12));
        }
        for i in 0..3 {
            let w = b.upper()[i] - b.lower()[i];
            for (face, sign) in [(b.lower()[i], -1.0), (b.upper()[i], 1.0)] {
                let mut p = b.center();
                p[i] = face + sign * 0.01 * w;
                assert!(s.inequalities()[i].evaluate(&p).unwrap() < 0.0);
            }
        }
    }

    #[test]
    fn serialization_format() {
        let p = Polynomial::from_terms(2, [(Monomial(vec![1, 2]), -1.5), (Monomial(vec![0, 0]), 2.0)]);
        assert_eq!(
            p.serialize(),
            "2.0000000000000000e0 * x1^0 x2^0 + -1.5000000000000000e0 * x1^1 x2^2"
        );
        assert_eq!(Polynomial::parse(2, &p.serialize()).unwrap(), p);
        assert!(Polynomial::parse(2, "1.0 * x3^1").is_err());
        assert!(Polynomial::parse(2, "1.0 x1^1").is_err());
    }

    #[test]
    fn affine_substitution_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_poly(&mut rng, 3, 3);
        let off = [5.5, 0.0, 0.0];
        let sc = [4.5, 7.0, 0.05];
        let q = p.affine_substitute(&off, &sc).unwrap();
        for _ in 0..20 {
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xv: Vec<f64> = (0..3).map(|i| off[i] + sc[i] * u[i]).collect();
            let want = p.evaluate(&xv).unwrap();
            assert!((q.evaluate(&u).unwrap() - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn ring_axioms_pointwise(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_poly(&mut rng, 2, 2);
            let q = random_poly(&mut rng, 2, 3);
            let r = random_poly(&mut rng, 2, 2);
            let pt: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
            let ev = |s: &Polynomial| s.evaluate(&pt).unwrap();
            let assoc_l = p.mul(&q).unwrap().mul(&r).unwrap();
            let assoc_r = p.mul(&q.mul(&r).unwrap()).unwrap();
            prop_assert!((ev(&assoc_l) - ev(&assoc_r)).abs() <= 1e-10 * ev(&assoc_l).abs().max(1.0));
            let dist_l = p.mul(&q.add(&r).unwrap()).unwrap();
            let dist_r = p.mul(&q).unwrap().add(&p.mul(&r).unwrap()).unwrap();
            prop_assert!((ev(&dist_l) - ev(&dist_r)).abs() <= 1e-10 * ev(&dist_l).abs().max(1.0));
        }

        #[test]
        fn serialize_parse_round_trip(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_poly(&mut rng, 3, 3).scale(rng.random_range(1e-6..1e6));
            prop_assert_eq!(Polynomial::parse(3, &p.serialize()).unwrap(), p);
        }
    }
}
