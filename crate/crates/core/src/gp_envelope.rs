//! Kernel envelope of a polynomial barrier.
//!
//! The barrier `B` is replaced by a GP posterior mean `B~` in the
//! squared-exponential RKHS. Three numbers tie the two together:
//! `zeta1_hat ~ sup |B - B~|` over the domain, `zeta2_hat ~ sup |w(x)^T (B -
//! B~)(X+)|` through the embedding weights, and the RKHS norm of `B~`. Both
//! sups are maxima over a validation lattice inflated by
//! [`SUP_INFLATION`]; the lattice spacing is reported with them.

use faer::Mat;
use rayon::prelude::*;

use crate::cme::EmpiricalCme;
use crate::error::{check_dim, Error, Result};
use crate::kernels::{factorize_regularized, gram, KernelSpec};
use crate::polynomials::Polynomial;
use crate::systems::{stream, StateBox, Stream};

/// Factor applied to grid maxima to account for the gaps between grid points.
pub const SUP_INFLATION: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingScheme {
    Grid,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub points: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Points per axis for a lattice of about `n_total` points, proportional to
/// edge length. When `3^n <= n_total` every axis keeps at least three points
/// so thin axes are still resolved.
pub fn grid_allocation(domain: &StateBox, n_total: usize) -> Vec<usize> {
    let n = domain.dim();
    if n_total <= 1 {
        return vec![1; n];
    }
    let edges: Vec<f64> = domain.lower().iter().zip(domain.upper()).map(|(l, u)| u - l).collect();
    let floor: usize = if 3usize.checked_pow(n as u32).is_some_and(|v| v <= n_total) { 3 } else { 1 };
    let mut pinned = vec![false; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        let pinned_product = floor.pow((n - free.len()) as u32) as f64;
        if free.is_empty() {
            return vec![floor; n];
        }
        let budget = n_total as f64 / pinned_product;
        let edge_product: f64 = free.iter().map(|&i| edges[i]).product();
        let s = (budget / edge_product).powf(1.0 / free.len() as f64);
        let raw: Vec<f64> = (0..n).map(|i| if pinned[i] { floor as f64 } else { edges[i] * s }).collect();
        let too_small: Vec<usize> = free.iter().copied().filter(|&i| raw[i].round() < floor as f64).collect();
        if too_small.is_empty() {
            return raw.iter().map(|v| (v.round() as usize).max(floor)).collect();
        }
        for i in too_small {
            pinned[i] = true;
        }
    }
}

/// Noise-free samples `(x_i, B(x_i))` on `domain`.
pub fn sample_barrier(
    barrier: &Polynomial,
    domain: &StateBox,
    n_train: usize,
    scheme: SamplingScheme,
    seed: u64,
) -> Result<TrainingSet> {
    check_dim(domain.dim(), barrier.num_vars())?;
    if n_train == 0 {
        return Err(Error::InvalidParameter { name: "n_train", reason: "must be at least 1".into() });
    }
    let points = match scheme {
        SamplingScheme::Grid => domain.grid(&grid_allocation(domain, n_train)),
        SamplingScheme::Uniform => {
            let mut rng = stream(seed, Stream::Training);
            (0..n_train).map(|_| domain.sample_uniform(&mut rng)).collect()
        }
    };
    let targets = points.iter().map(|x| barrier.eval_unchecked(x)).collect();
    Ok(TrainingSet { points, targets })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    kernel: KernelSpec,
    centers: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    gp_regularizer: f64,
}

/// `1e-8 * sigma_f^2`, a jitter-scale ridge.
pub fn default_gp_regularizer(kernel: &KernelSpec) -> f64 {
    match *kernel {
        KernelSpec::SquaredExponential { signal_variance, .. } => 1e-8 * signal_variance,
        KernelSpec::Polynomial { .. } => 1e-8,
    }
}

/// `alpha = (K + gp_regularizer I)^{-1} y`.
pub fn fit_gp(train: &TrainingSet, kernel: KernelSpec, gp_regularizer: f64) -> Result<GpModel> {
    if !matches!(kernel, KernelSpec::SquaredExponential { .. }) {
        return Err(Error::UnsupportedKernel("the envelope uses the squared-exponential kernel".into()));
    }
    kernel.validate()?;
    check_dim(train.points.len(), train.targets.len())?;
    let k = gram(&kernel, &train.points)?;
    let alpha = factorize_regularized(k.as_ref(), gp_regularizer)?.solve(&train.targets)?;
    Ok(GpModel { kernel, centers: train.points.clone(), alpha, gp_regularizer })
}

impl GpModel {
    /// Builds a model from explicit representer coefficients.
    pub fn from_parts(kernel: KernelSpec, centers: Vec<Vec<f64>>, alpha: Vec<f64>, gp_regularizer: f64) -> Result<Self> {
        check_dim(centers.len(), alpha.len())?;
        kernel.validate()?;
        Ok(Self { kernel, centers, alpha, gp_regularizer })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn gp_regularizer(&self) -> f64 {
        self.gp_regularizer
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.centers.iter().zip(&self.alpha).map(|(c, a)| a * self.kernel.eval_unchecked(c, x)).sum()
    }

    pub fn mean_many(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.par_iter().map(|x| self.mean(x)).collect()
    }
}

/// `sqrt(alpha^T K alpha)`.
pub fn rkhs_norm(model: &GpModel) -> Result<f64> {
    if model.is_empty() {
        return Ok(0.0);
    }
    let k = gram(&model.kernel, &model.centers)?;
    let a = Mat::from_fn(model.len(), 1, |i, _| model.alpha[i]);
    let q = (a.transpose() * &k * &a)[(0, 0)];
    Ok(q.max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupErrors {
    pub zeta1_hat: f64,
    pub zeta2_hat: f64,
    pub grid_counts: Vec<usize>,
    pub grid_spacing: Vec<f64>,
    pub worst_zeta1_point: Vec<f64>,
    pub worst_zeta2_point: Vec<f64>,
}

/// Inflated grid maxima of `|B - B~|` and `|w(x)^T (B - B~)(X+)|`.
pub fn sup_errors(
    barrier: &Polynomial,
    model: &GpModel,
    cme: &EmpiricalCme,
    domain: &StateBox,
    grid_counts: &[usize],
) -> Result<SupErrors> {
    check_dim(domain.dim(), barrier.num_vars())?;
    check_dim(domain.dim(), grid_counts.len())?;
    check_dim(domain.dim(), cme.dim())?;
    let grid = domain.grid(grid_counts);
    let succ_err: Vec<f64> = cme.successors().par_iter().map(|x| barrier.eval_unchecked(x) - model.mean(x)).collect();
    let expectation = cme.expectation_of(&succ_err)?;
    let pairs: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|x| {
            let e1 = (barrier.eval_unchecked(x) - model.mean(x)).abs();
            let e2 = expectation.eval(x).map(f64::abs).unwrap_or(f64::INFINITY);
            (e1, e2)
        })
        .collect();
    let argmax = |f: &dyn Fn(&(f64, f64)) -> f64| {
        pairs.iter().enumerate().fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, p)| if f(p) > bv { (i, f(p)) } else { (bi, bv) })
    };
    let (i1, z1) = argmax(&|p| p.0);
    let (i2, z2) = argmax(&|p| p.1);
    Ok(SupErrors {
        zeta1_hat: SUP_INFLATION * z1,
        zeta2_hat: SUP_INFLATION * z2,
        grid_spacing: domain.grid_spacing(grid_counts),
        grid_counts: grid_counts.to_vec(),
        worst_zeta1_point: grid[i1].clone(),
        worst_zeta2_point: grid[i2].clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeConfig {
    pub zeta1: f64,
    pub zeta2: f64,
    pub b_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    pub errors: SupErrors,
    pub rkhs_norm: f64,
    pub n_train: usize,
    pub config: EnvelopeConfig,
}

impl EnvelopeReport {
    /// `zeta1 - zeta1_hat`; negative means violated.
    pub fn zeta1_margin(&self) -> f64 {
        self.config.zeta1 - self.errors.zeta1_hat
    }

    pub fn zeta2_margin(&self) -> f64 {
        self.config.zeta2 - self.errors.zeta2_hat
    }

    pub fn norm_margin(&self) -> f64 {
        self.config.b_bar - self.rkhs_norm
    }

    pub fn passed(&self) -> bool {
        self.zeta1_margin() >= 0.0 && self.zeta2_margin() >= 0.0 && self.norm_margin() >= 0.0
    }

    /// Names of the failed checks.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.zeta1_margin() < 0.0 {
            out.push("zeta1");
        }
        if self.zeta2_margin() < 0.0 {
            out.push("zeta2");
        }
        if self.norm_margin() < 0.0 {
            out.push("rkhs_norm");
        }
        out
    }
}

/// Validation lattice for a training lattice: every training point plus
/// every midpoint between neighbours.
pub fn validation_counts(train_counts: &[usize]) -> Vec<usize> {
    train_counts.iter().map(|&k| if k <= 1 { 3 } else { 2 * k - 1 }).collect()
}

pub fn certify_envelope(
    barrier: &Polynomial,
    model: &GpModel,
    cme: &EmpiricalCme,
    domain: &StateBox,
    cfg: EnvelopeConfig,
    grid_counts: &[usize],
) -> Result<EnvelopeReport> {
    let errors = sup_errors(barrier, model, cme, domain, grid_counts)?;
    Ok(EnvelopeReport { errors, rkhs_norm: rkhs_norm(model)?, n_train: model.len(), config: cfg })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeSettings {
    pub n_train: usize,
    pub max_refinements: usize,
    /// Upper limit on the number of GP centers.
    pub max_train: usize,
    pub gp_regularizer: Option<f64>,
}

impl Default for EnvelopeSettings {
    fn default() -> Self {
        Self { n_train: 1728, max_refinements: 3, max_train: 8000, gp_regularizer: None }
    }
}

/// Fits the envelope on a training lattice over `domain`, doubling the
/// number of centers (up to `max_refinements` times) until `zeta1_hat <=
/// zeta1`. Returns the last model and its report, passing or not.
pub fn build_envelope(
    barrier: &Polynomial,
    cme: &EmpiricalCme,
    domain: &StateBox,
    kernel: KernelSpec,
    cfg: EnvelopeConfig,
    settings: EnvelopeSettings,
) -> Result<(GpModel, EnvelopeReport)> {
    let reg = settings.gp_regularizer.unwrap_or_else(|| default_gp_regularizer(&kernel));
    let mut n_train = settings.n_train.min(settings.max_train);
    let mut round = 0;
    loop {
        let train = sample_barrier(barrier, domain, n_train, SamplingScheme::Grid, 0)?;
        let model = fit_gp(&train, kernel, reg)?;
        let counts = validation_counts(&grid_allocation(domain, n_train));
        let report = certify_envelope(barrier, &model, cme, domain, cfg, &counts)?;
        let next = (2 * n_train).min(settings.max_train);
        if report.zeta1_margin() >= 0.0 || round >= settings.max_refinements || next == n_train {
            return Ok((model, report));
        }
        n_train = next;
        round += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cme::fit_cme;
    use crate::kernels::eval_kernel;
    use crate::polynomials::Monomial;
    use crate::systems::{sample_transitions, System};

    fn se() -> KernelSpec {
        KernelSpec::squared_exponential(1.0, 0.25).unwrap()
    }

    fn unit_square() -> StateBox {
        StateBox::from_bounds(&[(0.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    fn quad2() -> Polynomial {
        let m = |e: [u32; 2]| Monomial(e.to_vec());
        Polynomial::from_terms(2, [(m([2, 0]), 1.0), (m([0, 1]), -0.5), (m([0, 0]), 0.25)])
    }

    #[test]
    fn allocation_follows_edge_lengths() {
        let lane = StateBox::from_bounds(&[(1.0, 10.0), (-7.0, 7.0), (-0.05, 0.05)]).unwrap();
        assert_eq!(grid_allocation(&lane, 1728), vec![19, 30, 3]);
        assert_eq!(grid_allocation(&unit_square(), 100), vec![10, 10]);
        assert_eq!(grid_allocation(&unit_square(), 1), vec![1, 1]);
        // too few points for three per axis
        let thin = StateBox::from_bounds(&[(0.0, 10.0), (0.0, 0.01)]).unwrap();
        assert_eq!(grid_allocation(&thin, 8), vec![8, 1]);
    }

    #[test]
    fn sampling() {
        let b = quad2();
        let one = sample_barrier(&b, &unit_square(), 1, SamplingScheme::Grid, 0).unwrap();
        assert_eq!(one.points, vec![vec![0.5, 0.5]]);
        let grid = sample_barrier(&b, &unit_square(), 50, SamplingScheme::Grid, 0).unwrap();
        assert!((grid.points.len() as i64 - 50).abs() <= 10);
        let uni = sample_barrier(&b, &unit_square(), 50, SamplingScheme::Uniform, 3).unwrap();
        assert_eq!(uni.points.len(), 50);
        for s in [&grid, &uni] {
            for (x, y) in s.points.iter().zip(&s.targets) {
                assert_eq!(*y, b.evaluate(x).unwrap());
            }
        }
        assert!(sample_barrier(&b, &unit_square(), 0, SamplingScheme::Grid, 0).is_err());
    }

    #[test]
    fn single_center_fit_and_norm() {
        let k = KernelSpec::squared_exponential(1500.0f64.powi(2), 2.98f64.powi(2)).unwrap();
        let train = TrainingSet { points: vec![vec![0.3, -0.2]], targets: vec![2.0] };
        let m = fit_gp(&train, k, 0.5).unwrap();
        assert!((m.alpha()[0] - 2.0 / (1500.0f64.powi(2) + 0.5)).abs() < 1e-18);
        let unit = GpModel::from_parts(k, vec![vec![0.3, -0.2]], vec![1.0], 0.0).unwrap();
        assert!((rkhs_norm(&unit).unwrap() / 1500.0 - 1.0).abs() < 1e-10);
        let zero = GpModel::from_parts(k, vec![vec![0.0, 0.0]], vec![0.0], 0.0).unwrap();
        assert_eq!(rkhs_norm(&zero).unwrap(), 0.0);
        let two = GpModel::from_parts(k, vec![vec![0.3, -0.2]], vec![2.0], 0.0).unwrap();
        assert!((rkhs_norm(&two).unwrap() - 2.0 * rkhs_norm(&unit).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn near_interpolation() {
        let train = sample_barrier(&quad2(), &unit_square(), 20, SamplingScheme::Uniform, 1).unwrap();
        let m = fit_gp(&train, se(), 1e-10).unwrap();
        let ymax = train.targets.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (x, y) in train.points.iter().zip(&train.targets) {
            assert!((m.mean(x) - y).abs() <= 1e-6 * ymax);
        }
    }

    #[test]
    fn constant_target_stays_flat() {
        let one = Polynomial::constant(2, 1.0);
        let train = sample_barrier(&one, &unit_square(), 64, SamplingScheme::Grid, 0).unwrap();
        let m = fit_gp(&train, se(), 1e-6).unwrap();
        let inner = StateBox::from_bounds(&[(0.1, 0.9), (0.1, 0.9)]).unwrap();
        for x in inner.grid(&[15, 15]) {
            let v = m.mean(&x);
            assert!((0.9..=1.1).contains(&v), "{v}");
        }
    }

    #[test]
    fn norm_paths_agree() {
        // alpha^T K alpha = alpha^T y - reg |alpha|^2 since K alpha = y - reg alpha
        let train = sample_barrier(&quad2(), &unit_square(), 30, SamplingScheme::Uniform, 4).unwrap();
        let reg = 1e-3;
        let m = fit_gp(&train, se(), reg).unwrap();
        let direct = rkhs_norm(&m).unwrap().powi(2);
        let a = m.alpha();
        let via_targets: f64 =
            a.iter().zip(&train.targets).map(|(a, y)| a * y).sum::<f64>() - reg * a.iter().map(|v| v * v).sum::<f64>();
        assert!((direct - via_targets).abs() <= 1e-8 * direct, "{direct} {via_targets}");
        // against a pairwise double sum as well
        let mut pairwise = 0.0;
        for i in 0..m.len() {
            for j in 0..m.len() {
                pairwise += a[i] * a[j] * eval_kernel(m.kernel(), &m.centers()[i], &m.centers()[j]).unwrap();
            }
        }
        assert!((direct - pairwise).abs() <= 1e-10 * direct);
    }

    #[test]
    fn refit_on_subset_minimizes_its_objective() {
        // reg * |f|^2 + sum over remaining centers of (f(x) - y)^2
        let train = sample_barrier(&quad2(), &unit_square(), 25, SamplingScheme::Uniform, 9).unwrap();
        let reg = 1e-4;
        let full = fit_gp(&train, se(), reg).unwrap();
        let sub = TrainingSet { points: train.points[1..].to_vec(), targets: train.targets[1..].to_vec() };
        let reduced = fit_gp(&sub, se(), reg).unwrap();
        let objective = |m: &GpModel| {
            let fit: f64 = sub.points.iter().zip(&sub.targets).map(|(x, y)| (m.mean(x) - y).powi(2)).sum();
            fit + reg * rkhs_norm(m).unwrap().powi(2)
        };
        assert!(objective(&reduced) <= objective(&full) * (1.0 + 1e-9));
    }

    fn toy_cme() -> EmpiricalCme {
        let sys = System::LinearGaussian { alpha: 0.5, noise_std: 0.05 };
        let dom = StateBox::from_bounds(&[(-1.0, 1.0)]).unwrap();
        let data = sample_transitions(&sys, &dom, 100, 2).unwrap();
        fit_cme(&data, KernelSpec::polynomial(1.0, 1.0, 2).unwrap(), 1e-3).unwrap()
    }

    #[test]
    fn zeta2_respects_weight_bound() {
        let cme = toy_cme();
        let dom = StateBox::from_bounds(&[(-1.0, 1.0)]).unwrap();
        let b = Polynomial::var(1, 0).pow(2).add(&Polynomial::constant(1, 0.3)).unwrap();
        let train = sample_barrier(&b, &dom, 8, SamplingScheme::Grid, 0).unwrap();
        let m = fit_gp(&train, se(), 1e-6).unwrap();
        let errs = sup_errors(&b, &m, &cme, &dom, &[41]).unwrap();
        let pointwise = cme.successors().iter().map(|x| (b.evaluate(x).unwrap() - m.mean(x)).abs()).fold(0.0, f64::max);
        let mut bound = 0.0f64;
        for x in dom.grid(&[41]) {
            let w1: f64 = cme.weights(&x).unwrap().iter().map(|w| w.abs()).sum();
            bound = bound.max(w1 * pointwise);
        }
        assert!(errs.zeta2_hat <= SUP_INFLATION * bound * (1.0 + 1e-9));
        assert_eq!(errs.grid_spacing, vec![0.05]);
    }

    #[test]
    fn constant_barrier_is_nearly_exact() {
        let cme = toy_cme();
        let dom = StateBox::from_bounds(&[(-1.0, 1.0)]).unwrap();
        let b = Polynomial::constant(1, 2.0);
        let train = sample_barrier(&b, &dom, 60, SamplingScheme::Grid, 0).unwrap();
        let m = fit_gp(&train, se(), 1e-9).unwrap();
        let errs = sup_errors(&b, &m, &cme, &dom, &[119]).unwrap();
        assert!(errs.zeta1_hat <= 1e-3 * 2.0, "{}", errs.zeta1_hat);
    }

    #[test]
    fn envelope_pass_and_fail() {
        let cme = toy_cme();
        let dom = StateBox::from_bounds(&[(-1.0, 1.0)]).unwrap();
        let b = Polynomial::var(1, 0).pow(2);
        let generous = EnvelopeConfig { zeta1: 1e6, zeta2: 1e6, b_bar: 1e9 };
        let (model, report) = build_envelope(&b, &cme, &dom, se(), generous, EnvelopeSettings { n_train: 10, ..Default::default() }).unwrap();
        assert!(report.passed());
        assert_eq!(report.n_train, model.len());
        let tight = EnvelopeConfig { b_bar: 0.5 * report.rkhs_norm, ..generous };
        let counts = validation_counts(&grid_allocation(&dom, 10));
        let failed = certify_envelope(&b, &model, &cme, &dom, tight, &counts).unwrap();
        assert!(!failed.passed());
        assert_eq!(failed.failures(), vec!["rkhs_norm"]);
    }

    #[test]
    fn certified_pass_bounds_grid_error() {
        let cme = toy_cme();
        let dom = StateBox::from_bounds(&[(-1.0, 1.0)]).unwrap();
        let b = Polynomial::var(1, 0).pow(2);
        let cfg = EnvelopeConfig { zeta1: 0.05, zeta2: 0.05, b_bar: 1e6 };
        let (model, report) = build_envelope(&b, &cme, &dom, se(), cfg, EnvelopeSettings { n_train: 6, ..Default::default() }).unwrap();
        assert!(report.passed(), "{report:?}");
        for x in dom.grid(&report.errors.grid_counts) {
            assert!((b.evaluate(&x).unwrap() - model.mean(&x)).abs() <= cfg.zeta1);
        }
    }
}
