//! Safety bounds from certificates, and independent checks of them.
//!
//! [`probability_bound`] turns `(eta, gamma, c, T)` into the guaranteed
//! probability of avoiding the unsafe set. [`validate_certificate`]
//! re-checks the barrier conditions pointwise on lattices, without the SOS
//! machinery, and [`monte_carlo_safety`] estimates the true probability by
//! rollout.

use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::cme::{robust_margin, EmpiricalCme};
use crate::error::{check_dim, Error, Result};
use crate::polynomials::SemiAlgebraicSet;
use crate::sos::{BarrierCertificate, SafetySets};
use crate::systems::{substream, StateBox, Stream, System};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(u32),
    Infinite,
}

impl Horizon {
    pub fn new(steps: u32) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter { name: "T", reason: "horizon must be at least one step".into() });
        }
        Ok(Horizon::Finite(steps))
    }
}

/// Unsafe components (their union is avoided) and the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub unsafe_sets: Vec<SemiAlgebraicSet>,
    pub horizon: Horizon,
}

/// `P(avoid unsafe for T steps) >= p_psi`, holding with probability at
/// least `confidence` over the data.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyBound {
    pub p_psi: f64,
    pub confidence: f64,
    pub fingerprint: String,
}

/// `max(0, 1 - (eta + c T) / gamma)`; for an infinite horizon `c` must be 0.
pub fn probability_bound(eta: f64, gamma: f64, c: f64, horizon: Horizon) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidParameter { name: "eta", reason: format!("must be nonnegative, got {eta}") });
    }
    if !(gamma > eta) {
        return Err(Error::InvalidParameter { name: "gamma", reason: format!("must exceed eta = {eta}, got {gamma}") });
    }
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter { name: "c", reason: format!("must be nonnegative, got {c}") });
    }
    let drift = match horizon {
        Horizon::Finite(0) => {
            return Err(Error::InvalidParameter { name: "T", reason: "horizon must be at least one step".into() })
        }
        Horizon::Finite(t) => c * t as f64,
        Horizon::Infinite if c == 0.0 => 0.0,
        Horizon::Infinite => {
            return Err(Error::InvalidParameter { name: "c", reason: "an infinite horizon needs c = 0".into() })
        }
    };
    Ok((1.0 - (eta + drift) / gamma).max(0.0))
}

/// [`probability_bound`] for a certificate.
pub fn certificate_bound(cert: &BarrierCertificate, horizon: Horizon) -> Result<SafetyBound> {
    Ok(SafetyBound {
        p_psi: probability_bound(cert.eta, cert.gamma, cert.c, horizon)?,
        confidence: 1.0 - cert.ambiguity.rho,
        fingerprint: cert.fingerprint.clone(),
    })
}

/// Worst grid point of one barrier condition. `margin >= 0` means the
/// condition holds there.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub name: String,
    pub worst_point: Vec<f64>,
    pub worst_value: f64,
    pub threshold: f64,
    pub margin: f64,
    pub points_checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsificationReport {
    pub checks: Vec<ConditionCheck>,
}

impl FalsificationReport {
    pub fn min_margin(&self) -> f64 {
        self.checks.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.min_margin() >= -tol
    }

    pub fn check(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Lattice points of the set's bounding box that satisfy its inequalities.
fn set_grid(set: &SemiAlgebraicSet, per_axis: usize) -> Result<Vec<Vec<f64>>> {
    let hull = set.box_hull().ok_or_else(|| Error::InvalidParameter {
        name: "set",
        reason: "validation needs a bounding box for every set".into(),
    })?;
    let grid = hull.grid(&vec![per_axis; hull.dim()]);
    Ok(grid.into_iter().filter(|x| set.contains(x, 0.0)).collect())
}

/// `(index, value)` of the largest `f` over `points`.
fn arg_max(points: &[Vec<f64>], f: impl Fn(&[f64]) -> f64 + Sync) -> (usize, f64) {
    let vals: Vec<f64> = points.par_iter().map(|x| f(x)).collect();
    vals.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
}

/// Checks the barrier conditions of `cert` on lattices with `per_axis`
/// points per dimension:
///
/// - `domain`: `B >= 0` on the state set,
/// - `initial`: `B <= eta` on the initial set,
/// - `unsafe[k]`: `B >= gamma` on each unsafe component,
/// - `martingale`: `w(x)^T B(X+) - B(x) + robust_margin(x) <= c` on the
///   state set.
pub fn validate_certificate(
    cert: &BarrierCertificate,
    sets: &SafetySets,
    cme: &EmpiricalCme,
    per_axis: usize,
) -> Result<FalsificationReport> {
    let b = &cert.barrier;
    check_dim(cme.dim(), b.num_vars())?;
    check_dim(cme.dim(), sets.domain.ambient_dim())?;
    if per_axis == 0 {
        return Err(Error::InvalidParameter { name: "grid_density", reason: "need at least one point per axis".into() });
    }
    let mut checks = Vec::new();
    let mut push = |name: String, pts: &[Vec<f64>], (i, worst): (usize, f64), threshold: f64, margin: f64| {
        checks.push(ConditionCheck {
            name,
            worst_point: pts.get(i).cloned().unwrap_or_default(),
            worst_value: worst,
            threshold,
            margin,
            points_checked: pts.len(),
        });
    };

    let domain = set_grid(&sets.domain, per_axis)?;
    let (i, neg_min) = arg_max(&domain, |x| -b.eval_unchecked(x));
    push("domain".into(), &domain, (i, -neg_min), 0.0, -neg_min);

    let initial = set_grid(&sets.initial, per_axis)?;
    let found = arg_max(&initial, |x| b.eval_unchecked(x));
    push("initial".into(), &initial, found, cert.eta, cert.eta - found.1);

    for (k, u) in sets.unsafe_sets.iter().enumerate() {
        let pts = set_grid(u, per_axis)?;
        let (i, neg_min) = arg_max(&pts, |x| -b.eval_unchecked(x));
        push(format!("unsafe[{k}]"), &pts, (i, -neg_min), cert.gamma, -neg_min - cert.gamma);
    }

    let expectation = cme.expectation_of_fn(|x| b.eval_unchecked(x))?;
    let kx = *cme.kernel();
    let found = arg_max(&domain, |x| {
        expectation.eval(x).unwrap_or(f64::INFINITY) - b.eval_unchecked(x) + robust_margin(&kx, &cert.ambiguity, x)
    });
    push("martingale".into(), &domain, found, cert.c, cert.c - found.1);

    Ok(FalsificationReport { checks })
}

/// Rollout estimate of the probability of avoiding every unsafe component
/// for `horizon` steps from a uniform initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub runs: usize,
    pub safe_runs: usize,
    pub probability: f64,
    /// Two-sided exact (Clopper-Pearson) interval at [`MC_CONFIDENCE`].
    pub lower: f64,
    pub upper: f64,
}

pub const MC_CONFIDENCE: f64 = 0.99;

/// Exact binomial interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: usize, n: usize, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || k > n || !(0.0 < confidence && confidence < 1.0) {
        return Err(Error::InvalidParameter { name: "clopper_pearson", reason: format!("k={k}, n={n}, confidence={confidence}") });
    }
    let tail = 0.5 * (1.0 - confidence);
    let beta = |a: f64, b: f64| Beta::new(a, b).map_err(|e| Error::InvalidParameter { name: "beta", reason: e.to_string() });
    let (kf, nf) = (k as f64, n as f64);
    let lower = if k == 0 { 0.0 } else { beta(kf, nf - kf + 1.0)?.inverse_cdf(tail) };
    let upper = if k == n { 1.0 } else { beta(kf + 1.0, nf - kf)?.inverse_cdf(1.0 - tail) };
    Ok((lower, upper))
}

pub fn monte_carlo_safety(
    system: &System,
    initial: &StateBox,
    unsafe_sets: &[SemiAlgebraicSet],
    horizon: usize,
    n_runs: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    check_dim(system.dim(), initial.dim())?;
    for u in unsafe_sets {
        check_dim(system.dim(), u.ambient_dim())?;
    }
    if n_runs < 100 {
        return Err(Error::InvalidParameter { name: "n_runs", reason: format!("need at least 100 runs, got {n_runs}") });
    }
    let hits = |x: &[f64]| unsafe_sets.iter().any(|u| u.contains(x, 0.0));
    let safe_runs = (0..n_runs as u64)
        .into_par_iter()
        .filter(|&i| {
            let mut init_rng = substream(seed, Stream::InitialStates, i);
            let mut noise_rng = substream(seed, Stream::RolloutNoise, i);
            let mut x = initial.sample_uniform(&mut init_rng);
            if hits(&x) {
                return false;
            }
            for _ in 0..horizon {
                x = system.step(&x, &mut noise_rng);
                if hits(&x) {
                    return false;
                }
            }
            true
        })
        .count();
    let (lower, upper) = clopper_pearson(safe_runs, n_runs, MC_CONFIDENCE)?;
    Ok(MonteCarloEstimate { runs: n_runs, safe_runs, probability: safe_runs as f64 / n_runs as f64, lower, upper })
}
