//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cme_barrier::cme::{cme_monomial_lift, fit_cme, fit_cme_from};
use cme_barrier::config::{Profile, RunConfig};
use cme_barrier::gp_envelope::{
    certify_envelope, default_gp_regularizer, fit_gp, grid_allocation, rkhs_norm, sample_barrier, validation_counts,
    EnvelopeConfig, GpModel, SamplingScheme,
};
use cme_barrier::kernels::KernelSpec;
use cme_barrier::pipeline::{certify, load_or_sample, sweep_epsilon};
use cme_barrier::polynomials::{MonomialBasis, Polynomial};
use cme_barrier::safety::{monte_carlo_safety, probability_bound, Horizon};
use cme_barrier::sdp::{solve, SdpProblem, SdpStatus, SolverSettings};
use cme_barrier::sos::{sos_to_sdp, solve_sos, AffinePolynomial, SosProgram};
use cme_barrier::systems::{sample_transitions, StateBox, System};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

const REFERENCE_BARRIER: &str = "\
0.562 * x1^0 x2^0 x3^0 + -0.048 * x1^1 x2^0 x3^0 + 0.044 * x1^0 x2^1 x3^0 + -0.270 * x1^0 x2^0 x3^1 + \
-1.425e-4 * x1^2 x2^0 x3^0 + -0.012 * x1^1 x2^1 x3^0 + -0.028 * x1^1 x2^0 x3^1 + 0.162 * x1^0 x2^2 x3^0 + \
0.774 * x1^0 x2^1 x3^1 + 0.716 * x1^0 x2^0 x3^2";

fn bound_formula() -> Outcome {
    let p = probability_bound(0.58, 5.0, 1e-4, Horizon::Finite(10)).unwrap();
    outcome((p - 0.8838).abs() <= 1e-12, format!("p = {p:.15}"))
}

fn reference_barrier() -> Outcome {
    let b = Polynomial::parse(3, REFERENCE_BARRIER).unwrap();
    let v = b.evaluate(&[1.5, 0.0, 0.0]).unwrap();
    outcome((v - 0.48968).abs() <= 1e-4 && v <= 0.58, format!("B(1.5, 0, 0) = {v:.6}, eta = 0.58"))
}

fn plain_sos(p: &Polynomial) -> SosProgram {
    let mut prog = SosProgram::new(p.num_vars());
    prog.add_putinar_constraint("p", AffinePolynomial::constant(p.clone()), &[], 0).unwrap();
    prog
}

fn sdp_suite() -> Outcome {
    let settings = SolverSettings::default();
    let mut toy = SdpProblem::new(vec![2], 1);
    toy.add_cost_entry(0, 0, 0, 1.0);
    toy.add_cost_entry(0, 1, 1, 1.0);
    toy.add_constraint_entry(0, 0, 0, 0, 1.0);
    toy.set_rhs(0, 1.0);
    let toy = solve(&toy, settings).unwrap();
    let toy_ok = toy.status == SdpStatus::Optimal && (toy.primal_objective - 1.0).abs() <= 1e-7;

    let x = Polynomial::var(1, 0);
    let sq = x.pow(2).sub(&Polynomial::constant(1, 1.0)).unwrap().pow(2);
    let prog = plain_sos(&sq);
    let sol = solve_sos(&prog, settings).unwrap();
    let recon = prog.residual_polynomial(0, &sol.free, &sol.grams[0]).unwrap().max_abs_coefficient();

    let (x, y) = (Polynomial::var(2, 0), Polynomial::var(2, 1));
    let motzkin = x.pow(4).mul(&y.pow(2)).unwrap()
        .add(&x.pow(2).mul(&y.pow(4)).unwrap()).unwrap()
        .sub(&x.pow(2).mul(&y.pow(2)).unwrap().scale(3.0)).unwrap()
        .add(&Polynomial::constant(2, 1.0)).unwrap();
    let motzkin = solve(&sos_to_sdp(&plain_sos(&motzkin)), settings).unwrap().status;
    outcome(
        toy_ok && recon <= 1e-7 && motzkin == SdpStatus::Infeasible,
        format!("min-trace = {:.10}, (x^2-1)^2 reconstruction = {recon:.2e}, Motzkin {motzkin:?}", toy.primal_objective),
    )
}

fn lift_case(anchors: Vec<Vec<f64>>, successors: Vec<Vec<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    let n = anchors[0].len();
    let cme = fit_cme_from(anchors, successors, KernelSpec::polynomial(0.5, 1.0, 2).unwrap(), 1e-3).unwrap();
    let basis = MonomialBasis::new(n, 2);
    let q = cme_monomial_lift(&cme, &basis).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let b: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let poly = basis.combine(&b).unwrap();
        let at_succ: Vec<f64> = cme.successors().iter().map(|s| poly.evaluate(s).unwrap()).collect();
        let exp = cme.expectation_of(&at_succ).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let direct = exp.eval(&x).unwrap();
            let lifted: f64 = b.iter().zip(&q).map(|(bj, qj)| bj * qj.evaluate(&x).unwrap()).sum();
            worst = worst.max((direct - lifted).abs() / direct.abs().max(1.0));
        }
    }
    worst
}

fn lift_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let one = lift_case(vec![vec![0.3], vec![-0.7]], vec![vec![0.5], vec![0.1]], &mut rng);
    let mut pts = || (0..50).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>();
    let (a, s) = (pts(), pts());
    let three = lift_case(a, s, &mut rng);
    outcome(one <= 1e-8 && three <= 1e-8, format!("worst relative gap: 1-D {one:.2e}, 3-D {three:.2e}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
}

fn cme_consistency() -> Outcome {
    let sys = System::LinearGaussian { alpha: 0.8, noise_std: 0.1 };
    let dom = StateBox::from_bounds(&[(-1.0, 1.0)]).unwrap();
    let kernel = KernelSpec::squared_exponential(1.0, 0.25).unwrap();
    let test: Vec<f64> = (0..50).map(|i| -0.9 + 1.8 * i as f64 / 49.0).collect();
    let mut medians = Vec::new();
    for n in [100usize, 500, 2000] {
        let per_seed: Vec<f64> = (0..5)
            .map(|seed| {
                let data = sample_transitions(&sys, &dom, n, 100 + seed).unwrap();
                let cme = fit_cme(&data, kernel, 1e-3 / n as f64).unwrap();
                let exp = cme.expectation_of_fn(|x| x[0]).unwrap();
                median(test.iter().map(|x| (exp.eval(&[*x]).unwrap() - 0.8 * x).abs()).collect())
            })
            .collect();
        medians.push(median(per_seed));
    }
    let ok = medians.windows(2).all(|w| w[1] < w[0]) && medians[2] <= 0.05;
    outcome(ok, format!("median |error| at N = 100, 500, 2000: {medians:.4?}"))
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn desk_config(tag: &str) -> RunConfig {
    let mut cfg = RunConfig::profile(Profile::Desk);
    cfg.output_dir = std::env::temp_dir().join(format!("cme-barrier-acceptance-{}-{tag}", std::process::id()));
    cfg
}

fn end_to_end() -> Outcome {
    let cfg = desk_config("e2e");
    let cert = match certify(&cfg) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let margin = cert.validation.min_margin();
    let p = cert.file.p_psi;
    let sys = cfg.system().unwrap();
    let sets = cfg.safety_sets();
    let mc = monte_carlo_safety(&sys, &cfg.initial, &sets.unsafe_sets, cfg.horizon as usize, 10_000, cfg.seed).unwrap();
    let ok = margin >= -1e-6 && p >= 0.5 && mc.lower > p - 0.01;
    outcome(
        ok,
        format!("eta = {:.4}, p_psi = {p:.4}, min grid margin = {margin:.3e}, MC {}/{} lower99 = {:.4}", cert.file.eta, mc.safe_runs, mc.runs, mc.lower),
    )
}

fn epsilon_sweep() -> Outcome {
    let mut cfg = desk_config("sweep");
    cfg.sweep_epsilons = vec![0.0, 0.5, 1.0, 2.0];
    cfg.sweep_repeats = 1;
    let table = match sweep_epsilon(&cfg) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let ps: Vec<f64> = table.rows.iter().map(|r| r.per_seed[0]).collect();
    let ok = ps.windows(2).all(|w| w[1] <= w[0]) && ps[0] > 0.0;
    outcome(ok, format!("p_psi at eps = 0, 0.5, 1, 2: {ps:.4?}"))
}

fn envelope() -> Outcome {
    let k = KernelSpec::squared_exponential(1500.0f64.powi(2), 2.98f64.powi(2)).unwrap();
    let unit = GpModel::from_parts(k, vec![vec![2.0, 0.0, 0.0]], vec![1.0], 0.0).unwrap();
    let norm = rkhs_norm(&unit).unwrap();
    let norm_ok = (norm / 1500.0 - 1.0).abs() <= 1e-10;

    let cfg = desk_config("envelope");
    let cert = match certify(&cfg) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let data = load_or_sample(&cfg).unwrap();
    let cme = fit_cme(&data, cfg.kx().unwrap(), cfg.lambda).unwrap();
    let env_cfg = EnvelopeConfig { zeta1: cfg.zeta1, zeta2: cfg.zeta2, b_bar: cfg.b_bar };
    let mut hats = Vec::new();
    for n in [125usize, 1000, 8000] {
        let train = sample_barrier(&cert.file.barrier, &cfg.domain, n, SamplingScheme::Grid, 0).unwrap();
        let model = fit_gp(&train, k, default_gp_regularizer(&k)).unwrap();
        let counts = validation_counts(&grid_allocation(&cfg.domain, n));
        let report = certify_envelope(&cert.file.barrier, &model, &cme, &cfg.domain, env_cfg, &counts).unwrap();
        hats.push(report.errors.zeta1_hat);
    }
    let ok = norm_ok && hats.windows(2).all(|w| w[1] < w[0]);
    outcome(ok, format!("single-center norm / sigma_f = {:.12}, zeta1_hat at 125, 1000, 8000: {}", norm / 1500.0, fmt_list(&hats)))
}

fn determinism() -> Outcome {
    let a = desk_config("det-a");
    let b = desk_config("det-b");
    match (certify(&a), certify(&b)) {
        (Ok(ca), Ok(cb)) => {
            let (ta, tb) = (std::fs::read(&ca.path).unwrap(), std::fs::read(&cb.path).unwrap());
            outcome(ta == tb, format!("{} bytes, identical = {}", ta.len(), ta == tb))
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e.to_string()),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("bound formula", bound_formula),
        ("reference barrier spot check", reference_barrier),
        ("SDP solver suite", sdp_suite),
        ("CME lift equivalence", lift_equivalence),
        ("CME statistical consistency", cme_consistency),
        ("desk-scale end-to-end certification", end_to_end),
        ("epsilon sweep monotonicity", epsilon_sweep),
        ("GP envelope", envelope),
        ("certificate determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == id.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.ok { "PASS" } else { "FAIL" };
        println!("criterion {id} {verdict} {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), o.detail);
        failed += usize::from(!o.ok);
    }
    for tag in ["e2e", "sweep", "envelope", "det-a", "det-b"] {
        let _ = std::fs::remove_dir_all(desk_config(tag).output_dir);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
