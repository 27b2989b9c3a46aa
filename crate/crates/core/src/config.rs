//! Run configuration in a flat `key=value` text format.
//!
//! Every run starts from a named profile (`desk` or `paper`) and overrides
//! individual keys. Lines starting with `#` are comments. Angles carry an
//! explicit unit key:
//!
//! ```text
//! profile=desk
//! delta_f=5
//! angle_unit=deg
//! epsilon=0.2
//! unsafe.1.lower=1,-7,-0.05
//! unsafe.1.upper=10,-6,0.05
//! ```
//!
//! Unsafe components are numbered from 1 and replace the profile's list
//! when any `unsafe.*` key is present.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::cme::AmbiguityConfig;
use crate::error::{Error, Result};
use crate::gp_envelope::EnvelopeSettings;
use crate::kernels::KernelSpec;
use crate::polynomials::box_to_semialgebraic;
use crate::safety::Horizon;
use crate::sdp::SolverSettings;
use crate::sos::{EtaMode, SafetySets, SosSynthesisConfig};
use crate::systems::{LaneKeepingParams, StateBox, System};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Parse(format!("unknown profile `{s}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleUnit {
    Deg,
    Rad,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemConfig {
    LaneKeeping {
        tau: f64,
        v: f64,
        l_r: f64,
        l_f: f64,
        /// in `angle_unit`
        delta_f: f64,
        angle_unit: AngleUnit,
        noise_std: [f64; 3],
    },
    LinearGaussian {
        alpha: f64,
        noise_std: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub system: SystemConfig,
    pub domain: StateBox,
    pub initial: StateBox,
    pub unsafe_sets: Vec<StateBox>,
    pub kx_a: f64,
    pub kx_b: f64,
    pub kx_degree: u32,
    pub gp_signal_variance: f64,
    pub gp_lengthscale_sq: f64,
    pub n_samples: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub b_bar: f64,
    pub gamma: f64,
    /// `None` minimizes eta.
    pub eta: Option<f64>,
    pub c: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub horizon: u32,
    pub barrier_degree: u32,
    pub multiplier_degree: u32,
    pub seed: u64,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    pub grid_density: usize,
    pub mc_runs: usize,
    pub envelope_n_train: usize,
    pub envelope_max_train: usize,
    pub envelope_refinements: usize,
    pub sweep_epsilons: Vec<f64>,
    pub sweep_repeats: usize,
    pub sweep_b_bar: f64,
    pub workers: usize,
    pub plot_resolution: usize,
    pub plot_slice: f64,
    pub simulate_runs: usize,
    /// Existing dataset to certify from; generated from `seed` otherwise.
    pub data_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

fn lane_box(b: &[(f64, f64)]) -> StateBox {
    StateBox::from_bounds(b).expect("static box")
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let p = LaneKeepingParams::case_study();
        let desk = RunConfig {
            profile,
            system: SystemConfig::LaneKeeping {
                tau: p.tau,
                v: p.v,
                l_r: p.l_r,
                l_f: p.l_f,
                delta_f: 5.0,
                angle_unit: AngleUnit::Deg,
                noise_std: p.noise_std,
            },
            domain: lane_box(&[(1.0, 10.0), (-7.0, 7.0), (-0.05, 0.05)]),
            initial: lane_box(&[(1.0, 2.0), (-0.5, 0.5), (-0.005, 0.005)]),
            unsafe_sets: vec![
                lane_box(&[(1.0, 10.0), (-7.0, -6.0), (-0.05, 0.05)]),
                lane_box(&[(1.0, 10.0), (6.0, 7.0), (-0.05, 0.05)]),
            ],
            kx_a: 0.005,
            kx_b: 0.11,
            kx_degree: 2,
            gp_signal_variance: 1500.0 * 1500.0,
            gp_lengthscale_sq: 2.98 * 2.98,
            n_samples: 2000,
            lambda: 5e-7,
            epsilon: 0.1,
            rho: 0.05,
            b_bar: 0.1,
            gamma: 5.0,
            eta: None,
            c: 1e-4,
            zeta1: 0.01,
            zeta2: 0.01,
            horizon: 10,
            barrier_degree: 2,
            multiplier_degree: 2,
            seed: 1,
            solver_tol: 1e-8,
            solver_max_iters: 100,
            grid_density: 50,
            mc_runs: 10_000,
            envelope_n_train: 1728,
            envelope_max_train: 8000,
            envelope_refinements: 3,
            sweep_epsilons: vec![0.0, 0.5, 1.0, 2.0],
            sweep_repeats: 1,
            sweep_b_bar: 0.1,
            workers: 1,
            plot_resolution: 100,
            plot_slice: 0.0,
            simulate_runs: 10,
            data_path: None,
            output_dir: PathBuf::from("out"),
        };
        match profile {
            Profile::Desk => desk,
            Profile::Paper => RunConfig {
                n_samples: 10_000,
                lambda: 1e-7,
                epsilon: 1.0,
                b_bar: 0.06,
                mc_runs: 100_000,
                sweep_repeats: 10,
                ..desk
            },
        }
    }

    pub fn system(&self) -> Result<System> {
        let sys = match &self.system {
            SystemConfig::LaneKeeping { tau, v, l_r, l_f, delta_f, angle_unit, noise_std } => {
                let delta_f = match angle_unit {
                    AngleUnit::Deg => delta_f.to_radians(),
                    AngleUnit::Rad => *delta_f,
                };
                let params = LaneKeepingParams { tau: *tau, v: *v, l_r: *l_r, l_f: *l_f, delta_f, noise_std: *noise_std };
                params.validate()?;
                System::LaneKeeping(params)
            }
            SystemConfig::LinearGaussian { alpha, noise_std } => {
                if !alpha.is_finite() || !(*noise_std >= 0.0) {
                    return Err(Error::InvalidParameter { name: "alpha", reason: "alpha must be finite and noise_std nonnegative".into() });
                }
                System::LinearGaussian { alpha: *alpha, noise_std: *noise_std }
            }
        };
        Ok(sys)
    }

    pub fn kx(&self) -> Result<KernelSpec> {
        KernelSpec::polynomial(self.kx_a, self.kx_b, self.kx_degree)
    }

    pub fn gp_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::squared_exponential(self.gp_signal_variance, self.gp_lengthscale_sq)
    }

    pub fn ambiguity(&self) -> Result<AmbiguityConfig> {
        AmbiguityConfig::new(self.epsilon, self.rho, self.b_bar)
    }

    pub fn synthesis(&self) -> Result<SosSynthesisConfig> {
        let cfg = SosSynthesisConfig {
            barrier_degree: self.barrier_degree,
            multiplier_degree: self.multiplier_degree,
            gamma: self.gamma,
            c: self.c,
            zeta1: self.zeta1,
            zeta2: self.zeta2,
            ambiguity: self.ambiguity()?,
            objective: self.eta.map_or(EtaMode::Minimize, EtaMode::Fixed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn safety_sets(&self) -> SafetySets {
        SafetySets {
            domain: box_to_semialgebraic(&self.domain),
            initial: box_to_semialgebraic(&self.initial),
            unsafe_sets: self.unsafe_sets.iter().map(box_to_semialgebraic).collect(),
        }
    }

    pub fn solver(&self) -> SolverSettings {
        SolverSettings { tol: self.solver_tol, max_iters: self.solver_max_iters, verbose: false }
    }

    pub fn envelope(&self) -> EnvelopeSettings {
        EnvelopeSettings {
            n_train: self.envelope_n_train,
            max_refinements: self.envelope_refinements,
            max_train: self.envelope_max_train,
            gp_regularizer: None,
        }
    }

    pub fn horizon(&self) -> Horizon {
        Horizon::Finite(self.horizon)
    }

    /// Checks every field; the error names the offending key.
    pub fn validate(&self) -> std::result::Result<(), (String, Error)> {
        fn at(key: &'static str) -> impl Fn(Error) -> (String, Error) {
            move |e| (key.to_string(), e)
        }
        let sys = self.system().map_err(at("system"))?;
        let n = sys.dim();
        let dims = [("domain", &self.domain), ("initial", &self.initial)];
        for (key, b) in dims.into_iter().chain(self.unsafe_sets.iter().map(|b| ("unsafe", b))) {
            if b.dim() != n {
                return Err((format!("{key}.lower"), Error::DimensionMismatch { expected: n, got: b.dim() }));
            }
        }
        let inside = |b: &StateBox| b.lower().iter().zip(b.upper()).zip(self.domain.lower().iter().zip(self.domain.upper())).all(|((l, u), (dl, du))| l >= dl && u <= du);
        if !inside(&self.initial) {
            return Err(("initial.lower".into(), invalid("initial", "initial set must lie inside the domain")));
        }
        if self.unsafe_sets.is_empty() {
            return Err(("unsafe.1.lower".into(), invalid("unsafe", "at least one unsafe component is required")));
        }
        self.kx().map_err(at("kx_a"))?;
        self.gp_kernel().map_err(at("gp_signal_variance"))?;
        if self.n_samples == 0 {
            return Err(("n_samples".into(), invalid("N", "at least one sample is required")));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(("lambda".into(), invalid("lambda", "must be positive")));
        }
        let positive_counts = [
            ("horizon", self.horizon as usize),
            ("solver_max_iters", self.solver_max_iters),
            ("grid_density", self.grid_density),
            ("envelope_n_train", self.envelope_n_train),
            ("envelope_max_train", self.envelope_max_train),
            ("sweep_repeats", self.sweep_repeats),
            ("workers", self.workers),
            ("plot_resolution", self.plot_resolution),
        ];
        for (key, v) in positive_counts {
            if v == 0 {
                return Err((key.into(), Error::InvalidParameter { name: "count", reason: format!("{key} must be positive") }));
            }
        }
        if self.mc_runs < 100 {
            return Err(("mc_runs".into(), invalid("mc_runs", "need at least 100 runs")));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1.0) {
            return Err(("solver_tol".into(), invalid("tol", "must lie in (0, 1)")));
        }
        if self.sweep_epsilons.is_empty() || self.sweep_epsilons.iter().any(|e| !(*e >= 0.0)) {
            return Err(("sweep_epsilons".into(), invalid("epsilon", "need a nonempty list of nonnegative radii")));
        }
        if !(self.sweep_b_bar > 0.0) {
            return Err(("sweep_b_bar".into(), invalid("b_bar", "must be positive")));
        }
        let key = match self.synthesis() {
            Ok(_) => return Ok(()),
            Err(Error::InvalidParameter { name, .. }) => match name {
                "barrier_degree" | "multiplier_degree" | "gamma" | "c" | "eta" | "epsilon" | "rho" => name.to_string(),
                "zeta" => "zeta1".into(),
                "B_bar" | "b_bar" => "b_bar".into(),
                _ => "gamma".into(),
            },
            Err(_) => "gamma".into(),
        };
        Err((key, self.synthesis().unwrap_err()))
    }

    /// Parses a config file over the given profile (or the file's own
    /// `profile` key when `profile` is `None`).
    pub fn parse(text: &str, profile: Option<Profile>) -> Result<Self> {
        let mut lines: Vec<(usize, &str, &str)> = Vec::new();
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| line_err(lineno, "", "expected key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            if let Some(first) = seen.insert(k, lineno) {
                return Err(line_err(lineno, k, &format!("duplicate key (first set on line {first})")));
            }
            lines.push((lineno, k, v));
        }
        let file_profile = match lines.iter().find(|(_, k, _)| *k == "profile") {
            Some((ln, k, v)) => Some(Profile::from_name(v).map_err(|e| wrap(*ln, k, e))?),
            None => None,
        };
        let mut cfg = RunConfig::profile(profile.or(file_profile).unwrap_or(Profile::Desk));
        let mut unsafe_bounds: BTreeMap<usize, (Option<(usize, Vec<f64>)>, Option<(usize, Vec<f64>)>)> = BTreeMap::new();
        let mut box_keys: BTreeMap<&str, (usize, Vec<f64>)> = BTreeMap::new();
        let mut lane = match &cfg.system {
            SystemConfig::LaneKeeping { tau, v, l_r, l_f, delta_f, angle_unit, noise_std } => {
                (*tau, *v, *l_r, *l_f, *delta_f, *angle_unit, noise_std.to_vec())
            }
            SystemConfig::LinearGaussian { .. } => unreachable!("profiles use lane keeping"),
        };
        let mut system_kind = "lane_keeping".to_string();
        let (mut lg_alpha, mut lg_noise) = (0.8, 0.1);
        let mut noise_line = None;

        for &(ln, k, v) in &lines {
            let e = |err: Error| wrap(ln, k, err);
            match k {
                "profile" => {}
                "system" => match v {
                    "lane_keeping" | "linear_gaussian" => system_kind = v.to_string(),
                    _ => return Err(line_err(ln, k, "expected lane_keeping or linear_gaussian")),
                },
                "tau" => lane.0 = num(v).map_err(e)?,
                "v" => lane.1 = num(v).map_err(e)?,
                "l_r" => lane.2 = num(v).map_err(e)?,
                "l_f" => lane.3 = num(v).map_err(e)?,
                "delta_f" => lane.4 = num(v).map_err(e)?,
                "angle_unit" => {
                    lane.5 = match v {
                        "deg" => AngleUnit::Deg,
                        "rad" => AngleUnit::Rad,
                        _ => return Err(line_err(ln, k, "expected deg or rad")),
                    }
                }
                "noise_std" => {
                    let vals = list(v).map_err(e)?;
                    lg_noise = vals[0];
                    lane.6 = vals;
                    noise_line = Some(ln);
                }
                "alpha" => lg_alpha = num(v).map_err(e)?,
                "domain.lower" | "domain.upper" | "initial.lower" | "initial.upper" => {
                    box_keys.insert(k, (ln, list(v).map_err(e)?));
                }
                "kx_a" => cfg.kx_a = num(v).map_err(e)?,
                "kx_b" => cfg.kx_b = num(v).map_err(e)?,
                "kx_degree" => cfg.kx_degree = int(v).map_err(e)?,
                "gp_signal_variance" => cfg.gp_signal_variance = num(v).map_err(e)?,
                "gp_lengthscale_sq" => cfg.gp_lengthscale_sq = num(v).map_err(e)?,
                "n_samples" => cfg.n_samples = int(v).map_err(e)?,
                "lambda" => cfg.lambda = num(v).map_err(e)?,
                "epsilon" => cfg.epsilon = num(v).map_err(e)?,
                "rho" => cfg.rho = num(v).map_err(e)?,
                "b_bar" => cfg.b_bar = num(v).map_err(e)?,
                "gamma" => cfg.gamma = num(v).map_err(e)?,
                "eta" => cfg.eta = if v == "minimize" { None } else { Some(num(v).map_err(e)?) },
                "c" => cfg.c = num(v).map_err(e)?,
                "zeta1" => cfg.zeta1 = num(v).map_err(e)?,
                "zeta2" => cfg.zeta2 = num(v).map_err(e)?,
                "horizon" => cfg.horizon = int(v).map_err(e)?,
                "barrier_degree" => cfg.barrier_degree = int(v).map_err(e)?,
                "multiplier_degree" => cfg.multiplier_degree = int(v).map_err(e)?,
                "seed" => cfg.seed = int(v).map_err(e)?,
                "solver_tol" => cfg.solver_tol = num(v).map_err(e)?,
                "solver_max_iters" => cfg.solver_max_iters = int(v).map_err(e)?,
                "grid_density" => cfg.grid_density = int(v).map_err(e)?,
                "mc_runs" => cfg.mc_runs = int(v).map_err(e)?,
                "envelope_n_train" => cfg.envelope_n_train = int(v).map_err(e)?,
                "envelope_max_train" => cfg.envelope_max_train = int(v).map_err(e)?,
                "envelope_refinements" => cfg.envelope_refinements = int(v).map_err(e)?,
                "sweep_epsilons" => cfg.sweep_epsilons = list(v).map_err(e)?,
                "sweep_repeats" => cfg.sweep_repeats = int(v).map_err(e)?,
                "sweep_b_bar" => cfg.sweep_b_bar = num(v).map_err(e)?,
                "workers" => cfg.workers = int(v).map_err(e)?,
                "plot_resolution" => cfg.plot_resolution = int(v).map_err(e)?,
                "plot_slice" => cfg.plot_slice = num(v).map_err(e)?,
                "simulate_runs" => cfg.simulate_runs = int(v).map_err(e)?,
                "data_path" => cfg.data_path = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
                "output_dir" => cfg.output_dir = PathBuf::from(v),
                _ => {
                    let parsed = k
                        .strip_prefix("unsafe.")
                        .and_then(|rest| rest.split_once('.'))
                        .and_then(|(idx, side)| idx.parse::<usize>().ok().filter(|i| *i >= 1).map(|i| (i, side)));
                    match parsed {
                        Some((idx, side @ ("lower" | "upper"))) => {
                            let slot = unsafe_bounds.entry(idx).or_default();
                            let val = Some((ln, list(v).map_err(e)?));
                            if side == "lower" {
                                slot.0 = val;
                            } else {
                                slot.1 = val;
                            }
                        }
                        _ => return Err(line_err(ln, k, "unknown key")),
                    }
                }
            }
        }

        let line_of = |key: &str| seen.get(key).copied().unwrap_or(0);
        cfg.system = if system_kind == "lane_keeping" {
            if lane.6.len() != 3 {
                return Err(line_err(noise_line.unwrap_or(0), "noise_std", "lane keeping needs three noise levels"));
            }
            SystemConfig::LaneKeeping {
                tau: lane.0,
                v: lane.1,
                l_r: lane.2,
                l_f: lane.3,
                delta_f: lane.4,
                angle_unit: lane.5,
                noise_std: [lane.6[0], lane.6[1], lane.6[2]],
            }
        } else {
            if noise_line.is_some() && lane.6.len() != 1 {
                return Err(line_err(noise_line.unwrap_or(0), "noise_std", "linear_gaussian needs one noise level"));
            }
            SystemConfig::LinearGaussian { alpha: lg_alpha, noise_std: lg_noise }
        };
        let make_box = |name: &str, current: &StateBox| -> Result<StateBox> {
            let lo_key = format!("{name}.lower");
            let hi_key = format!("{name}.upper");
            let lo = box_keys.get(lo_key.as_str()).map(|(_, v)| v.clone()).unwrap_or_else(|| current.lower().to_vec());
            let hi = box_keys.get(hi_key.as_str()).map(|(_, v)| v.clone()).unwrap_or_else(|| current.upper().to_vec());
            let ln = line_of(&lo_key).max(line_of(&hi_key));
            StateBox::new(lo, hi).map_err(|e| wrap(ln, &lo_key, e))
        };
        cfg.domain = make_box("domain", &cfg.domain)?;
        cfg.initial = make_box("initial", &cfg.initial)?;
        if !unsafe_bounds.is_empty() {
            let mut sets = Vec::new();
            for (pos, (idx, (lo, hi))) in unsafe_bounds.into_iter().enumerate() {
                let key = format!("unsafe.{idx}");
                if idx != pos + 1 {
                    return Err(line_err(lo.or(hi).map_or(0, |(l, _)| l), &key, "unsafe components must be numbered 1, 2, ... without gaps"));
                }
                match (lo, hi) {
                    (Some((l1, lo)), Some((l2, hi))) => {
                        sets.push(StateBox::new(lo, hi).map_err(|e| wrap(l1.max(l2), &key, e))?)
                    }
                    (Some((l, _)), None) | (None, Some((l, _))) => {
                        return Err(line_err(l, &key, "both .lower and .upper are required"))
                    }
                    (None, None) => unreachable!(),
                }
            }
            cfg.unsafe_sets = sets;
        }
        if let Err((key, err)) = cfg.validate() {
            let ln = if key.starts_with("unsafe") {
                seen.iter().filter(|(k, _)| k.starts_with("unsafe")).map(|(_, l)| *l).min().unwrap_or(0)
            } else if key == "system" {
                seen.iter()
                    .filter(|(k, _)| matches!(**k, "system" | "tau" | "v" | "l_r" | "l_f" | "delta_f" | "noise_std" | "alpha"))
                    .map(|(_, l)| *l)
                    .max()
                    .unwrap_or(0)
            } else if key.starts_with("domain") || key.starts_with("initial") {
                let stem = key.split('.').next().unwrap_or("");
                line_of(&format!("{stem}.lower")).max(line_of(&format!("{stem}.upper")))
            } else {
                line_of(&key)
            };
            return Err(wrap(ln, &key, err));
        }
        Ok(cfg)
    }

    /// Every key, in a fixed order; [`RunConfig::parse`] reads it back.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("write to string");
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        kv("profile", self.profile.name().into());
        match &self.system {
            SystemConfig::LaneKeeping { tau, v, l_r, l_f, delta_f, angle_unit, noise_std } => {
                kv("system", "lane_keeping".into());
                kv("tau", tau.to_string());
                kv("v", v.to_string());
                kv("l_r", l_r.to_string());
                kv("l_f", l_f.to_string());
                kv("delta_f", delta_f.to_string());
                kv("angle_unit", if *angle_unit == AngleUnit::Deg { "deg" } else { "rad" }.into());
                kv("noise_std", join(noise_std));
            }
            SystemConfig::LinearGaussian { alpha, noise_std } => {
                kv("system", "linear_gaussian".into());
                kv("alpha", alpha.to_string());
                kv("noise_std", noise_std.to_string());
            }
        }
        kv("domain.lower", join(self.domain.lower()));
        kv("domain.upper", join(self.domain.upper()));
        kv("initial.lower", join(self.initial.lower()));
        kv("initial.upper", join(self.initial.upper()));
        for (i, b) in self.unsafe_sets.iter().enumerate() {
            kv(&format!("unsafe.{}.lower", i + 1), join(b.lower()));
            kv(&format!("unsafe.{}.upper", i + 1), join(b.upper()));
        }
        kv("kx_a", self.kx_a.to_string());
        kv("kx_b", self.kx_b.to_string());
        kv("kx_degree", self.kx_degree.to_string());
        kv("gp_signal_variance", self.gp_signal_variance.to_string());
        kv("gp_lengthscale_sq", self.gp_lengthscale_sq.to_string());
        kv("n_samples", self.n_samples.to_string());
        kv("lambda", self.lambda.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("rho", self.rho.to_string());
        kv("b_bar", self.b_bar.to_string());
        kv("gamma", self.gamma.to_string());
        kv("eta", self.eta.map_or("minimize".into(), |e| e.to_string()));
        kv("c", self.c.to_string());
        kv("zeta1", self.zeta1.to_string());
        kv("zeta2", self.zeta2.to_string());
        kv("horizon", self.horizon.to_string());
        kv("barrier_degree", self.barrier_degree.to_string());
        kv("multiplier_degree", self.multiplier_degree.to_string());
        kv("seed", self.seed.to_string());
        kv("solver_tol", self.solver_tol.to_string());
        kv("solver_max_iters", self.solver_max_iters.to_string());
        kv("grid_density", self.grid_density.to_string());
        kv("mc_runs", self.mc_runs.to_string());
        kv("envelope_n_train", self.envelope_n_train.to_string());
        kv("envelope_max_train", self.envelope_max_train.to_string());
        kv("envelope_refinements", self.envelope_refinements.to_string());
        kv("sweep_epsilons", join(&self.sweep_epsilons));
        kv("sweep_repeats", self.sweep_repeats.to_string());
        kv("sweep_b_bar", self.sweep_b_bar.to_string());
        kv("workers", self.workers.to_string());
        kv("plot_resolution", self.plot_resolution.to_string());
        kv("plot_slice", self.plot_slice.to_string());
        kv("simulate_runs", self.simulate_runs.to_string());
        kv("data_path", self.data_path.as_ref().map_or(String::new(), |p| p.display().to_string()));
        kv("output_dir", self.output_dir.display().to_string());
        s
    }
}

fn invalid(name: &'static str, reason: &str) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}

fn line_err(line: usize, key: &str, msg: &str) -> Error {
    if key.is_empty() {
        Error::Parse(format!("config line {line}: {msg}"))
    } else {
        Error::Parse(format!("config line {line}: `{key}`: {msg}"))
    }
}

fn wrap(line: usize, key: &str, e: Error) -> Error {
    line_err(line, key, &e.to_string())
}

fn num(v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| Error::Parse(format!("`{v}` is not a number")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Parse(format!("`{v}` is not finite")))
    }
}

fn int<T: std::str::FromStr>(v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse(format!("`{v}` is not a nonnegative integer")))
}

fn list(v: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Parse("empty list".into()));
    }
    v.split(',').map(|t| num(t.trim())).collect()
}
