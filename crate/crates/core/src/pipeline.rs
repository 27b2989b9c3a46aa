//! End-to-end commands: data generation, certification, validation, the
//! epsilon sweep, plot data and raw simulation.
//!
//! Every command takes a [`RunConfig`], writes its artifacts into
//! `output_dir` and returns what it wrote. Failures carry the [`Stage`]
//! they happened in, which fixes the process exit code:
//!
//! | code | stage |
//! |------|-------|
//! | 0 | success |
//! | 2 | config |
//! | 3 | data |
//! | 4 | cme |
//! | 5 | sos (program construction or SDP solve) |
//! | 6 | extraction |
//! | 7 | envelope |
//! | 8 | validation |
//! | 9 | io |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cme::{fit_cme, AmbiguityConfig, EmpiricalCme};
use crate::config::RunConfig;
use crate::error::Error;
use crate::gp_envelope::{build_envelope, EnvelopeConfig, EnvelopeReport};
use crate::kernels::KernelSpec;
use crate::polynomials::Polynomial;
use crate::safety::{
    certificate_bound, monte_carlo_safety, validate_certificate, FalsificationReport, MonteCarloEstimate,
};
use crate::sdp::Residuals;
use crate::sos::{build_sos_program, extract_certificate, solve_sos, BarrierCertificate, CertificateContext};
use crate::systems::{fmt_f64, sample_transitions, substream, Stream, TransitionDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Cme,
    Sos,
    Extraction,
    Envelope,
    Validation,
    Io,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Data => 3,
            Stage::Cme => 4,
            Stage::Sos => 5,
            Stage::Extraction => 6,
            Stage::Envelope => 7,
            Stage::Validation => 8,
            Stage::Io => 9,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Cme => "cme",
            Stage::Sos => "sos",
            Stage::Extraction => "extraction",
            Stage::Envelope => "envelope",
            Stage::Validation => "validation",
            Stage::Io => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("[{}] {source}", stage.tag())]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

fn fail<T>(stage: Stage, msg: String) -> StageResult<T> {
    Err(StageError { stage, source: Error::Certificate(msg) })
}

fn write_file(path: &Path, contents: &str) -> StageResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::from).at(Stage::Io)?;
    }
    std::fs::write(path, contents).map_err(Error::from).at(Stage::Io)
}

fn read_file(path: &Path) -> StageResult<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display()))).at(Stage::Io)
}

fn checked(cfg: &RunConfig) -> StageResult<()> {
    cfg.validate().map_err(|(key, e)| StageError { stage: Stage::Config, source: Error::Parse(format!("`{key}`: {e}")) })
}

/// Loads `data_path` (with its `.meta` sidecar) or samples a fresh dataset.
pub fn load_or_sample(cfg: &RunConfig) -> StageResult<TransitionDataset> {
    checked(cfg)?;
    match &cfg.data_path {
        Some(p) => {
            let csv = read_file(p)?;
            let meta = read_file(&p.with_extension("meta"))?;
            let data = TransitionDataset::from_csv_and_metadata(&csv, &meta).at(Stage::Data)?;
            let sys = cfg.system().at(Stage::Config)?;
            if data.dim() != sys.dim() || data.system_tag != sys.tag() {
                return Err(StageError {
                    stage: Stage::Data,
                    source: Error::Parse(format!("{} holds {} data, config selects {}", p.display(), data.system_tag, sys.tag())),
                });
            }
            Ok(data)
        }
        None => sample_transitions(&cfg.system().at(Stage::Config)?, &cfg.domain, cfg.n_samples, cfg.seed).at(Stage::Data),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataFiles {
    pub csv: PathBuf,
    pub meta: PathBuf,
    pub fingerprint: String,
}

/// Writes `data.csv` and `data.meta`.
pub fn generate_data(cfg: &RunConfig) -> StageResult<DataFiles> {
    checked(cfg)?;
    let sys = cfg.system().at(Stage::Config)?;
    let data = sample_transitions(&sys, &cfg.domain, cfg.n_samples, cfg.seed).at(Stage::Data)?;
    let csv = cfg.output_dir.join("data.csv");
    let meta = cfg.output_dir.join("data.meta");
    write_file(&csv, &data.to_csv())?;
    write_file(&meta, &data.metadata())?;
    Ok(DataFiles { csv, meta, fingerprint: data.fingerprint() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSummary {
    pub zeta1_hat: f64,
    pub zeta2_hat: f64,
    pub rkhs_norm: f64,
    pub grid_spacing: Vec<f64>,
    pub grid_counts: Vec<usize>,
    pub n_train: usize,
}

impl From<&EnvelopeReport> for EnvelopeSummary {
    fn from(r: &EnvelopeReport) -> Self {
        Self {
            zeta1_hat: r.errors.zeta1_hat,
            zeta2_hat: r.errors.zeta2_hat,
            rkhs_norm: r.rkhs_norm,
            grid_spacing: r.errors.grid_spacing.clone(),
            grid_counts: r.errors.grid_counts.clone(),
            n_train: r.n_train,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub system: String,
    pub n_samples: usize,
    pub tool_version: String,
    pub residuals: Residuals,
    pub identity_violation: f64,
}

/// The certificate file: barrier, constants, envelope report, bound and
/// provenance, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateFile {
    pub barrier: Polynomial,
    pub eta: f64,
    pub gamma: f64,
    pub c: f64,
    pub ambiguity: AmbiguityConfig,
    pub zeta1: f64,
    pub zeta2: f64,
    pub lambda: f64,
    pub kx: KernelSpec,
    pub target_kernel: KernelSpec,
    pub envelope: EnvelopeSummary,
    pub p_psi: f64,
    pub horizon: u32,
    pub provenance: Provenance,
}

const SECTIONS: [&str; 5] = ["barrier", "constants", "envelope", "bound", "provenance"];

fn kernel_params(k: &KernelSpec) -> (f64, f64, u32) {
    match *k {
        KernelSpec::Polynomial { a, b, degree } => (a, b, degree),
        KernelSpec::SquaredExponential { signal_variance, lengthscale_sq } => (signal_variance, lengthscale_sq, 0),
    }
}

impl CertificateFile {
    pub fn certificate(&self) -> BarrierCertificate {
        BarrierCertificate {
            barrier: self.barrier.clone(),
            eta: self.eta,
            gamma: self.gamma,
            c: self.c,
            zeta1: self.zeta1,
            zeta2: self.zeta2,
            ambiguity: self.ambiguity,
            lambda: self.lambda,
            kx: self.kx,
            target_kernel: self.target_kernel,
            fingerprint: self.provenance.dataset_fingerprint.clone(),
            residuals: self.provenance.residuals,
            identity_violation: self.provenance.identity_violation,
        }
    }

    pub fn confidence(&self) -> f64 {
        1.0 - self.ambiguity.rho
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# cme-barrier certificate\n");
        let f = |v: f64| fmt_f64(v);
        let list = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("write to string");
        kv("[barrier]\nnum_vars", self.barrier.num_vars().to_string());
        kv("B", self.barrier.serialize());
        let (a, b, d) = kernel_params(&self.kx);
        let (sv, ls, _) = kernel_params(&self.target_kernel);
        kv("\n[constants]\neta", f(self.eta));
        kv("gamma", f(self.gamma));
        kv("c", f(self.c));
        kv("epsilon", f(self.ambiguity.epsilon));
        kv("b_bar", f(self.ambiguity.b_bar));
        kv("zeta1", f(self.zeta1));
        kv("zeta2", f(self.zeta2));
        kv("lambda", f(self.lambda));
        kv("rho", f(self.ambiguity.rho));
        kv("kx_a", f(a));
        kv("kx_b", f(b));
        kv("kx_degree", d.to_string());
        kv("gp_signal_variance", f(sv));
        kv("gp_lengthscale_sq", f(ls));
        let e = &self.envelope;
        kv("\n[envelope]\nzeta1_hat", f(e.zeta1_hat));
        kv("zeta2_hat", f(e.zeta2_hat));
        kv("rkhs_norm", f(e.rkhs_norm));
        kv("grid_spacing", list(&e.grid_spacing));
        kv("grid_counts", e.grid_counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
        kv("n_train", e.n_train.to_string());
        kv("\n[bound]\np_psi", f(self.p_psi));
        kv("horizon", self.horizon.to_string());
        kv("confidence", f(self.confidence()));
        kv(
            "statement",
            format!(
                "P(avoid unsafe for {} steps) >= {:.6} with probability >= {:.6}",
                self.horizon,
                self.p_psi,
                self.confidence()
            ),
        );
        let p = &self.provenance;
        kv("\n[provenance]\ndataset_fingerprint", p.dataset_fingerprint.clone());
        kv("seed", p.seed.to_string());
        kv("system", p.system.clone());
        kv("n_samples", p.n_samples.to_string());
        kv("tool_version", p.tool_version.clone());
        kv("solver_primal_residual", f(p.residuals.primal));
        kv("solver_dual_residual", f(p.residuals.dual));
        kv("solver_gap", f(p.residuals.gap));
        kv("identity_violation", f(p.identity_violation));
        s
    }

    pub fn parse(text: &str) -> crate::Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let sec = current.as_ref().ok_or_else(|| Error::Parse(format!("certificate line {}: key outside a section", i + 1)))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("certificate line {}: expected key=value", i + 1)))?;
            sections.get_mut(sec).expect("section exists").insert(k.trim().to_string(), v.trim().to_string());
        }
        for name in SECTIONS {
            if !sections.contains_key(name) {
                return Err(Error::Parse(format!("certificate is missing section [{name}]")));
            }
        }
        let get = |sec: &str, key: &str| -> crate::Result<&str> {
            sections[sec]
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Parse(format!("certificate section [{sec}] is missing `{key}`")))
        };
        let num = |sec: &str, key: &str| -> crate::Result<f64> {
            get(sec, key)?.parse().map_err(|e| Error::Parse(format!("[{sec}] `{key}`: {e}")))
        };
        fn int<T: std::str::FromStr>(sec: &str, key: &str, v: &str) -> crate::Result<T> {
            v.parse().map_err(|_| Error::Parse(format!("[{sec}] `{key}`: `{v}` is not an integer")))
        }
        let num_vars: usize = int("barrier", "num_vars", get("barrier", "num_vars")?)?;
        let barrier = Polynomial::parse(num_vars, get("barrier", "B")?)?;
        let c = "constants";
        let ambiguity = AmbiguityConfig::new(num(c, "epsilon")?, num(c, "rho")?, num(c, "b_bar")?)?;
        let kx = KernelSpec::polynomial(num(c, "kx_a")?, num(c, "kx_b")?, int(c, "kx_degree", get(c, "kx_degree")?)?)?;
        let target_kernel = KernelSpec::squared_exponential(num(c, "gp_signal_variance")?, num(c, "gp_lengthscale_sq")?)?;
        let e = "envelope";
        let spacing = get(e, "grid_spacing")?
            .split(',')
            .map(|t| t.parse::<f64>().map_err(|err| Error::Parse(format!("[envelope] `grid_spacing`: {err}"))))
            .collect::<crate::Result<Vec<_>>>()?;
        let counts = get(e, "grid_counts")?.split(',').map(|t| int(e, "grid_counts", t)).collect::<crate::Result<Vec<usize>>>()?;
        let p = "provenance";
        Ok(Self {
            barrier,
            eta: num(c, "eta")?,
            gamma: num(c, "gamma")?,
            c: num(c, "c")?,
            ambiguity,
            zeta1: num(c, "zeta1")?,
            zeta2: num(c, "zeta2")?,
            lambda: num(c, "lambda")?,
            kx,
            target_kernel,
            envelope: EnvelopeSummary {
                zeta1_hat: num(e, "zeta1_hat")?,
                zeta2_hat: num(e, "zeta2_hat")?,
                rkhs_norm: num(e, "rkhs_norm")?,
                grid_spacing: spacing,
                grid_counts: counts,
                n_train: int(e, "n_train", get(e, "n_train")?)?,
            },
            p_psi: num("bound", "p_psi")?,
            horizon: int("bound", "horizon", get("bound", "horizon")?)?,
            provenance: Provenance {
                dataset_fingerprint: get(p, "dataset_fingerprint")?.to_string(),
                seed: int(p, "seed", get(p, "seed")?)?,
                system: get(p, "system")?.to_string(),
                n_samples: int(p, "n_samples", get(p, "n_samples")?)?,
                tool_version: get(p, "tool_version")?.to_string(),
                residuals: Residuals {
                    primal: num(p, "solver_primal_residual")?,
                    dual: num(p, "solver_dual_residual")?,
                    gap: num(p, "solver_gap")?,
                },
                identity_violation: num(p, "identity_violation")?,
            },
        })
    }
}

pub fn fit(cfg: &RunConfig, data: &TransitionDataset) -> StageResult<EmpiricalCme> {
    fit_cme(data, cfg.kx().at(Stage::Config)?, cfg.lambda).at(Stage::Cme)
}

/// SOS synthesis and extraction, without the envelope.
pub fn synthesize(cfg: &RunConfig, cme: &EmpiricalCme, fingerprint: &str) -> StageResult<BarrierCertificate> {
    let synth = cfg.synthesis().at(Stage::Config)?;
    let prog = build_sos_program(cme, &cfg.safety_sets(), &synth).at(Stage::Sos)?;
    let sol = solve_sos(&prog, cfg.solver()).at(Stage::Sos)?;
    let ctx = CertificateContext {
        lambda: cfg.lambda,
        kx: *cme.kernel(),
        target_kernel: cfg.gp_kernel().at(Stage::Config)?,
        fingerprint: fingerprint.to_string(),
    };
    extract_certificate(&prog, &sol.sdp, &ctx).at(Stage::Extraction)
}

/// Synthesis, envelope and bound. Fails if the envelope does not hold.
pub fn certified_bound(
    cfg: &RunConfig,
    data: &TransitionDataset,
    cme: &EmpiricalCme,
) -> StageResult<(BarrierCertificate, EnvelopeReport, f64)> {
    let cert = synthesize(cfg, cme, &data.fingerprint())?;
    let env_cfg = EnvelopeConfig { zeta1: cfg.zeta1, zeta2: cfg.zeta2, b_bar: cfg.b_bar };
    let (_, report) =
        build_envelope(&cert.barrier, cme, &cfg.domain, cfg.gp_kernel().at(Stage::Config)?, env_cfg, cfg.envelope())
            .at(Stage::Envelope)?;
    if !report.passed() {
        return fail(
            Stage::Envelope,
            format!(
                "envelope check failed ({}): zeta1_hat={:.3e}, zeta2_hat={:.3e}, rkhs_norm={:.3e} with {} centers",
                report.failures().join(", "),
                report.errors.zeta1_hat,
                report.errors.zeta2_hat,
                report.rkhs_norm,
                report.n_train
            ),
        );
    }
    let bound = certificate_bound(&cert, cfg.horizon()).at(Stage::Extraction)?;
    Ok((cert, report, bound.p_psi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub file: CertificateFile,
    pub validation: FalsificationReport,
    pub path: PathBuf,
}

/// Grid margins below this count as violations.
pub const VALIDATION_TOL: f64 = 1e-6;

impl Certification {
    pub fn summary(&self) -> String {
        let f = &self.file;
        let mut s = String::new();
        writeln!(s, "certificate written to {}", self.path.display()).unwrap();
        writeln!(s, "B(x) = {}", f.barrier).unwrap();
        writeln!(s, "eta = {:.6}, gamma = {}, c = {}", f.eta, f.gamma, f.c).unwrap();
        writeln!(
            s,
            "envelope: zeta1_hat = {:.3e}, zeta2_hat = {:.3e}, rkhs_norm = {:.3e} ({} centers)",
            f.envelope.zeta1_hat, f.envelope.zeta2_hat, f.envelope.rkhs_norm, f.envelope.n_train
        )
        .unwrap();
        for c in &self.validation.checks {
            writeln!(s, "check {:<12} margin {:+.3e} at {:?}", c.name, c.margin, c.worst_point).unwrap();
        }
        writeln!(
            s,
            "P(avoid unsafe for {} steps) >= {:.4} with probability >= {}",
            f.horizon,
            f.p_psi,
            f.confidence()
        )
        .unwrap();
        s
    }
}

/// Runs the whole chain and writes `certificate.txt`. A certificate that
/// fails the grid checks is still written, then reported as a validation
/// failure.
pub fn certify(cfg: &RunConfig) -> StageResult<Certification> {
    let data = load_or_sample(cfg)?;
    let cme = fit(cfg, &data)?;
    let (cert, envelope, p_psi) = certified_bound(cfg, &data, &cme)?;
    let validation = validate_certificate(&cert, &cfg.safety_sets(), &cme, cfg.grid_density).at(Stage::Validation)?;
    let file = CertificateFile {
        barrier: cert.barrier.clone(),
        eta: cert.eta,
        gamma: cert.gamma,
        c: cert.c,
        ambiguity: cert.ambiguity,
        zeta1: cert.zeta1,
        zeta2: cert.zeta2,
        lambda: cert.lambda,
        kx: cert.kx,
        target_kernel: cert.target_kernel,
        envelope: EnvelopeSummary::from(&envelope),
        p_psi,
        horizon: cfg.horizon,
        provenance: Provenance {
            dataset_fingerprint: data.fingerprint(),
            seed: data.seed,
            system: data.system_tag.clone(),
            n_samples: data.len(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            residuals: cert.residuals,
            identity_violation: cert.identity_violation,
        },
    };
    let path = cfg.output_dir.join("certificate.txt");
    write_file(&path, &file.to_text())?;
    if !validation.passed(VALIDATION_TOL) {
        let worst = validation.checks.iter().min_by(|a, b| a.margin.total_cmp(&b.margin)).expect("checks");
        return fail(
            Stage::Validation,
            format!("certificate written to {} but check `{}` fails with margin {:.3e}", path.display(), worst.name, worst.margin),
        );
    }
    Ok(Certification { file, validation, path })
}

pub fn read_certificate(path: &Path) -> StageResult<CertificateFile> {
    CertificateFile::parse(&read_file(path)?).at(Stage::Data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    pub falsification: FalsificationReport,
    pub monte_carlo: MonteCarloEstimate,
    pub p_psi: f64,
    pub path: PathBuf,
}

/// Slack between the certified bound and the Monte-Carlo lower limit.
pub const MC_SLACK: f64 = 0.01;

impl ValidationOutcome {
    pub fn conservative(&self) -> bool {
        self.monte_carlo.lower >= self.p_psi - MC_SLACK
    }

    pub fn passed(&self) -> bool {
        self.falsification.passed(VALIDATION_TOL) && self.conservative()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.falsification.checks {
            let verdict = if c.margin >= -VALIDATION_TOL { "ok" } else { "VIOLATED" };
            writeln!(
                s,
                "{:<12} {verdict:<8} margin={:+.6e} worst_value={:.6e} threshold={:.6e} at={:?} points={}",
                c.name, c.margin, c.worst_value, c.threshold, c.worst_point, c.points_checked
            )
            .unwrap();
        }
        let m = &self.monte_carlo;
        writeln!(
            s,
            "monte_carlo  {:<8} safe={}/{} p_hat={:.6} ci99=[{:.6}, {:.6}] p_psi={:.6}",
            if self.conservative() { "ok" } else { "VIOLATED" },
            m.safe_runs,
            m.runs,
            m.probability,
            m.lower,
            m.upper,
            self.p_psi
        )
        .unwrap();
        s
    }
}

/// Grid checks and rollouts for a certificate file, against the dataset it
/// names. Writes `validation.txt`.
pub fn validate(cfg: &RunConfig, certificate: &Path) -> StageResult<ValidationOutcome> {
    let file = read_certificate(certificate)?;
    let data = load_or_sample(cfg)?;
    if data.fingerprint() != file.provenance.dataset_fingerprint {
        return Err(StageError {
            stage: Stage::Data,
            source: Error::Parse("the configured dataset does not match the certificate's dataset fingerprint".into()),
        });
    }
    let cme = fit_cme(&data, file.kx, file.lambda).at(Stage::Cme)?;
    let sets = cfg.safety_sets();
    let falsification = validate_certificate(&file.certificate(), &sets, &cme, cfg.grid_density).at(Stage::Validation)?;
    let sys = cfg.system().at(Stage::Config)?;
    let monte_carlo =
        monte_carlo_safety(&sys, &cfg.initial, &sets.unsafe_sets, file.horizon as usize, cfg.mc_runs, cfg.seed)
            .at(Stage::Validation)?;
    let path = cfg.output_dir.join("validation.txt");
    let outcome = ValidationOutcome { falsification, monte_carlo, p_psi: file.p_psi, path };
    write_file(&outcome.path, &outcome.render())?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mean: f64,
    /// One entry per seed; failed syntheses count as 0.
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    pub path: PathBuf,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,mean_p_psi");
        for seed in &self.seeds {
            write!(s, ",p_seed{seed}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{}", fmt_f64(r.epsilon), fmt_f64(r.mean)).unwrap();
            for p in &r.per_seed {
                write!(s, ",{}", fmt_f64(*p)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Certifies once per radius in `sweep_epsilons` and per seed
/// `seed, seed+1, ..`, with `b_bar = sweep_b_bar`. Writes `sweep.csv`.
pub fn sweep_epsilon(cfg: &RunConfig) -> StageResult<SweepTable> {
    checked(cfg)?;
    let seeds: Vec<u64> = (0..cfg.sweep_repeats as u64).map(|r| cfg.seed + r).collect();
    let mut fitted = Vec::new();
    for &seed in &seeds {
        let seeded = RunConfig { seed, ..cfg.clone() };
        let data = load_or_sample(&seeded)?;
        let cme = fit(&seeded, &data)?;
        fitted.push((seeded, data, cme));
    }
    let cells: Vec<(usize, usize)> =
        (0..cfg.sweep_epsilons.len()).flat_map(|e| (0..seeds.len()).map(move |s| (e, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| StageError { stage: Stage::Config, source: Error::InvalidParameter { name: "workers", reason: e.to_string() } })?;
    let results: Vec<f64> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(e, s)| {
                let (seeded, data, cme) = &fitted[s];
                let cell = RunConfig { epsilon: cfg.sweep_epsilons[e], b_bar: cfg.sweep_b_bar, ..seeded.clone() };
                certified_bound(&cell, data, cme).map_or(0.0, |(_, _, p)| p)
            })
            .collect()
    });
    let rows = cfg
        .sweep_epsilons
        .iter()
        .enumerate()
        .map(|(e, &epsilon)| {
            let per_seed: Vec<f64> = (0..seeds.len()).map(|s| results[e * seeds.len() + s]).collect();
            let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            SweepRow { epsilon, mean, per_seed }
        })
        .collect();
    let table = SweepTable { seeds, rows, path: cfg.output_dir.join("sweep.csv") };
    write_file(&table.path, &table.to_csv())?;
    Ok(table)
}

/// `B` on a `resolution x resolution` grid over the first two axes of the
/// domain, remaining coordinates fixed at `slice`. One-dimensional systems
/// give a `resolution`-row curve.
pub fn barrier_slice_csv(file: &CertificateFile, cfg: &RunConfig) -> String {
    let b = &file.barrier;
    let n = b.num_vars();
    let res = cfg.plot_resolution;
    let axis = |i: usize| -> Vec<f64> {
        let (lo, hi) = (cfg.domain.lower()[i], cfg.domain.upper()[i]);
        if res == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..res).map(|k| lo + (hi - lo) * k as f64 / (res - 1) as f64).collect()
        }
    };
    let mut s = String::new();
    writeln!(s, "# eta={}", fmt_f64(file.eta)).unwrap();
    writeln!(s, "# gamma={}", fmt_f64(file.gamma)).unwrap();
    if n == 1 {
        s.push_str("x1,B\n");
        for x in axis(0) {
            writeln!(s, "{},{}", fmt_f64(x), fmt_f64(b.eval_unchecked(&[x]))).unwrap();
        }
        return s;
    }
    if n > 2 {
        writeln!(s, "# slice={}", fmt_f64(cfg.plot_slice)).unwrap();
    }
    s.push_str("x1,x2,B\n");
    let mut point = vec![cfg.plot_slice; n];
    for x in axis(0) {
        for y in axis(1) {
            point[0] = x;
            point[1] = y;
            writeln!(s, "{},{},{}", fmt_f64(x), fmt_f64(y), fmt_f64(b.eval_unchecked(&point))).unwrap();
        }
    }
    s
}

/// `epsilon,mean,min,max` per sweep row.
pub fn sweep_summary_csv(sweep_csv: &str) -> crate::Result<String> {
    let mut s = String::from("epsilon,mean_p_psi,min_p_psi,max_p_psi\n");
    for (i, line) in sweep_csv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("sweep CSV line {}: {e}", i + 1)))?;
        if vals.len() < 3 {
            return Err(Error::Parse(format!("sweep CSV line {}: expected epsilon, mean and per-seed values", i + 1)));
        }
        let seeds = &vals[2..];
        let min = seeds.iter().copied().fold(f64::INFINITY, f64::min);
        let max = seeds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(s, "{},{},{},{}", fmt_f64(vals[0]), fmt_f64(vals[1]), fmt_f64(min), fmt_f64(max)).unwrap();
    }
    Ok(s)
}

/// Plot data from a certificate or a sweep CSV; writes `plot.csv`.
pub fn plot_data(cfg: &RunConfig, input: &Path) -> StageResult<PathBuf> {
    checked(cfg)?;
    let text = read_file(input)?;
    let out = if text.starts_with("epsilon,") {
        sweep_summary_csv(&text).at(Stage::Data)?
    } else {
        let file = CertificateFile::parse(&text).at(Stage::Data)?;
        if file.barrier.num_vars() != cfg.domain.dim() {
            return Err(StageError {
                stage: Stage::Config,
                source: Error::DimensionMismatch { expected: cfg.domain.dim(), got: file.barrier.num_vars() },
            });
        }
        barrier_slice_csv(&file, cfg)
    };
    let path = cfg.output_dir.join("plot.csv");
    write_file(&path, &out)?;
    Ok(path)
}

/// `simulate_runs` rollouts of `horizon` steps from uniform initial
/// states; writes `trajectories.csv` with one row per state.
pub fn simulate(cfg: &RunConfig) -> StageResult<PathBuf> {
    checked(cfg)?;
    let sys = cfg.system().at(Stage::Config)?;
    let sets = cfg.safety_sets();
    let n = sys.dim();
    let mut s = String::from("run,t");
    for i in 1..=n {
        write!(s, ",x{i}").unwrap();
    }
    s.push_str(",unsafe\n");
    for run in 0..cfg.simulate_runs {
        let mut init_rng = substream(cfg.seed, Stream::InitialStates, run as u64);
        let mut noise_rng = substream(cfg.seed, Stream::RolloutNoise, run as u64);
        let x0 = cfg.initial.sample_uniform(&mut init_rng);
        let traj = crate::systems::simulate_trajectory(&sys, &x0, cfg.horizon as usize, &mut noise_rng);
        for (t, x) in traj.iter().enumerate() {
            write!(s, "{run},{t}").unwrap();
            for v in x {
                write!(s, ",{}", fmt_f64(*v)).unwrap();
            }
            let hit = sets.unsafe_sets.iter().any(|u| u.contains(x, 0.0));
            writeln!(s, ",{}", u8::from(hit)).unwrap();
        }
    }
    let path = cfg.output_dir.join("trajectories.csv");
    write_file(&path, &s)?;
    Ok(path)
}
