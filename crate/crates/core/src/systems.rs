//! Stochastic simulators used to generate training data and to test
//! certificates by rollout.
//!
//! Randomness is drawn from ChaCha streams derived from a single root seed.
//! State sampling and process noise use separate streams so that growing a
//! dataset keeps every earlier draw unchanged.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};

pub type SimRng = ChaCha8Rng;

/// Independent purposes a root seed is split into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    StateSampling = 1,
    ProcessNoise = 2,
    InitialStates = 3,
    RolloutNoise = 4,
    Validation = 5,
    Training = 6,
}

/// A random stream for one purpose. Different purposes never overlap.
pub fn stream(seed: u64, purpose: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// The `index`-th of many independent streams for one purpose, for work
/// split across runs. Index 0 is [`stream`] itself.
pub fn substream(seed: u64, purpose: Stream, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 8) | purpose as u64);
    rng
}

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidParameter { name: "box", reason: "zero-dimensional box".into() });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "box",
                    reason: format!("axis {i}: lower bound {l} must be below upper bound {u}"),
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Convenience constructor from `(lower, upper)` pairs.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        Self::new(bounds.iter().map(|b| b.0).collect(), bounds.iter().map(|b| b.1).collect())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn sample_uniform(&self, rng: &mut SimRng) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| l + (u - l) * rng.random::<f64>()).collect()
    }

    /// All `2^n` corners.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n).map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] }).collect()
            })
            .collect()
    }

    /// Uniform lattice with `per_axis[i]` points on axis `i`, faces included.
    /// An axis with a single point uses the box center.
    pub fn grid(&self, per_axis: &[usize]) -> Vec<Vec<f64>> {
        assert_eq!(per_axis.len(), self.dim());
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| {
                let k = per_axis[i].max(1);
                if k == 1 {
                    vec![0.5 * (self.lower[i] + self.upper[i])]
                } else {
                    let h = (self.upper[i] - self.lower[i]) / (k - 1) as f64;
                    (0..k).map(|j| if j == k - 1 { self.upper[i] } else { self.lower[i] + h * j as f64 }).collect()
                }
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            out.push(idx.iter().enumerate().map(|(i, &j)| axes[i][j]).collect());
            for (i, j) in idx.iter_mut().enumerate().rev() {
                *j += 1;
                if *j < axes[i].len() {
                    break;
                }
                *j = 0;
            }
        }
        out
    }

    /// Spacing of the lattice produced by [`StateBox::grid`].
    pub fn grid_spacing(&self, per_axis: &[usize]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let k = per_axis[i].max(1);
                if k == 1 { self.upper[i] - self.lower[i] } else { (self.upper[i] - self.lower[i]) / (k - 1) as f64 }
            })
            .collect()
    }
}

/// Parameters of the single-track lane-keeping model.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneKeepingParams {
    /// time step [s]
    pub tau: f64,
    /// speed [m/s]
    pub v: f64,
    pub l_r: f64,
    pub l_f: f64,
    /// steering angle [rad]
    pub delta_f: f64,
    pub noise_std: [f64; 3],
}

impl LaneKeepingParams {
    /// The published case-study parameters (steering angle 5 degrees).
    pub fn case_study() -> Self {
        Self {
            tau: 0.1,
            v: 5.0,
            l_r: 1.384,
            l_f: 1.384,
            delta_f: 5f64.to_radians(),
            noise_std: [0.01, 0.01, 0.001],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("tau", self.tau), ("v", self.v), ("l_r", self.l_r), ("l_f", self.l_f)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParameter { name: "noise_std", reason: "must be nonnegative".into() });
        }
        Ok(())
    }

    /// Slip angle `psi = l_r / (l_r + l_f) * atan(delta_f)`, with `delta_f`
    /// in radians. The formula takes the arctangent of the raw angle value.
    pub fn slip_angle(&self) -> f64 {
        self.l_r / (self.l_r + self.l_f) * self.delta_f.atan()
    }

    /// Noise-free increment at heading `phi`.
    pub fn drift(&self, phi: f64) -> [f64; 3] {
        let psi = self.slip_angle();
        [
            self.tau * self.v * (phi + psi).cos(),
            self.tau * self.v * (phi + psi).sin(),
            self.tau * self.v / self.l_r * psi.sin(),
        ]
    }
}

/// One step of the lane-keeping chain from `x = (x, y, phi)`.
pub fn lane_keeping_step(params: &LaneKeepingParams, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
    let d = params.drift(x[2]);
    (0..3)
        .map(|i| {
            let w: f64 = rng.sample(StandardNormal);
            x[i] + d[i] + params.noise_std[i] * w
        })
        .collect()
}

/// `x+ = alpha x + w`, `w ~ N(0, noise_std^2)`.
pub fn linear_gaussian_step(alpha: f64, noise_std: f64, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
    let w: f64 = rng.sample(StandardNormal);
    vec![alpha * x[0] + noise_std * w]
}

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    LaneKeeping(LaneKeepingParams),
    LinearGaussian { alpha: f64, noise_std: f64 },
}

impl System {
    pub fn dim(&self) -> usize {
        match self {
            System::LaneKeeping(_) => 3,
            System::LinearGaussian { .. } => 1,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            System::LaneKeeping(_) => "lane_keeping",
            System::LinearGaussian { .. } => "linear_gaussian",
        }
    }

    pub fn step(&self, x: &[f64], rng: &mut SimRng) -> Vec<f64> {
        match self {
            System::LaneKeeping(p) => lane_keeping_step(p, x, rng),
            System::LinearGaussian { alpha, noise_std } => linear_gaussian_step(*alpha, *noise_std, x, rng),
        }
    }

    /// The same system with all process noise switched off.
    pub fn noiseless(&self) -> System {
        match self {
            System::LaneKeeping(p) => System::LaneKeeping(LaneKeepingParams { noise_std: [0.0; 3], ..p.clone() }),
            System::LinearGaussian { alpha, .. } => System::LinearGaussian { alpha: *alpha, noise_std: 0.0 },
        }
    }
}

/// Paired samples `(x_i, x_i+)` with `x_i` uniform over the sampling box.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub states: Vec<Vec<f64>>,
    pub successors: Vec<Vec<f64>>,
    pub seed: u64,
    pub system_tag: String,
    pub sampling_box: StateBox,
}

pub fn sample_transitions(system: &System, sampling_box: &StateBox, n: usize, seed: u64) -> Result<TransitionDataset> {
    if n == 0 {
        return Err(Error::InvalidParameter { name: "N", reason: "at least one sample is required".into() });
    }
    check_dim(system.dim(), sampling_box.dim())?;
    let mut state_rng = stream(seed, Stream::StateSampling);
    let mut noise_rng = stream(seed, Stream::ProcessNoise);
    let mut states = Vec::with_capacity(n);
    let mut successors = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sampling_box.sample_uniform(&mut state_rng);
        successors.push(system.step(&x, &mut noise_rng));
        states.push(x);
    }
    Ok(TransitionDataset {
        states,
        successors,
        seed,
        system_tag: system.tag().to_string(),
        sampling_box: sampling_box.clone(),
    })
}

/// `T + 1` states starting at `x0`.
pub fn simulate_trajectory(system: &System, x0: &[f64], horizon: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(x0.to_vec());
    for t in 0..horizon {
        let next = system.step(&out[t], rng);
        out.push(next);
    }
    out
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sampling_box.dim()
    }

    /// CSV with header `x1,..,xn,xp1,..,xpn` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut s = String::new();
        let header: Vec<String> = (1..=n).map(|i| format!("x{i}")).chain((1..=n).map(|i| format!("xp{i}"))).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for (x, xp) in self.states.iter().zip(&self.successors) {
            let row: Vec<String> = x.iter().chain(xp).map(|v| fmt_f64(*v)).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Flat `key=value` sidecar describing how the data was produced.
    pub fn metadata(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "system={}", self.system_tag).unwrap();
        writeln!(s, "n_samples={}", self.len()).unwrap();
        writeln!(s, "box_lower={}", join(self.sampling_box.lower())).unwrap();
        writeln!(s, "box_upper={}", join(self.sampling_box.upper())).unwrap();
        writeln!(s, "fingerprint={}", self.fingerprint()).unwrap();
        s
    }

    /// SHA-256 of the CSV serialization.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_csv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv())?;
        std::fs::write(meta_path, self.metadata())?;
        Ok(())
    }

    pub fn from_csv_and_metadata(csv: &str, meta: &str) -> Result<Self> {
        let mut seed = None;
        let mut tag = None;
        let mut lower = None;
        let mut upper = None;
        let parse_vec = |v: &str| -> Result<Vec<f64>> {
            v.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{t}: {e}")))).collect()
        };
        for (lineno, line) in meta.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("metadata line {}: expected key=value", lineno + 1)))?;
            match k.trim() {
                "seed" => seed = Some(v.trim().parse::<u64>().map_err(|e| Error::Parse(format!("seed: {e}")))?),
                "system" => tag = Some(v.trim().to_string()),
                "box_lower" => lower = Some(parse_vec(v)?),
                "box_upper" => upper = Some(parse_vec(v)?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::Parse(format!("metadata is missing `{k}`"));
        let sampling_box = StateBox::new(lower.ok_or_else(|| missing("box_lower"))?, upper.ok_or_else(|| missing("box_upper"))?)?;
        let n = sampling_box.dim();
        let mut lines = csv.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        if header.split(',').count() != 2 * n {
            return Err(Error::Parse(format!("CSV header has {} columns, expected {}", header.split(',').count(), 2 * n)));
        }
        let mut states = Vec::new();
        let mut successors = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_vec(line).map_err(|e| Error::Parse(format!("CSV row {}: {e}", i + 2)))?;
            if row.len() != 2 * n {
                return Err(Error::Parse(format!("CSV row {} has {} fields, expected {}", i + 2, row.len(), 2 * n)));
            }
            states.push(row[..n].to_vec());
            successors.push(row[n..].to_vec());
        }
        Ok(Self {
            states,
            successors,
            seed: seed.ok_or_else(|| missing("seed"))?,
            system_tag: tag.ok_or_else(|| missing("system"))?,
            sampling_box,
        })
    }
}
