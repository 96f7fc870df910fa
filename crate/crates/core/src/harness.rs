//! Ensemble experiments: particles in independent field realizations against
//! the diffusion limit, equilibration tests and statistical comparison.
//!
//! Every particle `i` of an experiment with master seed `m` draws its field
//! from `derive_seed(m, FieldRealization, i)`, its initial momentum from
//! `member_rng(m, InitialState, i)` and its SDE noise from
//! `member_rng(m, Walker, i)`. Results are collected in particle order, so
//! reports do not depend on the number of worker threads.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::diffusion::{
    energy, juttner_mean_energy, sde_step, DiffusionError, DiffusionKind, DiffusionParams, JuttnerCdf, MomentumState,
};
use crate::dynamics::{propagate, Clock, DynamicsError, ParticleParams, PhasePoint};
use crate::field::{
    hessian_quadrature, sample_realization, two_point_from_hessian, FieldError, SpectralDensity, SpectralProfile,
};
use crate::kubo::{
    default_grid, h_from_correlator, kappa2_from_h, CorrelationProfile, DiffusionConstant, KuboError, Tabulated,
};
use crate::minkowski::{dot3, FourVector};
use crate::rng::{derive_seed, member_rng, StreamTag};

/// Observables tracked at every checkpoint, in report order.
pub const OBSERVABLES: [&str; 12] = ["p1", "p2", "p3", "p1p1", "p1p2", "p1p3", "p2p2", "p2p3", "p3p3", "p0", "p0p0", "pp"];

const PAIRS3: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint grids differ: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Kubo(#[from] KuboError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Spectral density in serializable form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpecConfig {
    ForwardExponential { lambda: f64, k_max: f64 },
    LowFrequencyGaussian { lambda: f64, k_max: f64 },
    SpacelikeUniform { k_max: f64 },
}

impl Default for SpecConfig {
    fn default() -> Self {
        SpecConfig::ForwardExponential { lambda: 1.0, k_max: 5.0 }
    }
}

impl SpecConfig {
    pub fn density(&self, coupling: f64) -> SpectralDensity {
        let profile = match *self {
            SpecConfig::ForwardExponential { lambda, k_max } => SpectralProfile::ForwardExponential { lambda, k_max },
            SpecConfig::LowFrequencyGaussian { lambda, k_max } => {
                SpectralProfile::LowFrequencyGaussian { lambda, k_max }
            }
            SpecConfig::SpacelikeUniform { k_max } => SpectralProfile::SpacelikeUniform { k_max },
        };
        SpectralDensity::new(profile, coupling)
    }
}

/// Distribution of the initial spatial momentum. Positions start at the origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialDistribution {
    #[default]
    Rest,
    Fixed { p: [f64; 3] },
    /// Independent normal components with standard deviation `sigma`.
    Gaussian { sigma: f64 },
}

impl InitialDistribution {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        match *self {
            InitialDistribution::Rest => [0.0; 3],
            InitialDistribution::Fixed { p } => p,
            InitialDistribution::Gaussian { sigma } => {
                std::array::from_fn(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            }
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        match *self {
            InitialDistribution::Rest => Ok(()),
            InitialDistribution::Fixed { p } if p.iter().all(|c| c.is_finite()) => Ok(()),
            InitialDistribution::Gaussian { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(()),
            other => Err(HarnessError::InvalidConfig(format!("bad initial distribution {other:?}"))),
        }
    }
}

/// Particle count, step and checkpoint schedule shared by both ensemble kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub n_particles: usize,
    pub horizon: f64,
    pub step: f64,
    /// Process-clock times at which moments are recorded. Each must be a
    /// multiple of `step` in `[0, horizon]`.
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub initial: InitialDistribution,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_bins() -> usize {
    40
}

impl Schedule {
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    /// Step indices of the checkpoints.
    pub fn checkpoint_steps(&self) -> Result<Vec<usize>, HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.n_particles == 0 {
            return bad("n_particles must be >= 1".into());
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be >= 1".into());
        }
        if !(self.step > 0.0 && self.step.is_finite() && self.horizon.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if self.horizon / self.step < 10.0 - 1e-9 {
            return bad(format!("horizon/step must be >= 10, got {}", self.horizon / self.step));
        }
        if self.checkpoints.is_empty() {
            return bad("at least one checkpoint is required".into());
        }
        let n = self.n_steps();
        let mut out = Vec::with_capacity(self.checkpoints.len());
        for &c in &self.checkpoints {
            let k = (c / self.step).round();
            if !(c >= 0.0) || (k * self.step - c).abs() > 1e-9 * c.abs().max(1.0) || k as usize > n {
                return bad(format!("checkpoint {c} is not a multiple of the step inside the horizon"));
            }
            if out.last().is_some_and(|&prev| prev >= k as usize) {
                return bad("checkpoints must be strictly increasing".into());
            }
            out.push(k as usize);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub spec: SpecConfig,
    pub coupling: f64,
    pub n_modes: usize,
    pub clock: Clock,
    #[serde(default)]
    pub particle: ParticleParams,
    #[serde(flatten)]
    pub schedule: Schedule,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<Vec<usize>, HarnessError> {
        if self.n_modes == 0 {
            return Err(HarnessError::InvalidConfig("n_modes must be >= 1".into()));
        }
        self.spec.density(self.coupling).validate()?;
        self.schedule.initial.validate()?;
        self.schedule.checkpoint_steps()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub params: DiffusionParams,
    #[serde(flatten)]
    pub schedule: Schedule,
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<Vec<usize>, HarnessError> {
        DiffusionParams::new(self.params.kappa2, self.params.particle, self.params.kind)?;
        self.schedule.initial.validate()?;
        self.schedule.checkpoint_steps()
    }
}

/// Seed of experiment `index` in a run driven by `master`.
pub fn experiment_seed(master: u64, index: u64) -> u64 {
    derive_seed(master, StreamTag::Experiment, index)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Estimate {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Estimate { mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = sum / n as f64;
        let stderr = if n > 1 {
            let var = ((sq - n as f64 * mean * mean) / (n - 1) as f64).max(0.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr }
    }
}

/// Per-particle momenta at each checkpoint. Particles whose propagation
/// failed are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSamples {
    pub checkpoints: Vec<f64>,
    pub particle: ParticleParams,
    pub momenta: Vec<Option<Vec<[f64; 3]>>>,
}

impl EnsembleSamples {
    pub fn n_failed(&self) -> usize {
        self.momenta.iter().filter(|m| m.is_none()).count()
    }

    fn at(&self, checkpoint: usize) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.momenta.iter().flatten().map(move |m| m[checkpoint])
    }

    /// Momenta of the surviving particles at a checkpoint.
    pub fn momenta_at(&self, checkpoint: usize) -> Vec<[f64; 3]> {
        self.at(checkpoint).collect()
    }

    /// Rate of change of `⟨p^j p^l⟩` between two checkpoints, estimated from
    /// per-particle increments so that the correlation between the two
    /// checkpoints enters the standard error.
    pub fn growth_rate(&self, j: usize, l: usize, from: usize, to: usize) -> Estimate {
        let dt = self.checkpoints[to] - self.checkpoints[from];
        Estimate::from_values(self.momenta.iter().flatten().map(|m| (m[to][j] * m[to][l] - m[from][j] * m[from][l]) / dt))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `bins` equal-width bins on `[lo, hi]`; values outside are clamped
    /// into the end bins.
    pub fn build(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = ((v - lo) / width).floor().clamp(0.0, (bins - 1) as f64) as usize;
            counts[b] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:?},{:?},{c}\n", self.edges[i], self.edges[i + 1]));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMoments {
    pub s: f64,
    pub mean_p: [Estimate; 3],
    /// Second moments `⟨p^j p^l⟩`, symmetric by construction.
    pub second: [[Estimate; 3]; 3],
    pub mean_p0: Estimate,
    pub mean_p0_sq: Estimate,
    /// `⟨|p|²⟩`.
    pub mean_p_sq: Estimate,
}

impl CheckpointMoments {
    fn from_momenta(s: f64, momenta: &[[f64; 3]], mass_c: f64) -> Self {
        let est = |f: &dyn Fn(&[f64; 3]) -> f64| Estimate::from_values(momenta.iter().map(f));
        let mut second = [[Estimate { mean: 0.0, stderr: 0.0 }; 3]; 3];
        for &(j, l) in &PAIRS3 {
            let e = est(&|p| p[j] * p[l]);
            second[j][l] = e;
            second[l][j] = e;
        }
        CheckpointMoments {
            s,
            mean_p: std::array::from_fn(|j| est(&|p| p[j])),
            second,
            mean_p0: est(&|p| energy(*p, mass_c)),
            mean_p0_sq: est(&|p| mass_c * mass_c + dot3(*p, *p)),
            mean_p_sq: est(&|p| dot3(*p, *p)),
        }
    }

    /// Values in `OBSERVABLES` order.
    pub fn observables(&self) -> [Estimate; 12] {
        let s = &self.second;
        [
            self.mean_p[0],
            self.mean_p[1],
            self.mean_p[2],
            s[0][0],
            s[0][1],
            s[0][2],
            s[1][1],
            s[1][2],
            s[2][2],
            self.mean_p0,
            self.mean_p0_sq,
            self.mean_p_sq,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub label: String,
    pub clock: Clock,
    pub n_particles: usize,
    pub n_failed: usize,
    /// False when more than 0.1% of the trajectories failed.
    pub valid: bool,
    pub checkpoints: Vec<CheckpointMoments>,
    pub momentum_histogram: Histogram,
    pub energy_histogram: Histogram,
}

impl MomentReport {
    pub fn from_samples(label: impl Into<String>, clock: Clock, samples: &EnsembleSamples, bins: usize) -> Self {
        let mc = samples.particle.mass_c();
        let checkpoints = (0..samples.checkpoints.len())
            .map(|c| CheckpointMoments::from_momenta(samples.checkpoints[c], &samples.momenta_at(c), mc))
            .collect();
        let last = samples.checkpoints.len() - 1;
        let norms: Vec<f64> = samples.at(last).map(|p| dot3(p, p).sqrt()).collect();
        let energies: Vec<f64> = samples.at(last).map(|p| energy(p, mc)).collect();
        let top = |v: &[f64]| v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let n_failed = samples.n_failed();
        MomentReport {
            label: label.into(),
            clock,
            n_particles: samples.momenta.len(),
            n_failed,
            valid: n_failed * 1000 <= samples.momenta.len(),
            checkpoints,
            momentum_histogram: Histogram::build(&norms, 0.0, top(&norms), bins),
            energy_histogram: Histogram::build(&energies, mc, top(&energies), bins),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.s).collect()
    }

    /// One row per checkpoint: `s`, then mean and standard error of every
    /// observable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s");
        for name in OBSERVABLES {
            out.push_str(&format!(",{name},{name}_se"));
        }
        out.push('\n');
        for c in &self.checkpoints {
            out.push_str(&format!("{:?}", c.s));
            for e in c.observables() {
                out.push_str(&format!(",{:?},{:?}", e.mean, e.stderr));
            }
            out.push('\n');
        }
        out
    }
}

/// Propagates every particle through its own field realization and records
/// the momenta at the checkpoints.
pub fn sample_field_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleSamples, HarnessError> {
    let steps = cfg.validate()?;
    let spec = cfg.spec.density(cfg.coupling);
    let sched = &cfg.schedule;
    let particle = cfg.particle;
    let momenta = (0..sched.n_particles as u64)
        .into_par_iter()
        .map(|i| {
            let real = sample_realization(&spec, cfg.n_modes, derive_seed(sched.master_seed, StreamTag::FieldRealization, i))?;
            let p = sched.initial.draw(&mut member_rng(sched.master_seed, StreamTag::InitialState, i));
            let start = PhasePoint::on_shell(FourVector::ZERO, p, &particle);
            match propagate(&start, &real, sched.n_steps() as f64 * sched.step, sched.step, cfg.clock, &particle) {
                Ok(traj) => Ok(Some(steps.iter().map(|&k| traj.points[k].p.space()).collect())),
                Err(DynamicsError::ToleranceExceeded { .. }) => Ok(None),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(EnsembleSamples { checkpoints: sched.checkpoints.clone(), particle, momenta })
}

pub fn run_field_ensemble(cfg: &ExperimentConfig) -> Result<MomentReport, HarnessError> {
    let samples = sample_field_ensemble(cfg)?;
    let label = format!("field[{}, eps={}]", cfg.spec.density(cfg.coupling).label(), cfg.coupling);
    Ok(MomentReport::from_samples(label, cfg.clock, &samples, cfg.schedule.histogram_bins))
}

/// Euler–Maruyama ensemble of the diffusion in `cfg.params`.
pub fn sample_diffusion_ensemble(cfg: &DiffusionConfig) -> Result<EnsembleSamples, HarnessError> {
    let steps = cfg.validate()?;
    let sched = &cfg.schedule;
    let params = cfg.params;
    let n_steps = sched.n_steps();
    let momenta = (0..sched.n_particles as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise = member_rng(sched.master_seed, StreamTag::Walker, i);
            let mut state =
                MomentumState::new(sched.initial.draw(&mut member_rng(sched.master_seed, StreamTag::InitialState, i)));
            let mut out = Vec::with_capacity(steps.len());
            let mut next = steps.iter().peekable();
            for k in 0..=n_steps {
                while next.next_if(|&&c| c == k).is_some() {
                    out.push(state.p);
                }
                if k == n_steps || next.peek().is_none() {
                    break;
                }
                let xi: [f64; 3] = std::array::from_fn(|_| noise.sample(StandardNormal));
                state = sde_step(&state, &params, sched.step, xi);
            }
            Some(out)
        })
        .collect();
    Ok(EnsembleSamples { checkpoints: sched.checkpoints.clone(), particle: params.particle, momenta })
}

pub fn run_diffusion_ensemble(cfg: &DiffusionConfig) -> Result<MomentReport, HarnessError> {
    let samples = sample_diffusion_ensemble(cfg)?;
    let clock = match cfg.params.kind {
        DiffusionKind::SchayDudleyProper => Clock::Proper,
        DiffusionKind::JuttnerLab => Clock::Lab,
    };
    let label = format!("diffusion[{:?}, kappa2={}]", cfg.params.kind, cfg.params.kappa2);
    Ok(MomentReport::from_samples(label, clock, &samples, cfg.schedule.histogram_bins))
}

/// `κ²` of a built-in spectral density for a particle at rest, from the
/// quadrature two-point function along the worldline.
pub fn kubo_prediction(spec: &SpectralDensity, quad_order: usize) -> Result<DiffusionConstant, HarnessError> {
    let n = FourVector::new(1.0, 0.0, 0.0, 0.0);
    let grid = default_grid(spec.profile.decay_scale());
    let mut h1 = Vec::with_capacity(grid.len());
    let mut h = Vec::with_capacity(grid.len());
    for &s in &grid {
        let hess = hessian_quadrature(spec, s * n, quad_order)?;
        let (a, b) = h_from_correlator(&two_point_from_hessian(&hess, s * n).values, &n);
        h1.push(a);
        h.push(b);
    }
    let profile = CorrelationProfile::Tabulated(Tabulated::new(grid, h1, h)?);
    Ok(DiffusionConstant::from_computed(kappa2_from_h(&profile)?))
}

/// How much a moment may differ between two reports:
/// `|a - b| ≤ n_sigma·√(se_a² + se_b²) + systematic·max(|a|, |b|) + floor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub n_sigma: f64,
    pub systematic: f64,
    pub floor: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy { n_sigma: 5.0, systematic: 0.15, floor: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentComparison {
    pub checkpoint: usize,
    pub s: f64,
    pub moment: String,
    pub a: Estimate,
    pub b: Estimate,
    /// Difference in units of the combined standard error, 0 when both are exact
    /// and equal.
    pub z: f64,
    pub allowed: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pass: bool,
    pub entries: Vec<MomentComparison>,
}

impl Comparison {
    pub fn failures(&self) -> impl Iterator<Item = &MomentComparison> {
        self.entries.iter().filter(|e| !e.pass)
    }

    /// Entry with the largest `|a - b|` relative to its allowance.
    pub fn worst(&self) -> Option<&MomentComparison> {
        let ratio = |e: &MomentComparison| {
            let d = (e.a.mean - e.b.mean).abs();
            if e.allowed > 0.0 {
                d / e.allowed
            } else if d > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        self.entries.iter().max_by(|x, y| ratio(x).total_cmp(&ratio(y)))
    }
}

pub fn compare_reports(a: &MomentReport, b: &MomentReport, policy: &TolerancePolicy) -> Result<Comparison, HarnessError> {
    if a.checkpoints.len() != b.checkpoints.len() {
        return Err(HarnessError::GridMismatch(format!(
            "{} vs {} checkpoints",
            a.checkpoints.len(),
            b.checkpoints.len()
        )));
    }
    let mut entries = Vec::new();
    for (i, (ca, cb)) in a.checkpoints.iter().zip(&b.checkpoints).enumerate() {
        if (ca.s - cb.s).abs() > 1e-12 * ca.s.abs().max(1.0) {
            return Err(HarnessError::GridMismatch(format!("checkpoint {i}: s = {} vs {}", ca.s, cb.s)));
        }
        for ((name, ea), eb) in OBSERVABLES.iter().zip(ca.observables()).zip(cb.observables()) {
            let diff = ea.mean - eb.mean;
            let se = ea.stderr.hypot(eb.stderr);
            let allowed = policy.n_sigma * se + policy.systematic * ea.mean.abs().max(eb.mean.abs()) + policy.floor;
            let z = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            };
            entries.push(MomentComparison {
                checkpoint: i,
                s: ca.s,
                moment: name.to_string(),
                a: ea,
                b: eb,
                z,
                allowed,
                pass: diff.abs() <= allowed,
            });
        }
    }
    Ok(Comparison { pass: entries.iter().all(|e| e.pass), entries })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Two-sided: the statistic is neither too large nor suspiciously small.
    pub pass: bool,
}

/// Pearson test of `samples` against `cdf` on the bins delimited by the
/// increasing `inner_edges` (the outer bins are open). Two-sided at `level`.
pub fn chi_square_test(samples: &[f64], inner_edges: &[f64], cdf: impl Fn(f64) -> f64, level: f64) -> ChiSquareResult {
    let bins = inner_edges.len() + 1;
    let mut counts = vec![0u64; bins];
    for &v in samples {
        counts[inner_edges.partition_point(|&e| e <= v)] += 1;
    }
    let n = samples.len() as f64;
    let mut stat = 0.0;
    let mut prev = 0.0;
    for (b, &c) in counts.iter().enumerate() {
        let upper = if b + 1 < bins { cdf(inner_edges[b]) } else { 1.0 };
        let expected = n * (upper - prev);
        prev = upper;
        let d = c as f64 - expected;
        stat += d * d / expected;
    }
    let dof = bins - 1;
    let p_value = ChiSquared::new(dof as f64).map_or(f64::NAN, |d| 1.0 - d.cdf(stat));
    ChiSquareResult { statistic: stat, dof, p_value, pass: p_value >= 0.5 * level && p_value <= 1.0 - 0.5 * level }
}

/// Test of laboratory-clock equilibration towards `e^{-p⁰/T}` (`T` in units
/// of `mc²`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibrationConfig {
    pub diffusion: DiffusionConfig,
    #[serde(default = "unit")]
    pub temperature: f64,
    /// Temperature of the negative control, which must fail.
    #[serde(default = "two")]
    pub control_temperature: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "one_percent")]
    pub level: f64,
    /// Runs shorter than this are never declared mixed.
    #[serde(default)]
    pub min_horizon: f64,
}

fn unit() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn one_percent() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibrationReport {
    pub times: Vec<f64>,
    /// Chi-square against the target at every checkpoint.
    pub trace: Vec<ChiSquareResult>,
    pub mixed: bool,
    pub target: ChiSquareResult,
    pub control: ChiSquareResult,
    pub pass: bool,
    pub moments: MomentReport,
}

impl EquilibrationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,chi2,dof,p_value\n");
        for (s, r) in self.times.iter().zip(&self.trace) {
            out.push_str(&format!("{s:?},{:?},{},{:?}\n", r.statistic, r.dof, r.p_value));
        }
        out
    }
}

/// Mixing heuristic on a chi-square trace: the statistic changed by less
/// than 10% over the last fifth of the run, or the two values compared are
/// both inside the noise band `dof + 4√(2·dof)`.
pub fn is_mixed(times: &[f64], trace: &[ChiSquareResult], min_horizon: f64) -> bool {
    let (Some(&end), Some(last)) = (times.last(), trace.last()) else {
        return false;
    };
    if end < min_horizon || times.len() < 2 {
        return false;
    }
    let i = times.partition_point(|&t| t < 0.8 * end).min(times.len() - 2);
    let (a, b) = (trace[i].statistic, last.statistic);
    let floor = last.dof as f64 + 4.0 * (2.0 * last.dof as f64).sqrt();
    (a - b).abs() < 0.1 * a.max(b) || (a < floor && b < floor)
}

fn energy_chi_square(p: &[[f64; 3]], mass_c: f64, edges: &[f64], cdf: &JuttnerCdf, level: f64) -> ChiSquareResult {
    let e: Vec<f64> = p.iter().map(|&q| energy(q, mass_c) / mass_c).collect();
    chi_square_test(&e, edges, |x| cdf.cdf(x), level)
}

pub fn run_equilibration(cfg: &EquilibrationConfig) -> Result<EquilibrationReport, HarnessError> {
    if cfg.bins < 2 || !(cfg.temperature > 0.0 && cfg.control_temperature > 0.0) || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(HarnessError::InvalidConfig("equilibration needs bins >= 2, positive temperatures and 0 < level < 1".into()));
    }
    let samples = sample_diffusion_ensemble(&cfg.diffusion)?;
    let mc = samples.particle.mass_c();
    let target = JuttnerCdf::new(cfg.temperature);
    let control = JuttnerCdf::new(cfg.control_temperature);
    let edges = target.equal_probability_edges(cfg.bins);
    let trace: Vec<ChiSquareResult> = (0..samples.checkpoints.len())
        .map(|c| energy_chi_square(&samples.momenta_at(c), mc, &edges, &target, cfg.level))
        .collect();
    let last = samples.momenta_at(samples.checkpoints.len() - 1);
    let control_edges = control.equal_probability_edges(cfg.bins);
    let control = energy_chi_square(&last, mc, &control_edges, &control, cfg.level);
    let target = *trace.last().expect("at least one checkpoint");
    let mixed = is_mixed(&samples.checkpoints, &trace, cfg.min_horizon);
    let clock = match cfg.diffusion.params.kind {
        DiffusionKind::SchayDudleyProper => Clock::Proper,
        DiffusionKind::JuttnerLab => Clock::Lab,
    };
    let moments = MomentReport::from_samples("equilibration", clock, &samples, cfg.diffusion.schedule.histogram_bins);
    Ok(EquilibrationReport {
        times: samples.checkpoints.clone(),
        trace,
        mixed,
        target,
        control,
        pass: mixed && target.pass && !control.pass,
        moments,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyVerdict {
    /// The first series settles at the Jüttner mean energy.
    pub first_saturates: bool,
    /// The second series exceeds `10·mc`.
    pub second_grows: bool,
    pub pass: bool,
}

/// Classifies two `⟨p⁰⟩` series: the first should settle at `target`, the
/// second should run away past `10·mc`.
pub fn discrepancy_verdict(first: &[Estimate], second: &[Estimate], target: f64, mass_c: f64) -> DiscrepancyVerdict {
    let saturates = match (first.last(), first.get(first.len() * 4 / 5)) {
        (Some(last), Some(late)) => {
            let near = (last.mean - target).abs() <= 5.0 * last.stderr + 0.05 * target;
            let flat = (last.mean - late.mean).abs() <= 5.0 * last.stderr.hypot(late.stderr) + 0.05 * target;
            near && flat
        }
        _ => false,
    };
    let grows = second.iter().any(|e| e.mean > 10.0 * mass_c);
    DiscrepancyVerdict { first_saturates: saturates, second_grows: grows, pass: saturates && grows }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabProperReport {
    pub times: Vec<f64>,
    pub lab_p0: Vec<Estimate>,
    pub proper_p0: Vec<Estimate>,
    /// `⟨p⁰⟩_proper - ⟨p⁰⟩_lab` at each checkpoint.
    pub divergence: Vec<f64>,
    /// `mc` times the Jüttner mean energy at `β⁻¹ = mc²`.
    pub juttner_mean: f64,
    pub verdict: DiscrepancyVerdict,
}

impl LabProperReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,lab_p0,lab_p0_se,proper_p0,proper_p0_se,divergence\n");
        for i in 0..self.times.len() {
            let (l, p) = (self.lab_p0[i], self.proper_p0[i]);
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?},{:?},{:?}\n",
                self.times[i], l.mean, l.stderr, p.mean, p.stderr, self.divergence[i]
            ));
        }
        out
    }
}

/// Runs `JuttnerLab` and `SchayDudleyProper` from the same initial ensemble
/// and noise. `cfg.params.kind` is ignored.
pub fn lab_vs_proper_discrepancy(cfg: &DiffusionConfig) -> Result<LabProperReport, HarnessError> {
    let with_kind = |kind| DiffusionConfig { params: DiffusionParams { kind, ..cfg.params }, ..cfg.clone() };
    let lab = run_diffusion_ensemble(&with_kind(DiffusionKind::JuttnerLab))?;
    let proper = run_diffusion_ensemble(&with_kind(DiffusionKind::SchayDudleyProper))?;
    let mc = cfg.params.particle.mass_c();
    let lab_p0: Vec<Estimate> = lab.checkpoints.iter().map(|c| c.mean_p0).collect();
    let proper_p0: Vec<Estimate> = proper.checkpoints.iter().map(|c| c.mean_p0).collect();
    let juttner_mean = mc * juttner_mean_energy(1.0);
    Ok(LabProperReport {
        times: lab.times(),
        divergence: proper_p0.iter().zip(&lab_p0).map(|(p, l)| p.mean - l.mean).collect(),
        verdict: discrepancy_verdict(&lab_p0, &proper_p0, juttner_mean, mc),
        lab_p0,
        proper_p0,
        juttner_mean,
    })
}

fn default_tolerance() -> f64 {
    0.1
}

fn default_quad_order() -> usize {
    48
}

fn default_z_min() -> f64 {
    5.0
}

/// Field ensemble from rest whose covariance growth is checked against `κ²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovLimitConfig {
    pub field: ExperimentConfig,
    /// Checkpoint times bounding the growth window.
    pub window: [f64; 2],
    /// Allowed deviation as a fraction of `κ²`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Overrides the prediction from the spectral density.
    #[serde(default)]
    pub kappa2: Option<f64>,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRate {
    pub j: usize,
    pub l: usize,
    pub rate: Estimate,
    pub expected: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovLimitReport {
    pub kappa2: DiffusionConstant,
    pub window: [f64; 2],
    pub rates: Vec<GrowthRate>,
    pub n_failed: usize,
    pub pass: bool,
    pub moments: MomentReport,
}

impl MarkovLimitReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,l,rate,rate_se,expected,pass\n");
        for r in &self.rates {
            out.push_str(&format!("{},{},{:?},{:?},{:?},{}\n", r.j + 1, r.l + 1, r.rate.mean, r.rate.stderr, r.expected, r.pass));
        }
        out
    }
}

/// `d⟨p^j p^l⟩/dτ` over the window must equal `κ² m²c² δ^{jl}` within
/// `tolerance·κ²m²c²`, with at most one trajectory in a thousand lost.
pub fn run_markov_limit(cfg: &MarkovLimitConfig) -> Result<MarkovLimitReport, HarnessError> {
    if cfg.field.clock != Clock::Proper || cfg.field.schedule.initial != InitialDistribution::Rest {
        return Err(HarnessError::InvalidConfig("the Markov-limit check runs from rest on the proper clock".into()));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(HarnessError::InvalidConfig("tolerance must be positive".into()));
    }
    let find = |t: f64| {
        cfg.field.schedule.checkpoints.iter().position(|&c| (c - t).abs() <= 1e-9 * t.abs().max(1.0)).ok_or_else(|| {
            HarnessError::InvalidConfig(format!("window time {t} is not a checkpoint"))
        })
    };
    let (from, to) = (find(cfg.window[0])?, find(cfg.window[1])?);
    if from >= to {
        return Err(HarnessError::InvalidConfig("window must be increasing".into()));
    }
    let kappa2 = match cfg.kappa2 {
        Some(v) => DiffusionConstant::from_computed(v),
        None => kubo_prediction(&cfg.field.spec.density(cfg.field.coupling), cfg.quad_order)?,
    };
    let samples = sample_field_ensemble(&cfg.field)?;
    let mc = cfg.field.particle.mass_c();
    let target = kappa2.value * mc * mc;
    let mut rates = Vec::new();
    for j in 0..3 {
        for l in j..3 {
            let rate = samples.growth_rate(j, l, from, to);
            let expected = if j == l { target } else { 0.0 };
            let pass = (rate.mean - expected).abs() <= cfg.tolerance * target;
            rates.push(GrowthRate { j, l, rate, expected, pass });
        }
    }
    let n_failed = samples.n_failed();
    let pass = n_failed * 1000 <= samples.momenta.len() && rates.iter().all(|r| r.pass);
    let label = format!("field[{}, eps={}]", cfg.field.spec.density(cfg.field.coupling).label(), cfg.field.coupling);
    Ok(MarkovLimitReport {
        kappa2,
        window: cfg.window,
        rates,
        n_failed,
        pass,
        moments: MomentReport::from_samples(label, Clock::Proper, &samples, cfg.field.schedule.histogram_bins),
    })
}

/// Proper-clock diffusion whose `⟨|p|²⟩` must keep growing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProperGrowthConfig {
    pub kappa2: f64,
    #[serde(default)]
    pub particle: ParticleParams,
    /// Minimum `Δ⟨|p|²⟩` between consecutive checkpoints in combined standard errors.
    #[serde(default = "default_z_min")]
    pub z_min: f64,
    #[serde(flatten)]
    pub schedule: Schedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthStep {
    pub from: f64,
    pub to: f64,
    pub before: Estimate,
    pub after: Estimate,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProperGrowthReport {
    pub steps: Vec<GrowthStep>,
    pub pass: bool,
    pub moments: MomentReport,
}

impl ProperGrowthReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("from,to,before,before_se,after,after_se,z\n");
        for g in &self.steps {
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                g.from, g.to, g.before.mean, g.before.stderr, g.after.mean, g.after.stderr, g.z
            ));
        }
        out
    }
}

/// Runs `SchayDudleyProper` and checks `⟨|p|²⟩` rises by more than `z_min`
/// combined standard errors between every pair of consecutive checkpoints.
pub fn proper_growth(cfg: &ProperGrowthConfig) -> Result<ProperGrowthReport, HarnessError> {
    if cfg.schedule.checkpoints.len() < 2 {
        return Err(HarnessError::InvalidConfig("need at least two checkpoints".into()));
    }
    let diffusion = DiffusionConfig {
        params: DiffusionParams::new(cfg.kappa2, cfg.particle, DiffusionKind::SchayDudleyProper)?,
        schedule: cfg.schedule.clone(),
    };
    let moments = run_diffusion_ensemble(&diffusion)?;
    let steps: Vec<GrowthStep> = moments
        .checkpoints
        .windows(2)
        .map(|w| {
            let (before, after) = (w[0].mean_p_sq, w[1].mean_p_sq);
            let z = (after.mean - before.mean) / before.stderr.hypot(after.stderr);
            GrowthStep { from: w[0].s, to: w[1].s, before, after, z }
        })
        .collect();
    let pass = steps.iter().all(|g| g.z > cfg.z_min);
    Ok(ProperGrowthReport { steps, pass, moments })
}
