//! Correlation profiles along a straight worldline and the Kubo diffusion constant.
//!
//! Along `x(s) = s·n` with `n = p/(mc)` the two-point tensor reduces to
//! `G_{μν} = H₁(s) η_{μν} + H(s) n_μ n_ν` in the Hessian map of the field
//! module, with `H₁(s) = 2g'(s²)` and `H(s) = 4s²g''(s²)` when the correlation
//! is a function of `u = x²` only. The Kubo constant is
//! `κ² = 2∫₀^∞ (2H₁ + H) ds = 4∫₀^∞ g'(s²) ds`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::field::{realization_products, sample_realization, Estimator, FieldError, Matrix6x6, SpectralDensity, CHUNK};
use crate::minkowski::{FourVector, METRIC, PAIRS};
use crate::quad::{integrate, integrate_semi_infinite, trapezoid, TailEstimate};
use crate::rng::{derive_seed, StreamTag};

/// Points in a default tabulation grid.
pub const GRID_POINTS: usize = 512;
/// Default grid length in units of the decay scale.
pub const GRID_SPAN: f64 = 10.0;
/// A tabulated profile counts as decayed once `|2H₁ + H|` at its end is below
/// this fraction of its maximum.
pub const DECAY_FRACTION: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KuboError {
    #[error("correlation not resolved: |2H1 + H| = {last:.3e} at the grid end, maximum {max:.3e}")]
    NotResolved { last: f64, max: f64 },
    #[error("profile not admissible: the Kubo integral diverges")]
    NotAdmissible,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("this route needs a scalar correlation g(u)")]
    NeedsScalar,
    #[error("momentum is not on the mass shell")]
    OffShell,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Scalar correlation `g(u)` of `u = x·x` with its first two derivatives.
pub trait ScalarCorrelation: Send + Sync {
    fn g(&self, u: f64) -> f64;
    fn dg(&self, u: f64) -> f64;
    fn d2g(&self, u: f64) -> f64;
    fn decay_scale(&self) -> f64 {
        1.0
    }
}

/// `g(u) = A e^{-r u}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentialG {
    pub amplitude: f64,
    pub rate: f64,
}

impl ScalarCorrelation for ExponentialG {
    fn g(&self, u: f64) -> f64 {
        self.amplitude * (-self.rate * u).exp()
    }
    fn dg(&self, u: f64) -> f64 {
        -self.rate * self.g(u)
    }
    fn d2g(&self, u: f64) -> f64 {
        self.rate * self.rate * self.g(u)
    }
    fn decay_scale(&self) -> f64 {
        1.0 / self.rate.sqrt()
    }
}

/// `g(u) = A (1 + u/ℓ²)^{-q}`; the Kubo integral diverges for `q ≤ -1/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawG {
    pub amplitude: f64,
    pub length: f64,
    pub exponent: f64,
}

impl ScalarCorrelation for PowerLawG {
    fn g(&self, u: f64) -> f64 {
        self.amplitude * (1.0 + u / (self.length * self.length)).powf(-self.exponent)
    }
    fn dg(&self, u: f64) -> f64 {
        let l2 = self.length * self.length;
        -self.exponent / l2 * self.amplitude * (1.0 + u / l2).powf(-self.exponent - 1.0)
    }
    fn d2g(&self, u: f64) -> f64 {
        let l2 = self.length * self.length;
        self.exponent * (self.exponent + 1.0) / (l2 * l2) * self.amplitude * (1.0 + u / l2).powf(-self.exponent - 2.0)
    }
    fn decay_scale(&self) -> f64 {
        self.length
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantG(pub f64);

impl ScalarCorrelation for ConstantG {
    fn g(&self, _u: f64) -> f64 {
        self.0
    }
    fn dg(&self, _u: f64) -> f64 {
        0.0
    }
    fn d2g(&self, _u: f64) -> f64 {
        0.0
    }
}

type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Profiles `H₁(s)`, `H(s)` on a grid starting at `s = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tabulated {
    pub s: Vec<f64>,
    pub h1: Vec<f64>,
    pub h: Vec<f64>,
    pub stderr_h1: Vec<f64>,
    pub stderr_h: Vec<f64>,
}

impl Tabulated {
    pub fn new(s: Vec<f64>, h1: Vec<f64>, h: Vec<f64>) -> Result<Self, KuboError> {
        let n = s.len();
        let t = Tabulated { s, h1, h, stderr_h1: vec![0.0; n], stderr_h: vec![0.0; n] };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), KuboError> {
        let n = self.s.len();
        if n < 2 {
            return Err(KuboError::InvalidGrid("need at least two points".into()));
        }
        if [self.h1.len(), self.h.len(), self.stderr_h1.len(), self.stderr_h.len()].iter().any(|&l| l != n) {
            return Err(KuboError::InvalidGrid("column lengths differ".into()));
        }
        if self.s[0] != 0.0 {
            return Err(KuboError::InvalidGrid(format!("grid must start at s = 0, starts at {}", self.s[0])));
        }
        if let Some(i) = self.s.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(KuboError::InvalidGrid(format!("grid not strictly increasing at index {}", i + 1)));
        }
        Ok(())
    }

    /// `2H₁ + H` at each grid point.
    pub fn kernel(&self) -> Vec<f64> {
        self.h1.iter().zip(&self.h).map(|(a, b)| 2.0 * a + b).collect()
    }

    /// CSV with columns `s,H1,H,stderr_H1,stderr_H`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,H1,H,stderr_H1,stderr_H\n");
        for i in 0..self.s.len() {
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?},{:?}\n",
                self.s[i], self.h1[i], self.h[i], self.stderr_h1[i], self.stderr_h[i]
            ));
        }
        out
    }
}

/// Correlation data feeding the Kubo constant.
#[derive(Clone)]
pub enum CorrelationProfile {
    Scalar(Arc<dyn ScalarCorrelation>),
    /// `H₁` and `H` given directly as functions of `s`.
    Direct { h1: ProfileFn, h: ProfileFn, decay_scale: f64 },
    Tabulated(Tabulated),
}

impl fmt::Debug for CorrelationProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationProfile::Scalar(g) => write!(f, "Scalar(decay_scale = {})", g.decay_scale()),
            CorrelationProfile::Direct { decay_scale, .. } => write!(f, "Direct(decay_scale = {decay_scale})"),
            CorrelationProfile::Tabulated(t) => write!(f, "Tabulated({} points)", t.s.len()),
        }
    }
}

impl CorrelationProfile {
    pub fn scalar(g: impl ScalarCorrelation + 'static) -> Self {
        CorrelationProfile::Scalar(Arc::new(g))
    }

    pub fn direct(
        h1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        decay_scale: f64,
    ) -> Self {
        CorrelationProfile::Direct { h1: Arc::new(h1), h: Arc::new(h), decay_scale }
    }

    pub fn decay_scale(&self) -> f64 {
        match self {
            CorrelationProfile::Scalar(g) => g.decay_scale(),
            CorrelationProfile::Direct { decay_scale, .. } => *decay_scale,
            CorrelationProfile::Tabulated(t) => *t.s.last().unwrap_or(&1.0) / GRID_SPAN,
        }
    }

    /// `2H₁(s) + H(s)`, linearly interpolated for tables and zero past their end.
    pub fn kernel(&self, s: f64) -> f64 {
        match self {
            CorrelationProfile::Scalar(g) => {
                let u = s * s;
                4.0 * g.dg(u) + 4.0 * u * g.d2g(u)
            }
            CorrelationProfile::Direct { h1, h, .. } => 2.0 * h1(s) + h(s),
            CorrelationProfile::Tabulated(t) => {
                let n = t.s.len();
                if s > t.s[n - 1] || s < 0.0 {
                    return 0.0;
                }
                let i = t.s.partition_point(|&v| v <= s).clamp(1, n - 1);
                let (s0, s1) = (t.s[i - 1], t.s[i]);
                let k0 = 2.0 * t.h1[i - 1] + t.h[i - 1];
                let k1 = 2.0 * t.h1[i] + t.h[i];
                k0 + (k1 - k0) * (s - s0) / (s1 - s0)
            }
        }
    }

    /// Samples an analytic profile on `grid`.
    pub fn tabulate(&self, grid: &[f64]) -> Result<Tabulated, KuboError> {
        let (h1, h): (Vec<f64>, Vec<f64>) = match self {
            CorrelationProfile::Scalar(g) => grid
                .iter()
                .map(|&s| (2.0 * g.dg(s * s), 4.0 * s * s * g.d2g(s * s)))
                .unzip(),
            CorrelationProfile::Direct { h1, h, .. } => grid.iter().map(|&s| (h1(s), h(s))).unzip(),
            CorrelationProfile::Tabulated(t) => return Ok(t.clone()),
        };
        Tabulated::new(grid.to_vec(), h1, h)
    }
}

/// `GRID_POINTS` equally spaced points on `[0, GRID_SPAN·decay_scale]`.
pub fn default_grid(decay_scale: f64) -> Vec<f64> {
    let end = GRID_SPAN * decay_scale;
    (0..GRID_POINTS).map(|i| end * i as f64 / (GRID_POINTS - 1) as f64).collect()
}

/// `κ² = 2∫₀^∞ (2H₁ + H) ds`.
pub fn kappa2_from_h(profile: &CorrelationProfile) -> Result<f64, KuboError> {
    match profile {
        CorrelationProfile::Tabulated(t) => {
            t.validate()?;
            let k = t.kernel();
            let max = k.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let last = k.last().unwrap().abs();
            let n = t.s.len() - 1;
            let noise = (4.0 * t.stderr_h1[n].powi(2) + t.stderr_h[n].powi(2)).sqrt();
            // a Monte Carlo tail indistinguishable from zero counts as decayed
            if max > 0.0 && last >= DECAY_FRACTION * max && last > 3.0 * noise {
                return Err(KuboError::NotResolved { last, max });
            }
            Ok(2.0 * trapezoid(&t.s, &k))
        }
        _ => match integrate_semi_infinite(|s| profile.kernel(s), profile.decay_scale(), 1e-14) {
            TailEstimate::Converged(v) => Ok(2.0 * v),
            TailEstimate::Divergent => Err(KuboError::NotAdmissible),
        },
    }
}

/// `κ² = 2∫₀^∞ u^{-1/2} g'(u) du`, evaluated as `4∫₀^∞ g'(s²) ds`.
pub fn kappa2_from_g(profile: &CorrelationProfile) -> Result<f64, KuboError> {
    let CorrelationProfile::Scalar(g) = profile else {
        return Err(KuboError::NeedsScalar);
    };
    match integrate_semi_infinite(|s| g.dg(s * s), g.decay_scale(), 1e-14) {
        TailEstimate::Converged(v) => Ok(4.0 * v),
        TailEstimate::Divergent => Err(KuboError::NotAdmissible),
    }
}

/// Diffusion constant actually used downstream: `|κ²|`, with the sign kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiffusionConstant {
    pub value: f64,
    pub computed: f64,
    pub negative: bool,
}

impl DiffusionConstant {
    pub fn from_computed(computed: f64) -> Self {
        DiffusionConstant { value: computed.abs(), computed, negative: computed < 0.0 }
    }
}

/// Pre-Markov coefficient `∫₀^τ∫₀^s (2H₁ + H)(s') ds' ds = ∫₀^τ (τ - r)(2H₁ + H)(r) dr`.
pub fn predict_covariance_growth(profile: &CorrelationProfile, tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    match profile {
        CorrelationProfile::Tabulated(t) => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (i, &s) in t.s.iter().enumerate() {
                if s >= tau {
                    break;
                }
                xs.push(s);
                ys.push((tau - s) * (2.0 * t.h1[i] + t.h[i]));
            }
            if tau <= *t.s.last().unwrap() {
                xs.push(tau);
                ys.push(0.0);
            }
            trapezoid(&xs, &ys)
        }
        _ => {
            // split at multiples of the decay scale so the rule sees the structure
            let step = profile.decay_scale().max(1e-300);
            let mut a = 0.0;
            let mut total = 0.0;
            while a < tau {
                let b = (a + step).min(tau);
                total += integrate(|r| (tau - r) * profile.kernel(r), a, b, 1e-14);
                a = b;
            }
            total
        }
    }
}

/// Contracts one 6×6 storage-basis correlator with `n` and solves for
/// `(H₁, H)`: `n^μn^σ η^{νρ} T = 3(2H₁ + H)`, `η^{μσ}η^{νρ} T = 6(4H₁ + H)`.
pub fn h_from_correlator(values: &Matrix6x6, n: &FourVector) -> (f64, f64) {
    let mut t = [[[[0.0; 4]; 4]; 4]; 4];
    for (a, &(mu, nu)) in PAIRS.iter().enumerate() {
        for (b, &(sigma, rho)) in PAIRS.iter().enumerate() {
            let v = values[a][b];
            t[mu][nu][sigma][rho] = v;
            t[nu][mu][sigma][rho] = -v;
            t[mu][nu][rho][sigma] = -v;
            t[nu][mu][rho][sigma] = v;
        }
    }
    let nu_up = n.0;
    let mut cn = 0.0;
    let mut tr = 0.0;
    for mu in 0..4 {
        for nu in 0..4 {
            tr += METRIC[mu] * METRIC[nu] * t[mu][nu][mu][nu];
            for sigma in 0..4 {
                cn += nu_up[mu] * nu_up[sigma] * METRIC[nu] * t[mu][nu][sigma][nu];
            }
        }
    }
    let h1 = (tr / 6.0 - cn / 3.0) / 2.0;
    let h = 2.0 * cn / 3.0 - tr / 6.0;
    (h1, h)
}

/// Monte Carlo `H₁(s)`, `H(s)` along `x(s) = (s/mc) p` from `n_seeds`
/// realizations, with standard errors.
#[allow(clippy::too_many_arguments)]
pub fn h_profiles_from_field(
    spec: &SpectralDensity,
    n_modes: usize,
    n_seeds: usize,
    master_seed: u64,
    p: &FourVector,
    mass_c: f64,
    grid: &[f64],
    estimator: Estimator,
) -> Result<Tabulated, KuboError> {
    if (p.square() - mass_c * mass_c).abs() > 1e-9 * mass_c * mass_c || p.time() <= 0.0 {
        return Err(KuboError::OffShell);
    }
    if n_seeds < 2 {
        return Err(FieldError::TooFewSeeds(n_seeds).into());
    }
    let n = (1.0 / mass_c) * *p;
    let pairs: Vec<(FourVector, FourVector)> = grid.iter().map(|&s| (FourVector::ZERO, s * n)).collect();
    let m = grid.len();
    let n_chunks = n_seeds.div_ceil(CHUNK);
    let chunks: Vec<[Vec<f64>; 4]> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(n_seeds) {
                let seed = derive_seed(master_seed, StreamTag::FieldRealization, i as u64);
                let real = sample_realization(spec, n_modes, seed)?;
                for (j, prod) in realization_products(&real, &pairs, estimator).iter().enumerate() {
                    let (h1, h) = h_from_correlator(prod, &n);
                    acc[0][j] += h1;
                    acc[1][j] += h1 * h1;
                    acc[2][j] += h;
                    acc[3][j] += h * h;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, FieldError>>()?;
    let mut total = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for c in &chunks {
        for (t, v) in total.iter_mut().zip(c) {
            for (a, b) in t.iter_mut().zip(v) {
                *a += b;
            }
        }
    }
    let count = n_seeds as f64;
    let mean_se = |sum: &[f64], sq: &[f64]| -> (Vec<f64>, Vec<f64>) {
        sum.iter()
            .zip(sq)
            .map(|(s, q)| {
                let mean = s / count;
                let var = (q / count - mean * mean).max(0.0) * count / (count - 1.0);
                (mean, (var / count).sqrt())
            })
            .unzip()
    };
    let (h1, se1) = mean_se(&total[0], &total[1]);
    let (h, se) = mean_se(&total[2], &total[3]);
    let t = Tabulated { s: grid.to_vec(), h1, h, stderr_h1: se1, stderr_h: se };
    t.validate()?;
    Ok(t)
}
