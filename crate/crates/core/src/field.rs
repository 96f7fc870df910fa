//! Gaussian random field strengths built from a finite sum of plane waves.
//!
//! A realization is `F(x) = Σ_n w_n Re[z_n e^{-i k_n·x}]` with `k_n` drawn from
//! the spectral density and each complex amplitude `z_n = re + i·im` having
//! independent real and imaginary parts distributed as `N(0, M(k_n))`. The
//! ensemble two-point function is then
//!
//! `⟨F_{μν}(x) F_{σρ}(x')⟩ = ε² ∫ G̃(k) M_{(μν),(σρ)}(k) cos(k·(x - x')) d⁴k`,
//!
//! i.e. the Fourier measure is plain `d⁴k` with no `2π` factors, and
//! `g(x) = ε² ∫ G̃(k) cos(k·x) d⁴k` is the scalar whose second derivatives
//! `G_{μν} = ∂_μ∂_ν g` feed [`two_point_from_hessian`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix6, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kubo::ScalarCorrelation;
use crate::minkowski::{
    levi_civita, AntisymTensor, Boost, ComplexAntisymTensor, FourVector, METRIC, PAIRS,
};
use crate::quad::gauss_legendre;
use crate::rng::{derive_seed, stream_rng, StreamTag};

pub type Matrix6x6 = [[f64; 6]; 6];

/// Proposals after which rejection sampling gives up.
pub const MAX_REJECTIONS: u64 = 1_000_000;
/// Eigenvalues below `-PSD_TOLERANCE · trace` mark a covariance as indefinite.
pub const PSD_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MODES: usize = 4096;
pub const DEFAULT_COUPLING: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("covariance not PSD: eigenvalue {min_eigenvalue:.3e} at k = {k:?}")]
    NotPsd { k: [f64; 4], min_eigenvalue: f64 },
    #[error("degenerate spectral density: {0} consecutive rejections")]
    Degenerate(u64),
    #[error("n_modes must be at least 1")]
    NoModes,
    #[error("invalid spectral density: {0}")]
    InvalidSpec(String),
    #[error("need at least 2 seeds for standard errors, got {0}")]
    TooFewSeeds(usize),
    #[error("quadrature is only available for isotropic built-in profiles")]
    NoQuadrature,
    #[error("realization text, line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// User-supplied density, sampled by rejection from the box `|k^μ| ≤ k_max`.
#[derive(Clone)]
pub struct CustomProfile {
    pub label: String,
    pub density: Arc<dyn Fn(&FourVector) -> f64 + Send + Sync>,
    pub k_max: f64,
    /// Upper bound of `density` on the box, used as the rejection envelope.
    pub sup: f64,
}

impl fmt::Debug for CustomProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomProfile")
            .field("label", &self.label)
            .field("k_max", &self.k_max)
            .field("sup", &self.sup)
            .finish()
    }
}

/// Shape of the spectral density `G̃(k)`.
#[derive(Clone, Debug)]
pub enum SpectralProfile {
    /// `exp(-k⁰/Λ)` on the forward cone, `|k^i| ≤ k_max`.
    ForwardExponential { lambda: f64, k_max: f64 },
    /// `(15/16π) (k⁰)^{-5} exp(-(k⁰)²/2Λ²)` on the forward cone, `k⁰ ≤ k_max`.
    /// The rest-frame electric autocorrelation is `√(π/2) Λ e^{-Λ²s²/2}` per
    /// component, so the Kubo constant is `π ε²` instead of zero.
    LowFrequencyGaussian { lambda: f64, k_max: f64 },
    /// Uniform on spacelike `k` inside the box. Not a valid spectral density.
    SpacelikeUniform { k_max: f64 },
    Custom(CustomProfile),
}

impl SpectralProfile {
    pub fn label(&self) -> String {
        match self {
            SpectralProfile::ForwardExponential { lambda, k_max } => {
                format!("forward-exponential(lambda={lambda},k_max={k_max})")
            }
            SpectralProfile::LowFrequencyGaussian { lambda, k_max } => {
                format!("low-frequency-gaussian(lambda={lambda},k_max={k_max})")
            }
            SpectralProfile::SpacelikeUniform { k_max } => format!("spacelike-uniform(k_max={k_max})"),
            SpectralProfile::Custom(c) => c.label.clone(),
        }
    }

    pub fn k_max(&self) -> f64 {
        match self {
            SpectralProfile::ForwardExponential { k_max, .. }
            | SpectralProfile::LowFrequencyGaussian { k_max, .. }
            | SpectralProfile::SpacelikeUniform { k_max } => *k_max,
            SpectralProfile::Custom(c) => c.k_max,
        }
    }

    /// Characteristic correlation time in the rest frame.
    pub fn decay_scale(&self) -> f64 {
        match self {
            SpectralProfile::ForwardExponential { lambda, .. }
            | SpectralProfile::LowFrequencyGaussian { lambda, .. } => 1.0 / lambda,
            _ => 1.0 / self.k_max(),
        }
    }

    /// `G̃(k)` including the truncation.
    pub fn density(&self, k: &FourVector) -> f64 {
        let k0 = k.time();
        let s = k.space();
        let inside_box = |k_max: f64| s.iter().all(|c| c.abs() <= k_max);
        let forward = k0 >= 0.0 && k.square() >= 0.0;
        match self {
            SpectralProfile::ForwardExponential { lambda, k_max } => {
                if forward && k0 <= *k_max && inside_box(*k_max) {
                    (-k0 / lambda).exp()
                } else {
                    0.0
                }
            }
            SpectralProfile::LowFrequencyGaussian { lambda, k_max } => {
                if forward && k0 > 0.0 && k0 <= *k_max {
                    15.0 / (16.0 * PI) * k0.powi(-5) * (-0.5 * (k0 / lambda).powi(2)).exp()
                } else {
                    0.0
                }
            }
            SpectralProfile::SpacelikeUniform { k_max } => {
                if k.square() < 0.0 && k0.abs() <= *k_max && inside_box(*k_max) {
                    1.0
                } else {
                    0.0
                }
            }
            SpectralProfile::Custom(c) => (c.density)(k),
        }
    }

    fn validate(&self) -> Result<(), FieldError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(FieldError::InvalidSpec(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self {
            SpectralProfile::ForwardExponential { lambda, k_max }
            | SpectralProfile::LowFrequencyGaussian { lambda, k_max } => {
                positive("lambda", *lambda)?;
                positive("k_max", *k_max)
            }
            SpectralProfile::SpacelikeUniform { k_max } => positive("k_max", *k_max),
            SpectralProfile::Custom(c) => {
                positive("k_max", c.k_max)?;
                positive("sup", c.sup)
            }
        }
    }
}

/// Spectral density together with the overall coupling `ε`.
#[derive(Clone, Debug)]
pub struct SpectralDensity {
    pub profile: SpectralProfile,
    pub coupling: f64,
}

impl SpectralDensity {
    pub fn new(profile: SpectralProfile, coupling: f64) -> Self {
        SpectralDensity { profile, coupling }
    }

    /// `exp(-k⁰)` on the forward cone with `k_max = 5`, `ε = 0.1`.
    pub fn reference() -> Self {
        Self::new(SpectralProfile::ForwardExponential { lambda: 1.0, k_max: 5.0 }, DEFAULT_COUPLING)
    }

    pub fn low_frequency_gaussian(lambda: f64, k_max: f64, coupling: f64) -> Self {
        Self::new(SpectralProfile::LowFrequencyGaussian { lambda, k_max }, coupling)
    }

    pub fn with_coupling(&self, coupling: f64) -> Self {
        Self::new(self.profile.clone(), coupling)
    }

    pub fn label(&self) -> String {
        self.profile.label()
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.coupling.is_finite() && self.coupling >= 0.0) {
            return Err(FieldError::InvalidSpec(format!("coupling must be >= 0, got {}", self.coupling)));
        }
        self.profile.validate()
    }
}

/// Mode covariance `M(k)` in the storage basis:
/// `M_{(μν),(σρ)} = -(η_{μσ}k_νk_ρ - η_{μρ}k_νk_σ + η_{νρ}k_μk_σ - η_{νσ}k_μk_ρ)`.
pub fn mode_covariance(k: &FourVector) -> Matrix6x6 {
    let kl = k.lower();
    let mut m = [[0.0; 6]; 6];
    for (a, &(mu, nu)) in PAIRS.iter().enumerate() {
        for (b, &(sigma, rho)) in PAIRS.iter().enumerate() {
            let eta = |i: usize, j: usize| if i == j { METRIC[i] } else { 0.0 };
            m[a][b] = -(eta(mu, sigma) * kl[nu] * kl[rho] - eta(mu, rho) * kl[nu] * kl[sigma]
                + eta(nu, rho) * kl[mu] * kl[sigma]
                - eta(nu, sigma) * kl[mu] * kl[rho]);
        }
    }
    m
}

pub fn eigenvalues(m: &Matrix6x6) -> [f64; 6] {
    let eig = SymmetricEigen::new(Matrix6::from_fn(|i, j| m[i][j]));
    let mut v: [f64; 6] = std::array::from_fn(|i| eig.eigenvalues[i]);
    v.sort_by(f64::total_cmp);
    v
}

pub fn trace(m: &Matrix6x6) -> f64 {
    (0..6).map(|i| m[i][i]).sum()
}

/// How mode amplitudes are drawn from `N(0, M(k))`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeSampler {
    /// `z = k ∧ a` with a spatial gauge vector `a ~ N(0, I - r rᵀ)`, `r = k⃗/k⁰`.
    #[default]
    Factored,
    /// `z = V Λ^{1/2} n` from the symmetric eigendecomposition of `M(k)`.
    Eigen,
}

/// Draws one real amplitude with covariance `M(k)`.
pub fn sample_amplitude(
    k: &FourVector,
    sampler: AmplitudeSampler,
    rng: &mut ChaCha8Rng,
) -> Result<AntisymTensor, FieldError> {
    match sampler {
        AmplitudeSampler::Factored => factored_amplitude(k, rng),
        AmplitudeSampler::Eigen => eigen_amplitude(k, rng),
    }
}

fn factored_amplitude(k: &FourVector, rng: &mut ChaCha8Rng) -> Result<AntisymTensor, FieldError> {
    let k0 = k.time();
    let ks = k.space();
    let n: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let k2 = crate::minkowski::dot3(ks, ks);
    if k0 == 0.0 && k2 == 0.0 {
        return Ok(AntisymTensor::ZERO);
    }
    if k0 < 0.0 || k2 > k0 * k0 {
        return Err(FieldError::NotPsd { k: k.0, min_eigenvalue: min_causal_eigenvalue(k) });
    }
    let r = ks.map(|c| c / k0);
    let r2 = k2 / (k0 * k0);
    let a = if r2 > 0.0 {
        let rn = r2.sqrt();
        let rhat = r.map(|c| c / rn);
        let proj = crate::minkowski::dot3(rhat, n);
        let shrink = (1.0 - r2).max(0.0).sqrt() - 1.0;
        std::array::from_fn(|i| n[i] + shrink * proj * rhat[i])
    } else {
        n
    };
    Ok(AntisymTensor::new(a.map(|c| k0 * c), crate::minkowski::cross3(ks, a)))
}

fn min_causal_eigenvalue(k: &FourVector) -> f64 {
    eigenvalues(&mode_covariance(k))[0]
}

fn eigen_amplitude(k: &FourVector, rng: &mut ChaCha8Rng) -> Result<AntisymTensor, FieldError> {
    let m = mode_covariance(k);
    let eig = SymmetricEigen::new(Matrix6::from_fn(|i, j| m[i][j]));
    let tr = trace(&m);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * tr {
        return Err(FieldError::NotPsd { k: k.0, min_eigenvalue: min });
    }
    let n: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let mut z = [0.0; 6];
    for col in 0..6 {
        // rounding-level eigenvalues would leak amplitude out of range(M)
        let lambda = eig.eigenvalues[col];
        let scale = if lambda > PSD_TOLERANCE * tr { lambda.sqrt() * n[col] } else { 0.0 };
        for (row, zr) in z.iter_mut().enumerate() {
            *zr += eig.eigenvectors[(row, col)] * scale;
        }
    }
    Ok(AntisymTensor::from_components(z))
}

/// A wavevector draw together with the importance tilt it was drawn under.
struct Draw {
    k: FourVector,
    tilt: f64,
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = crate::minkowski::dot3(v, v).sqrt();
        if n > 1e-12 {
            return v.map(|c| c / n);
        }
    }
}

fn in_ball(k0: f64, rng: &mut ChaCha8Rng) -> FourVector {
    // the largest of three uniforms has density 3u², like |k⃗|/k⁰ in the ball
    let u = rng.random::<f64>().max(rng.random::<f64>()).max(rng.random::<f64>());
    let r = k0 * u;
    let dir = unit_vector(rng);
    FourVector::from_parts(k0, dir.map(|c| c * r))
}

fn box_rejection(profile: &SpectralProfile, sup: f64, rng: &mut ChaCha8Rng) -> Result<Draw, FieldError> {
    let k_max = profile.k_max();
    for _ in 0..MAX_REJECTIONS {
        let k = FourVector(std::array::from_fn(|_| k_max * (2.0 * rng.random::<f64>() - 1.0)));
        let d = profile.density(&k);
        if d > 0.0 && rng.random::<f64>() * sup < d {
            return Ok(Draw { k, tilt: 1.0 });
        }
    }
    Err(FieldError::Degenerate(MAX_REJECTIONS))
}

fn lower_gamma4(x: f64) -> f64 {
    if x < 0.5 {
        // series avoids the cancellation in the closed form
        let mut term = x.powi(4) / 4.0;
        let mut sum = term;
        for n in 1..30 {
            term *= -x / n as f64 * (4.0 + n as f64 - 1.0) / (4.0 + n as f64);
            sum += term;
        }
        sum
    } else {
        6.0 - (-x).exp() * (x * x * x + 3.0 * x * x + 6.0 * x + 6.0)
    }
}

impl SpectralDensity {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Draw, FieldError> {
        match &self.profile {
            SpectralProfile::ForwardExponential { lambda, k_max } => {
                // k⁰ has density ∝ (k⁰)³ e^{-k⁰/Λ}, k⃗ uniform in the ball |k⃗| ≤ k⁰
                let gamma = Gamma::new(4.0, *lambda).map_err(|e| FieldError::InvalidSpec(e.to_string()))?;
                for _ in 0..MAX_REJECTIONS {
                    let k0: f64 = rng.sample(gamma);
                    if k0 <= *k_max {
                        return Ok(Draw { k: in_ball(k0, rng), tilt: 1.0 });
                    }
                }
                Err(FieldError::Degenerate(MAX_REJECTIONS))
            }
            SpectralProfile::LowFrequencyGaussian { lambda, k_max } => {
                // tilt (k⁰)²: k⁰ half-normal, k⃗ uniform in the ball
                for _ in 0..MAX_REJECTIONS {
                    let k0 = (lambda * rng.sample::<f64, _>(StandardNormal)).abs();
                    if k0 > 0.0 && k0 <= *k_max {
                        return Ok(Draw { k: in_ball(k0, rng), tilt: k0 * k0 });
                    }
                }
                Err(FieldError::Degenerate(MAX_REJECTIONS))
            }
            SpectralProfile::SpacelikeUniform { .. } => box_rejection(&self.profile, 1.0, rng),
            SpectralProfile::Custom(c) => box_rejection(&self.profile, c.sup, rng),
        }
    }

    /// `∫ tilt(k) G̃(k) d⁴k` for the sampler's tilt.
    fn normalization(&self, seed: u64) -> Result<f64, FieldError> {
        match &self.profile {
            SpectralProfile::ForwardExponential { lambda, k_max } => {
                Ok(4.0 * PI / 3.0 * lambda.powi(4) * lower_gamma4(k_max / lambda))
            }
            SpectralProfile::LowFrequencyGaussian { lambda, k_max } => Ok(1.25
                * lambda
                * (PI / 2.0).sqrt()
                * statrs::function::erf::erf(k_max / (lambda * 2f64.sqrt()))),
            SpectralProfile::SpacelikeUniform { .. } => self.box_normalization(1.0, seed),
            SpectralProfile::Custom(c) => self.box_normalization(c.sup, seed),
        }
    }

    fn box_normalization(&self, sup: f64, seed: u64) -> Result<f64, FieldError> {
        const PROPOSALS: u64 = 1 << 20;
        let k_max = self.profile.k_max();
        let mut rng = stream_rng(derive_seed(seed, StreamTag::Normalization, 0), 0);
        let mut sum = 0.0;
        for _ in 0..PROPOSALS {
            let k = FourVector(std::array::from_fn(|_| k_max * (2.0 * rng.random::<f64>() - 1.0)));
            sum += self.profile.density(&k).min(sup);
        }
        let z = sum / PROPOSALS as f64 * (2.0 * k_max).powi(4);
        if z > 0.0 {
            Ok(z)
        } else {
            Err(FieldError::Degenerate(PROPOSALS))
        }
    }
}

/// One plane-wave mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: FourVector,
    pub z: ComplexAntisymTensor,
    /// Weight including the coupling.
    pub w: f64,
}

#[derive(Clone, Debug, Default)]
struct ModeCache {
    /// Lowered wavevector components, so the phase is `Σ_μ kl[μ] x^μ`.
    kl: [Vec<f64>; 4],
    re: [Vec<f64>; 6],
    im: [Vec<f64>; 6],
}

impl ModeCache {
    fn build(modes: &[Mode]) -> Self {
        let kl = std::array::from_fn(|mu| modes.iter().map(|m| METRIC[mu] * m.k.0[mu]).collect());
        let re = std::array::from_fn(|c| modes.iter().map(|m| m.w * m.z.re.components()[c]).collect());
        let im = std::array::from_fn(|c| modes.iter().map(|m| m.w * m.z.im.components()[c]).collect());
        ModeCache { kl, re, im }
    }
}

/// Immutable finite-mode sample of the random field.
#[derive(Clone, Debug)]
pub struct FieldRealization {
    modes: Vec<Mode>,
    seed: u64,
    label: String,
    coupling: f64,
    cache: ModeCache,
}

impl PartialEq for FieldRealization {
    fn eq(&self, other: &Self) -> bool {
        self.modes == other.modes
            && self.seed == other.seed
            && self.label == other.label
            && self.coupling.to_bits() == other.coupling.to_bits()
    }
}

/// Anything that can report a field strength at a spacetime point.
pub trait FieldSource: Sync {
    fn field_at(&self, x: &FourVector) -> AntisymTensor;
}

/// Spatially and temporally constant field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformField(pub AntisymTensor);

impl FieldSource for UniformField {
    fn field_at(&self, _x: &FourVector) -> AntisymTensor {
        self.0
    }
}

impl FieldSource for FieldRealization {
    fn field_at(&self, x: &FourVector) -> AntisymTensor {
        evaluate_field(self, x)
    }
}

impl<T: FieldSource + ?Sized> FieldSource for &T {
    fn field_at(&self, x: &FourVector) -> AntisymTensor {
        (**self).field_at(x)
    }
}

impl FieldRealization {
    pub fn from_modes(modes: Vec<Mode>, seed: u64, label: impl Into<String>, coupling: f64) -> Self {
        let cache = ModeCache::build(&modes);
        FieldRealization { modes, seed, label: label.into(), coupling, cache }
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    /// The same field seen from the boosted frame: `F'(Λx) = Λ⁻ᵀ F(x) Λ⁻¹`.
    pub fn boosted(&self, boost: &Boost) -> FieldRealization {
        let modes = self
            .modes
            .iter()
            .map(|m| Mode { k: boost.apply(&m.k), z: boost.apply_complex_tensor(&m.z), w: m.w })
            .collect();
        FieldRealization::from_modes(modes, self.seed, self.label.clone(), self.coupling)
    }

    /// Contribution of mode `n` alone at `x`.
    pub fn mode_field(&self, n: usize, x: &FourVector) -> AntisymTensor {
        let c = &self.cache;
        let phase: f64 = (0..4).map(|mu| c.kl[mu][n] * x.0[mu]).sum();
        let (s, co) = sincos(phase);
        AntisymTensor::from_components(std::array::from_fn(|i| c.re[i][n] * co + c.im[i][n] * s))
    }

    /// Serializes to a JSON header line followed by one line per mode:
    /// `k0 k1 k2 k3 re_e1 im_e1 … re_b3 im_b3 w`.
    pub fn to_text(&self) -> String {
        let header = serde_json::json!({
            "seed": self.seed,
            "spec": self.label,
            "n_modes": self.modes.len(),
            "coupling": self.coupling,
        });
        let mut out = header.to_string();
        out.push('\n');
        for m in &self.modes {
            let re = m.z.re.components();
            let im = m.z.im.components();
            let mut fields: Vec<f64> = m.k.0.to_vec();
            for i in 0..6 {
                fields.push(re[i]);
                fields.push(im[i]);
            }
            fields.push(m.w);
            let line: Vec<String> = fields.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<FieldRealization, FieldError> {
        #[derive(Deserialize)]
        struct Header {
            seed: u64,
            spec: String,
            n_modes: usize,
            coupling: f64,
        }
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(FieldError::Parse { line: 1, message: "empty input".into() })?;
        let header: Header = serde_json::from_str(first)
            .map_err(|e| FieldError::Parse { line: 1, message: e.to_string() })?;
        let mut modes = Vec::with_capacity(header.n_modes);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| FieldError::Parse { line: idx + 1, message };
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if values.len() != 17 {
                return Err(parse_err(format!("expected 17 values, found {}", values.len())));
            }
            let k = FourVector([values[0], values[1], values[2], values[3]]);
            let re = AntisymTensor::from_components(std::array::from_fn(|i| values[4 + 2 * i]));
            let im = AntisymTensor::from_components(std::array::from_fn(|i| values[5 + 2 * i]));
            modes.push(Mode { k, z: ComplexAntisymTensor::new(re, im), w: values[16] });
        }
        if modes.len() != header.n_modes {
            return Err(FieldError::Parse {
                line: 1,
                message: format!("header declares {} modes, found {}", header.n_modes, modes.len()),
            });
        }
        Ok(FieldRealization::from_modes(modes, header.seed, header.spec, header.coupling))
    }
}

/// Samples `n_modes` plane waves. Deterministic in `(spec, n_modes, seed)`.
pub fn sample_realization(
    spec: &SpectralDensity,
    n_modes: usize,
    seed: u64,
) -> Result<FieldRealization, FieldError> {
    sample_realization_with(spec, n_modes, seed, AmplitudeSampler::Factored)
}

pub fn sample_realization_with(
    spec: &SpectralDensity,
    n_modes: usize,
    seed: u64,
    sampler: AmplitudeSampler,
) -> Result<FieldRealization, FieldError> {
    if n_modes == 0 {
        return Err(FieldError::NoModes);
    }
    spec.validate()?;
    let mut rng = stream_rng(derive_seed(seed, StreamTag::FieldRealization, 0), 0);
    let mut draws = Vec::with_capacity(n_modes);
    for _ in 0..n_modes {
        let d = spec.draw(&mut rng)?;
        let re = sample_amplitude(&d.k, sampler, &mut rng)?;
        let im = sample_amplitude(&d.k, sampler, &mut rng)?;
        draws.push((d, ComplexAntisymTensor::new(re, im)));
    }
    let z_norm = spec.normalization(seed)?;
    let scale = spec.coupling * spec.coupling * z_norm / n_modes as f64;
    let modes = draws.into_iter().map(|(d, z)| Mode { k: d.k, z, w: (scale / d.tilt).sqrt() }).collect();
    Ok(FieldRealization::from_modes(modes, seed, spec.label(), spec.coupling))
}

/// `F(x) = Σ_n w_n Re[z_n e^{-i k_n·x}]`.
pub fn evaluate_field(real: &FieldRealization, x: &FourVector) -> AntisymTensor {
    const BLOCK: usize = 64;
    let c = &real.cache;
    let [x0, x1, x2, x3] = x.0;
    let n = real.modes.len();
    let mut acc = [0.0; 6];
    let mut sin = [0.0; BLOCK];
    let mut cos = [0.0; BLOCK];
    let mut start = 0;
    while start < n {
        let len = BLOCK.min(n - start);
        let range = start..start + len;
        let (k0, k1, k2, k3) = (&c.kl[0][range.clone()], &c.kl[1][range.clone()], &c.kl[2][range.clone()], &c.kl[3][range.clone()]);
        for j in 0..len {
            let phase = k0[j] * x0 + k1[j] * x1 + k2[j] * x2 + k3[j] * x3;
            let (s, co) = sincos(phase);
            sin[j] = s;
            cos[j] = co;
        }
        for (i, a) in acc.iter_mut().enumerate() {
            let re = &c.re[i][range.clone()];
            let im = &c.im[i][range.clone()];
            let mut sum = 0.0;
            for j in 0..len {
                sum += re[j] * cos[j] + im[j] * sin[j];
            }
            *a += sum;
        }
        start += len;
    }
    AntisymTensor::from_components(acc)
}

/// Branch-free `(sin x, cos x)`: Cody–Waite reduction by `π/2` followed by
/// the fdlibm kernel polynomials. Accurate to a few ulp for `|x| < 2²⁰`.
#[inline(always)]
pub fn sincos(x: f64) -> (f64, f64) {
    const TWO_OVER_PI: f64 = std::f64::consts::FRAC_2_PI;
    const PIO2_1: f64 = 1.570_796_326_734_125_614_17e0;
    const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
    const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;
    const ROUND: f64 = 6_755_399_441_055_744.0;
    const S: [f64; 6] = [
        -1.666_666_666_666_663_243_48e-1,
        8.333_333_333_322_489_461_24e-3,
        -1.984_126_982_985_794_931_34e-4,
        2.755_731_370_707_006_767_89e-6,
        -2.505_076_025_340_686_341_95e-8,
        1.589_690_995_211_550_102_21e-10,
    ];
    const C: [f64; 6] = [
        4.166_666_666_666_660_190_37e-2,
        -1.388_888_888_887_410_957_49e-3,
        2.480_158_728_947_672_941_78e-5,
        -2.755_731_435_139_066_330_35e-7,
        2.087_572_321_298_174_827_90e-9,
        -1.135_964_755_778_819_482_65e-11,
    ];
    let shifted = x * TWO_OVER_PI + ROUND;
    let quadrant = shifted.to_bits() & 3;
    let q = shifted - ROUND;
    let r = ((x - q * PIO2_1) - q * PIO2_2) - q * PIO2_3;
    let z = r * r;
    let sp = S[0] + z * (S[1] + z * (S[2] + z * (S[3] + z * (S[4] + z * S[5]))));
    let cp = C[0] + z * (C[1] + z * (C[2] + z * (C[3] + z * (C[4] + z * C[5]))));
    let s = r + r * z * sp;
    let c = 1.0 - 0.5 * z + z * z * cp;
    let (s, c) = if quadrant & 1 == 1 { (c, -s) } else { (s, c) };
    if quadrant & 2 == 2 {
        (-s, -c)
    } else {
        (s, c)
    }
}

/// `⟨F_{μν}(x) F_{σρ}(x')⟩` in the storage basis, tagged with `x - x'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointTensor {
    pub values: Matrix6x6,
    pub separation: FourVector,
}

impl TwoPointTensor {
    /// The same correlator read with the index pairs and points exchanged.
    pub fn swapped(&self) -> TwoPointTensor {
        TwoPointTensor {
            values: std::array::from_fn(|a| std::array::from_fn(|b| self.values[b][a])),
            separation: -self.separation,
        }
    }

    /// Correlator seen from a boosted frame, `T' = R T Rᵀ` with `R` the
    /// representation of the boost on the six components.
    pub fn boosted(&self, boost: &Boost) -> TwoPointTensor {
        let r = boost.tensor_representation();
        let mut out = [[0.0; 6]; 6];
        for a in 0..6 {
            for b in 0..6 {
                let mut acc = 0.0;
                for c in 0..6 {
                    for d in 0..6 {
                        acc += r[a][c] * self.values[c][d] * r[b][d];
                    }
                }
                out[a][b] = acc;
            }
        }
        TwoPointTensor { values: out, separation: boost.apply(&self.separation) }
    }
}

/// Builds `η_{μσ}G_{νρ} - η_{μρ}G_{νσ} + η_{νρ}G_{σμ} - η_{νσ}G_{μρ}` from a
/// symmetric covariant Hessian `G`.
pub fn two_point_from_hessian(g: &[[f64; 4]; 4], dx: FourVector) -> TwoPointTensor {
    let eta = |i: usize, j: usize| if i == j { METRIC[i] } else { 0.0 };
    let mut values = [[0.0; 6]; 6];
    for (a, &(mu, nu)) in PAIRS.iter().enumerate() {
        for (b, &(sigma, rho)) in PAIRS.iter().enumerate() {
            values[a][b] = eta(mu, sigma) * g[nu][rho] - eta(mu, rho) * g[nu][sigma]
                + eta(nu, rho) * g[sigma][mu]
                - eta(nu, sigma) * g[mu][rho];
        }
    }
    TwoPointTensor { values, separation: dx }
}

/// Two-point tensor of a field whose scalar correlation depends only on
/// `u = dx·dx`: `G_{μν} = 2g'(u) η_{μν} + 4g''(u) dx_μ dx_ν`.
pub fn analytic_two_point(g: &dyn ScalarCorrelation, dx: FourVector) -> TwoPointTensor {
    let u = dx.square();
    let d1 = g.dg(u);
    let d2 = g.d2g(u);
    let l = dx.lower();
    let hess: [[f64; 4]; 4] = std::array::from_fn(|mu| {
        std::array::from_fn(|nu| {
            let eta = if mu == nu { METRIC[mu] } else { 0.0 };
            2.0 * d1 * eta + 4.0 * d2 * l[mu] * l[nu]
        })
    });
    two_point_from_hessian(&hess, dx)
}

/// `G_{νρ}(Δ) = -ε² ∫ G̃(k) k_ν k_ρ cos(k·Δ) d⁴k` for profiles depending on
/// `k⁰` only, by Gauss–Legendre in `(k⁰, |k⃗|/k⁰, cos θ)` with the azimuth done
/// in closed form. `order` nodes per dimension.
pub fn hessian_quadrature(spec: &SpectralDensity, dx: FourVector, order: usize) -> Result<[[f64; 4]; 4], FieldError> {
    // radial weight G̃(k⁰)(k⁰)³ with the (k⁰)^{-5} singularity cancelled analytically
    let (k_max, radial): (f64, Box<dyn Fn(f64) -> f64>) = match &spec.profile {
        SpectralProfile::ForwardExponential { lambda, k_max } => {
            let l = *lambda;
            (*k_max, Box::new(move |k0: f64| (-k0 / l).exp() * k0.powi(5)))
        }
        SpectralProfile::LowFrequencyGaussian { lambda, k_max } => {
            let l = *lambda;
            (*k_max, Box::new(move |k0: f64| 15.0 / (16.0 * PI) * (-0.5 * (k0 / l).powi(2)).exp()))
        }
        _ => return Err(FieldError::NoQuadrature),
    };
    let d0 = dx.time();
    let ds = dx.space();
    let dn = crate::minkowski::dot3(ds, ds).sqrt();
    let ehat = if dn > 0.0 { ds.map(|c| c / dn) } else { [0.0, 0.0, 1.0] };

    // accumulate the three scalar integrals needed for the tensor structure
    let (mut i00, mut i0e, mut iee, mut iperp) = (0.0, 0.0, 0.0, 0.0);
    let k_nodes = gauss_legendre(order, 0.0, k_max);
    let xi_nodes = gauss_legendre(order, 0.0, 1.0);
    let c_nodes = gauss_legendre(order, -1.0, 1.0);
    for &(k0, wk) in &k_nodes {
        let rad = radial(k0) * wk;
        for &(xi, wx) in &xi_nodes {
            let wr = rad * wx * xi * xi;
            for &(c, wc) in &c_nodes {
                let w = wr * wc * (k0 * d0 - k0 * xi * c * dn).cos();
                i00 += w;
                i0e += w * xi * c;
                iee += w * xi * xi * c * c;
                iperp += w * xi * xi * 0.5 * (1.0 - c * c);
            }
        }
    }
    let pref = -spec.coupling * spec.coupling * 2.0 * PI;
    let mut g = [[0.0; 4]; 4];
    g[0][0] = pref * i00;
    for i in 0..3 {
        // k_i = -k^i for the lowered spatial components
        g[0][i + 1] = -pref * i0e * ehat[i];
        g[i + 1][0] = g[0][i + 1];
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            g[i + 1][j + 1] = pref * (iee * ehat[i] * ehat[j] + iperp * (delta - ehat[i] * ehat[j]));
        }
    }
    Ok(g)
}

/// Analytic two-point tensor of a built-in isotropic profile by quadrature.
pub fn quadrature_two_point(spec: &SpectralDensity, dx: FourVector, order: usize) -> Result<TwoPointTensor, FieldError> {
    Ok(two_point_from_hessian(&hessian_quadrature(spec, dx, order)?, dx))
}

/// How products of field values are formed within one realization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// `F(x) ⊗ F(x')`.
    #[default]
    FieldProduct,
    /// `Σ_n F_n(x) ⊗ F_n(x')`, dropping the zero-mean cross-mode terms.
    ModeResolved,
}

/// Monte Carlo two-point tensor with per-entry standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointEstimate {
    pub mean: TwoPointTensor,
    pub stderr: Matrix6x6,
    pub n_seeds: usize,
}

#[derive(Clone, Debug)]
struct Moments {
    sum: Vec<Matrix6x6>,
    sum_sq: Vec<Matrix6x6>,
    count: usize,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments { sum: vec![[[0.0; 6]; 6]; n], sum_sq: vec![[[0.0; 6]; 6]; n], count: 0 }
    }

    fn push(&mut self, samples: &[Matrix6x6]) {
        for (k, s) in samples.iter().enumerate() {
            for a in 0..6 {
                for b in 0..6 {
                    self.sum[k][a][b] += s[a][b];
                    self.sum_sq[k][a][b] += s[a][b] * s[a][b];
                }
            }
        }
        self.count += 1;
    }

    fn merge(mut self, other: &Moments) -> Self {
        for k in 0..self.sum.len() {
            for a in 0..6 {
                for b in 0..6 {
                    self.sum[k][a][b] += other.sum[k][a][b];
                    self.sum_sq[k][a][b] += other.sum_sq[k][a][b];
                }
            }
        }
        self.count += other.count;
        self
    }
}

/// Per-realization products at each point pair.
pub fn realization_products(
    real: &FieldRealization,
    pairs: &[(FourVector, FourVector)],
    estimator: Estimator,
) -> Vec<Matrix6x6> {
    pairs
        .iter()
        .map(|(x, xp)| match estimator {
            Estimator::FieldProduct => outer(&evaluate_field(real, x), &evaluate_field(real, xp)),
            Estimator::ModeResolved => {
                let mut acc = [[0.0; 6]; 6];
                for n in 0..real.n_modes() {
                    let o = outer(&real.mode_field(n, x), &real.mode_field(n, xp));
                    for a in 0..6 {
                        for b in 0..6 {
                            acc[a][b] += o[a][b];
                        }
                    }
                }
                acc
            }
        })
        .collect()
}

fn outer(a: &AntisymTensor, b: &AntisymTensor) -> Matrix6x6 {
    let (ca, cb) = (a.components(), b.components());
    std::array::from_fn(|i| std::array::from_fn(|j| ca[i] * cb[j]))
}

/// Realizations are grouped into fixed chunks so the summation order, and
/// therefore the result, does not depend on the thread count.
pub const CHUNK: usize = 64;

/// Averages products over `n_seeds` independent realizations at every pair.
/// Realization `i` uses seed `derive_seed(master_seed, FieldRealization, i)`.
pub fn empirical_two_point(
    spec: &SpectralDensity,
    n_modes: usize,
    n_seeds: usize,
    master_seed: u64,
    pairs: &[(FourVector, FourVector)],
    estimator: Estimator,
) -> Result<Vec<TwoPointEstimate>, FieldError> {
    empirical_two_point_mapped(spec, n_modes, n_seeds, master_seed, pairs, estimator, |r| r)
}

/// As [`empirical_two_point`], with every sampled realization first passed
/// through `map` (for instance a boost).
pub fn empirical_two_point_mapped<M>(
    spec: &SpectralDensity,
    n_modes: usize,
    n_seeds: usize,
    master_seed: u64,
    pairs: &[(FourVector, FourVector)],
    estimator: Estimator,
    map: M,
) -> Result<Vec<TwoPointEstimate>, FieldError>
where
    M: Fn(FieldRealization) -> FieldRealization + Sync,
{
    if n_seeds < 2 {
        return Err(FieldError::TooFewSeeds(n_seeds));
    }
    let n_chunks = n_seeds.div_ceil(CHUNK);
    let chunks: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::new(pairs.len());
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(n_seeds) {
                let seed = derive_seed(master_seed, StreamTag::FieldRealization, i as u64);
                let real = map(sample_realization(spec, n_modes, seed)?);
                m.push(&realization_products(&real, pairs, estimator));
            }
            Ok(m)
        })
        .collect::<Result<_, FieldError>>()?;
    let total = chunks.iter().skip(1).fold(chunks[0].clone(), |acc, m| acc.merge(m));
    let n = total.count as f64;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, (x, xp))| {
            let mean: Matrix6x6 = std::array::from_fn(|a| std::array::from_fn(|b| total.sum[k][a][b] / n));
            let stderr = std::array::from_fn(|a| {
                std::array::from_fn(|b| {
                    let var = (total.sum_sq[k][a][b] / n - mean[a][b] * mean[a][b]) * n / (n - 1.0);
                    (var.max(0.0) / n).sqrt()
                })
            });
            TwoPointEstimate {
                mean: TwoPointTensor { values: mean, separation: *x - *xp },
                stderr,
                n_seeds: total.count,
            }
        })
        .collect())
}

/// `ε^{αβμν} k_α z_{μν}` for both parts of a complex amplitude, as the
/// larger of the two residual four-vectors' max norms.
pub fn mode_bianchi_residual(k: &FourVector, z: &ComplexAntisymTensor) -> f64 {
    let kl = k.lower();
    let part = |f: &AntisymTensor| {
        let m = f.to_matrix();
        let mut worst = 0.0_f64;
        for beta in 0..4 {
            let mut acc = 0.0;
            for alpha in 0..4 {
                for mu in 0..4 {
                    for nu in 0..4 {
                        acc += levi_civita([alpha, beta, mu, nu]) * kl[alpha] * m[mu][nu];
                    }
                }
            }
            worst = worst.max(acc.abs());
        }
        worst
    };
    part(&z.re).max(part(&z.im))
}

/// Per-mode residual relative to `max|k| · max|z|`; zero for amplitudes in the
/// range of `M(k)`.
pub fn relative_mode_bianchi_residual(k: &FourVector, z: &ComplexAntisymTensor) -> f64 {
    let scale = k.max_abs() * z.max_abs();
    if scale == 0.0 {
        0.0
    } else {
        mode_bianchi_residual(k, z) / scale
    }
}

/// `max_β |ε^{αβμν} ∂_α F_{μν}(x)|` with central differences of step `h`.
pub fn bianchi_residual<S: FieldSource + ?Sized>(field: &S, x: &FourVector, h: f64) -> f64 {
    let derivs: [Matrix4Cols; 4] = std::array::from_fn(|alpha| {
        let mut xp = *x;
        let mut xm = *x;
        xp.0[alpha] += h;
        xm.0[alpha] -= h;
        let fp = field.field_at(&xp).to_matrix();
        let fm = field.field_at(&xm).to_matrix();
        std::array::from_fn(|mu| std::array::from_fn(|nu| (fp[mu][nu] - fm[mu][nu]) / (2.0 * h)))
    });
    let mut worst = 0.0_f64;
    for beta in 0..4 {
        let mut acc = 0.0;
        for (alpha, d) in derivs.iter().enumerate() {
            for mu in 0..4 {
                for nu in 0..4 {
                    acc += levi_civita([alpha, beta, mu, nu]) * d[mu][nu];
                }
            }
        }
        worst = worst.max(acc.abs());
    }
    worst
}

type Matrix4Cols = [[f64; 4]; 4];

/// Quadratic form `∫ G̃(k) v(k)† M(k) v(k) d⁴k` of point-supported test
/// amplitudes `v(k) = Σ_j c_j e^{i k·x_j}`, estimated with `n_samples`
/// wavevectors from the spectral sampler. Each term is a Hermitian form in a
/// PSD matrix, so the result is non-negative whenever the density is valid.
pub fn test_function_form(
    spec: &SpectralDensity,
    sources: &[(FourVector, [f64; 6])],
    n_samples: usize,
    seed: u64,
) -> Result<f64, FieldError> {
    spec.validate()?;
    let mut rng = stream_rng(derive_seed(seed, StreamTag::Normalization, 1), 0);
    let z_norm = spec.normalization(seed)?;
    let mut total = 0.0;
    for _ in 0..n_samples {
        let d = spec.draw(&mut rng)?;
        let m = mode_covariance(&d.k);
        let (mut vr, mut vi) = ([0.0; 6], [0.0; 6]);
        for (x, c) in sources {
            let (s, co) = d.k.dot(x).sin_cos();
            for a in 0..6 {
                vr[a] += c[a] * co;
                vi[a] += c[a] * s;
            }
        }
        let mut q = 0.0;
        for a in 0..6 {
            for b in 0..6 {
                q += m[a][b] * (vr[a] * vr[b] + vi[a] * vi[b]);
            }
        }
        total += q / d.tilt;
    }
    Ok(spec.coupling * spec.coupling * z_norm * total / n_samples as f64)
}
