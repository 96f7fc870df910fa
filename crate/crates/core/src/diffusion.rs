//! Relativistic diffusions in momentum space.
//!
//! The Schay–Dudley operator is `Δ_H f = (m²c² δ^{jl} + p^j p^l) ∂_j∂_l f + 3 p^l ∂_l f`
//! and the Jüttner-drift operator is `Δ_β f = Δ_H f - (p⁰/mc) p^j ∂_j f`. With
//! `p⁰ = √(m²c² + |p|²)` and `a^{jl} = m²c² δ^{jl} + p^j p^l` one has
//! `Δ_H f = p⁰ ∂_j(a^{jl} ∂_l f / p⁰)`, which makes it symmetric in `L²(d³p/p⁰)`.
//! The generators of the ensembles are `(κ²/2)Δ`, read in the Itô sense.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ParticleParams;
use crate::minkowski::{dot3, FourVector};
use crate::quad::{gauss_legendre, integrate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("grid point {0:?} is on or outside the boundary")]
    Boundary([usize; 3]),
    #[error("invalid diffusion parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionKind {
    /// `(κ²/2)Δ_H` on the proper-time clock.
    SchayDudleyProper,
    /// `(κ²/2)Δ_β`, simulated on the laboratory clock `x⁰`.
    JuttnerLab,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    pub kappa2: f64,
    pub particle: ParticleParams,
    pub kind: DiffusionKind,
}

impl DiffusionParams {
    pub fn new(kappa2: f64, particle: ParticleParams, kind: DiffusionKind) -> Result<Self, DiffusionError> {
        if !(kappa2 >= 0.0 && kappa2.is_finite()) {
            return Err(DiffusionError::InvalidParams(format!("kappa2 must be >= 0, got {kappa2}")));
        }
        Ok(DiffusionParams { kappa2, particle, kind })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa2.sqrt()
    }
}

/// Spatial momentum with an optional position carried along.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumState {
    pub p: [f64; 3],
    pub x: Option<FourVector>,
}

impl MomentumState {
    pub fn new(p: [f64; 3]) -> Self {
        MomentumState { p, x: None }
    }

    pub fn with_position(p: [f64; 3], x: FourVector) -> Self {
        MomentumState { p, x: Some(x) }
    }

    pub fn p0(&self, params: &ParticleParams) -> f64 {
        energy(self.p, params.mass_c())
    }

    pub fn four_momentum(&self, params: &ParticleParams) -> FourVector {
        FourVector::on_shell(self.p, params.mass_c())
    }
}

pub fn energy(p: [f64; 3], mass_c: f64) -> f64 {
    (mass_c * mass_c + dot3(p, p)).sqrt()
}

/// Equispaced cubic grid `[-L, L]³` with `n` points per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumGrid {
    pub n: usize,
    pub half_width: f64,
}

impl MomentumGrid {
    pub fn new(n: usize, half_width: f64) -> Self {
        MomentumGrid { n, half_width }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn point(&self, idx: [usize; 3]) -> [f64; 3] {
        let h = self.spacing();
        idx.map(|i| -self.half_width + i as f64 * h)
    }

    pub fn index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.n + idx[1]) * self.n + idx[2]
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_interior(&self, idx: [usize; 3]) -> bool {
        idx.iter().all(|&i| i >= 1 && i + 1 < self.n)
    }

    pub fn tabulate(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..self.n {
                    out[self.index([i, j, k])] = f(self.point([i, j, k]));
                }
            }
        }
        out
    }
}

/// Central-difference value of `Δ_H f` or `Δ_β f` at an interior grid point.
pub fn generator_apply(
    kind: DiffusionKind,
    grid: &MomentumGrid,
    values: &[f64],
    idx: [usize; 3],
    params: &ParticleParams,
) -> Result<f64, DiffusionError> {
    if !grid.is_interior(idx) {
        return Err(DiffusionError::Boundary(idx));
    }
    let h = grid.spacing();
    let at = |d: [isize; 3]| {
        let j: [usize; 3] = std::array::from_fn(|a| (idx[a] as isize + d[a]) as usize);
        values[grid.index(j)]
    };
    let unit = |a: usize, s: isize| {
        let mut d = [0isize; 3];
        d[a] = s;
        d
    };
    let f0 = at([0, 0, 0]);
    let grad: [f64; 3] = std::array::from_fn(|a| (at(unit(a, 1)) - at(unit(a, -1))) / (2.0 * h));
    let mut hess = [[0.0; 3]; 3];
    for a in 0..3 {
        hess[a][a] = (at(unit(a, 1)) - 2.0 * f0 + at(unit(a, -1))) / (h * h);
        for b in (a + 1)..3 {
            let mut pp = [0isize; 3];
            pp[a] = 1;
            pp[b] = 1;
            let mut pm = pp;
            pm[b] = -1;
            let mut mp = pp;
            mp[a] = -1;
            let mut mm = mp;
            mm[b] = -1;
            let v = (at(pp) - at(pm) - at(mp) + at(mm)) / (4.0 * h * h);
            hess[a][b] = v;
            hess[b][a] = v;
        }
    }
    let p = grid.point(idx);
    Ok(operator_from_derivatives(kind, p, grad, hess, params))
}

/// `Δ f` from the gradient and Hessian of `f` at `p`.
pub fn operator_from_derivatives(
    kind: DiffusionKind,
    p: [f64; 3],
    grad: [f64; 3],
    hess: [[f64; 3]; 3],
    params: &ParticleParams,
) -> f64 {
    let mc = params.mass_c();
    let mut second = 0.0;
    for j in 0..3 {
        for l in 0..3 {
            let a = if j == l { mc * mc } else { 0.0 } + p[j] * p[l];
            second += a * hess[j][l];
        }
    }
    let pg = dot3(p, grad);
    let base = second + 3.0 * pg;
    match kind {
        DiffusionKind::SchayDudleyProper => base,
        DiffusionKind::JuttnerLab => base - energy(p, mc) / mc * pg,
    }
}

/// Itô drift of the momentum under `(κ²/2)Δ`, per unit of the process clock.
pub fn sde_drift(kind: DiffusionKind, p: [f64; 3], params: &DiffusionParams) -> [f64; 3] {
    let half = 0.5 * params.kappa2;
    let factor = match kind {
        DiffusionKind::SchayDudleyProper => 3.0 * half,
        DiffusionKind::JuttnerLab => {
            let mc = params.particle.mass_c();
            half * (3.0 - energy(p, mc) / mc)
        }
    };
    p.map(|c| factor * c)
}

/// `σ = κ [mc I + (p⁰ - mc) p̂p̂ᵀ]`, so that `σσᵀ = κ²(m²c² I + ppᵀ)`.
pub fn sde_diffusion_root(p: [f64; 3], params: &DiffusionParams) -> [[f64; 3]; 3] {
    let mc = params.particle.mass_c();
    let kappa = params.kappa();
    let mut s = [[0.0; 3]; 3];
    // (p⁰ - mc)/|p|² written as 1/(p⁰ + mc) to stay finite at p → 0
    let coef = 1.0 / (energy(p, mc) + mc);
    for j in 0..3 {
        for l in 0..3 {
            let id = if j == l { mc } else { 0.0 };
            s[j][l] = kappa * (id + coef * p[j] * p[l]);
        }
    }
    s
}

/// Euler–Maruyama step of length `ds` on the process clock. On the laboratory
/// clock the proper-time increment is `ds·mc²/p⁰` with the pre-step `p⁰`.
pub fn sde_step(state: &MomentumState, params: &DiffusionParams, ds: f64, noise: [f64; 3]) -> MomentumState {
    let particle = &params.particle;
    let mc = particle.mass_c();
    let p0 = state.p0(particle);
    let ds_eff = match params.kind {
        DiffusionKind::SchayDudleyProper => ds,
        DiffusionKind::JuttnerLab => ds * mc * particle.c / p0,
    };
    let drift = sde_drift(params.kind, state.p, params);
    let sigma = sde_diffusion_root(state.p, params);
    let root = ds_eff.sqrt();
    let p = std::array::from_fn(|j| {
        state.p[j] + drift[j] * ds_eff + root * (0..3).map(|l| sigma[j][l] * noise[l]).sum::<f64>()
    });
    let x = state.x.map(|x| match params.kind {
        DiffusionKind::SchayDudleyProper => x + (ds / mc) * FourVector::on_shell(state.p, mc),
        DiffusionKind::JuttnerLab => {
            let v = FourVector::on_shell(state.p, mc);
            x + (ds * particle.c / p0) * v
        }
    });
    MomentumState { p, x }
}

/// Probability flux `J^j = ∂_l(a^{jl}ρ) - b^jρ` of the `Δ_β` operator (natural
/// units, `b = (3 - p⁰)p`) for an isotropic density `ρ(p⁰)` with derivative
/// `dρ/dp⁰`: `J = p[(1 + p⁰)ρ + p⁰ ρ']`.
pub fn density_flux(p: [f64; 3], rho: impl Fn(f64) -> f64, drho: impl Fn(f64) -> f64) -> [f64; 3] {
    let p0 = energy(p, 1.0);
    let scalar = (1.0 + p0) * rho(p0) + p0 * drho(p0);
    p.map(|c| c * scalar)
}

/// Flux of the laboratory-clock process, whose generator is `Δ_β/p⁰`: the
/// flux of `ρ/p⁰` under `Δ_β`.
pub fn lab_clock_flux(p: [f64; 3], rho: impl Fn(f64) -> f64, drho: impl Fn(f64) -> f64) -> [f64; 3] {
    let rho = &rho;
    let drho = &drho;
    density_flux(p, |e| rho(e) / e, |e| drho(e) / e - rho(e) / (e * e))
}

/// Flux of `Δ_β` at the zero-flux density `ρ = e^{-p⁰}/p⁰`.
pub fn stationary_flux(p: [f64; 3]) -> [f64; 3] {
    density_flux(p, |e| (-e).exp() / e, |e| -(-e).exp() / e - (-e).exp() / (e * e))
}

/// Self-adjoint discretization of `Δ_H` on a grid: the energy form
/// `Σ_cells h³ ∇g·a∇f / p⁰` with cell-centre gradients, and the operator
/// `L = -W⁻¹K` for the weight `W = diag(h³/p⁰)`. `W L = -K` is symmetric.
#[derive(Clone, Debug)]
pub struct DivergenceFormOperator {
    pub grid: MomentumGrid,
    /// Rows of the stiffness matrix `K` as `(column, value)` pairs.
    pub stiffness: Vec<Vec<(usize, f64)>>,
    pub weight: Vec<f64>,
}

impl DivergenceFormOperator {
    pub fn assemble(grid: MomentumGrid, params: &ParticleParams) -> Self {
        let n = grid.n;
        let h = grid.spacing();
        let mc = params.mass_c();
        let mut dense: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); grid.len()];
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                for k in 0..n - 1 {
                    let corner = |d: [usize; 3]| grid.index([i + d[0], j + d[1], k + d[2]]);
                    let lo = grid.point([i, j, k]);
                    let centre = lo.map(|c| c + 0.5 * h);
                    let p0 = energy(centre, mc);
                    // gradient stencil: ∂_a f ≈ Σ_corners c_a(corner) f(corner)
                    let mut stencil: Vec<(usize, [f64; 3])> = Vec::with_capacity(8);
                    for d0 in 0..2 {
                        for d1 in 0..2 {
                            for d2 in 0..2 {
                                let d = [d0, d1, d2];
                                let coef = std::array::from_fn(|a| {
                                    let sign = if d[a] == 1 { 1.0 } else { -1.0 };
                                    sign / (4.0 * h)
                                });
                                stencil.push((corner(d), coef));
                            }
                        }
                    }
                    let a: [[f64; 3]; 3] = std::array::from_fn(|x| {
                        std::array::from_fn(|y| if x == y { mc * mc } else { 0.0 } + centre[x] * centre[y])
                    });
                    let vol = h * h * h / p0;
                    for (r, cr) in &stencil {
                        for (c, cc) in &stencil {
                            let mut v = 0.0;
                            for x in 0..3 {
                                for y in 0..3 {
                                    v += cr[x] * a[x][y] * cc[y];
                                }
                            }
                            *dense[*r].entry(*c).or_insert(0.0) += vol * v;
                        }
                    }
                }
            }
        }
        let weight = grid.tabulate(|p| h * h * h / energy(p, mc));
        let stiffness = dense.into_iter().map(|row| row.into_iter().collect()).collect();
        DivergenceFormOperator { grid, stiffness, weight }
    }

    /// `(L f)_i = -(K f)_i / W_i`.
    pub fn apply(&self, f: &[f64], i: usize) -> f64 {
        -self.stiffness[i].iter().map(|&(c, v)| v * f[c]).sum::<f64>() / self.weight[i]
    }

    /// Entry `(W L)_{ij}`.
    pub fn weighted_entry(&self, i: usize, j: usize) -> f64 {
        -self.stiffness[i].iter().find(|&&(c, _)| c == j).map_or(0.0, |&(_, v)| v)
    }

    /// Largest `|(WL)_{ij} - (WL)_{ji}|` over interior rows, relative to the
    /// largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.grid.n;
        let mut worst = 0.0_f64;
        let mut scale = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if !self.grid.is_interior([i, j, k]) {
                        continue;
                    }
                    let r = self.grid.index([i, j, k]);
                    for &(c, v) in &self.stiffness[r] {
                        scale = scale.max(v.abs());
                        worst = worst.max((v - -self.weighted_entry(c, r)).abs());
                    }
                }
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

/// Marginal density of `p⁰` for the Jüttner law `∝ e^{-p⁰/T}` in `d³p`
/// (natural units): `∝ p⁰ √(p⁰² - 1) e^{-p⁰/T}` on `[1, ∞)`, unnormalized.
pub fn juttner_energy_density(p0: f64, temperature: f64) -> f64 {
    if p0 <= 1.0 {
        0.0
    } else {
        p0 * (p0 * p0 - 1.0).sqrt() * (-(p0 - 1.0) / temperature).exp()
    }
}

/// Tabulated cumulative distribution of `p⁰` under the Jüttner law.
#[derive(Clone, Debug)]
pub struct JuttnerCdf {
    pub temperature: f64,
    knots: Vec<f64>,
    cdf: Vec<f64>,
}

impl JuttnerCdf {
    pub fn new(temperature: f64) -> Self {
        let upper = 1.0 + 60.0 * temperature;
        let n = 6000;
        let knots: Vec<f64> = (0..=n).map(|i| 1.0 + (upper - 1.0) * (i as f64 / n as f64).powi(2)).collect();
        let mut cdf = vec![0.0];
        for w in knots.windows(2) {
            let piece = integrate(|e| juttner_energy_density(e, temperature), w[0], w[1], 1e-13);
            cdf.push(cdf.last().unwrap() + piece);
        }
        let total = *cdf.last().unwrap();
        let cdf = cdf.into_iter().map(|c| c / total).collect();
        JuttnerCdf { temperature, knots, cdf }
    }

    pub fn cdf(&self, p0: f64) -> f64 {
        if p0 <= 1.0 {
            return 0.0;
        }
        let i = self.knots.partition_point(|&k| k <= p0);
        if i >= self.knots.len() {
            return 1.0;
        }
        let (a, b) = (self.knots[i - 1], self.knots[i]);
        self.cdf[i - 1] + integrate(|e| juttner_energy_density(e, self.temperature), a, p0, 1e-13)
            / integrate(|e| juttner_energy_density(e, self.temperature), a, b, 1e-13)
            * (self.cdf[i] - self.cdf[i - 1])
    }

    /// Inner edges of `bins` equal-probability bins on `[1, ∞)`.
    pub fn equal_probability_edges(&self, bins: usize) -> Vec<f64> {
        (1..bins)
            .map(|b| {
                let target = b as f64 / bins as f64;
                let (mut lo, mut hi) = (1.0, *self.knots.last().unwrap());
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }
}

/// `⟨p⁰⟩` under `e^{-p⁰/T}` in `d³p` by one-dimensional quadrature, natural units.
pub fn juttner_mean_energy(temperature: f64) -> f64 {
    let upper = 1.0 + 80.0 * temperature;
    let nodes = gauss_legendre(400, 0.0, (upper - 1.0).sqrt());
    // substitute p⁰ = 1 + t² to absorb the square-root edge
    let (mut num, mut den) = (0.0, 0.0);
    for (t, w) in nodes {
        let e = 1.0 + t * t;
        let d = juttner_energy_density(e, temperature) * 2.0 * t * w;
        num += e * d;
        den += d;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use nalgebra::Matrix3;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn sd(kappa2: f64) -> DiffusionParams {
        DiffusionParams::new(kappa2, ParticleParams::default(), DiffusionKind::SchayDudleyProper).unwrap()
    }

    fn centre(grid: &MomentumGrid) -> [usize; 3] {
        [grid.n / 2; 3]
    }

    #[test]
    fn constant_function_is_annihilated() {
        let grid = MomentumGrid::new(9, 2.0);
        let ones = grid.tabulate(|_| 1.0);
        for kind in [DiffusionKind::SchayDudleyProper, DiffusionKind::JuttnerLab] {
            for idx in [[1, 1, 1], [4, 4, 4], [2, 6, 3]] {
                assert_eq!(generator_apply(kind, &grid, &ones, idx, &ParticleParams::default()).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn linear_function_examples() {
        let grid = MomentumGrid::new(9, 2.0);
        let f = grid.tabulate(|p| p[0]);
        let unit = ParticleParams::default();
        let c = centre(&grid);
        assert!(generator_apply(DiffusionKind::SchayDudleyProper, &grid, &f, c, &unit).unwrap().abs() < 1e-14);
        let idx = [6, 4, 4];
        let q = grid.point(idx)[0];
        let sd = generator_apply(DiffusionKind::SchayDudleyProper, &grid, &f, idx, &unit).unwrap();
        let ju = generator_apply(DiffusionKind::JuttnerLab, &grid, &f, idx, &unit).unwrap();
        assert!((sd - 3.0 * q).abs() < 1e-12);
        assert!((ju - (3.0 * q - q * (1.0 + q * q).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn square_norm_at_origin() {
        let grid = MomentumGrid::new(9, 2.0);
        let f = grid.tabulate(|p| dot3(p, p));
        let v = generator_apply(DiffusionKind::SchayDudleyProper, &grid, &f, centre(&grid), &ParticleParams::default())
            .unwrap();
        assert!((v - 6.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_points_are_rejected() {
        let grid = MomentumGrid::new(5, 1.0);
        let f = grid.tabulate(|_| 0.0);
        let err = generator_apply(DiffusionKind::JuttnerLab, &grid, &f, [0, 2, 2], &ParticleParams::default());
        assert_eq!(err, Err(DiffusionError::Boundary([0, 2, 2])));
    }

    #[test]
    fn central_differences_are_second_order() {
        let f = |p: [f64; 3]| (-energy(p, 1.0)).exp() * (1.0 + 0.3 * p[1]);
        let point = [0.4, -0.2, 0.3];
        let err = |n: usize| {
            // half-width 1 with n odd puts `point` on a node
            let grid = MomentumGrid::new(n, 1.0);
            let h = grid.spacing();
            let idx = point.map(|c| ((c + 1.0) / h).round() as usize);
            let vals = grid.tabulate(f);
            let fd = generator_apply(DiffusionKind::JuttnerLab, &grid, &vals, idx, &ParticleParams::default()).unwrap();
            (fd - analytic_reference(point, f)).abs()
        };
        let ratio = err(41) / err(81);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    /// Richardson-extrapolated finite differences as an independent reference.
    fn analytic_reference(p: [f64; 3], f: impl Fn([f64; 3]) -> f64) -> f64 {
        let d = |h: f64| {
            let shift = |a: usize, s: f64, q: [f64; 3]| {
                let mut r = q;
                r[a] += s;
                r
            };
            let grad: [f64; 3] = std::array::from_fn(|a| (f(shift(a, h, p)) - f(shift(a, -h, p))) / (2.0 * h));
            let hess: [[f64; 3]; 3] = std::array::from_fn(|a| {
                std::array::from_fn(|b| {
                    (f(shift(b, h, shift(a, h, p))) - f(shift(b, -h, shift(a, h, p))) - f(shift(b, h, shift(a, -h, p)))
                        + f(shift(b, -h, shift(a, -h, p))))
                        / (4.0 * h * h)
                })
            });
            operator_from_derivatives(DiffusionKind::JuttnerLab, p, grad, hess, &ParticleParams::default())
        };
        (16.0 * d(1e-3) - d(2e-3)) / 15.0
    }

    #[test]
    fn diffusion_root_reconstructs_covariance() {
        let mut rng = stream_rng(4, 0);
        let params = DiffusionParams::new(0.7, ParticleParams::new(1.3, 0.9).unwrap(), DiffusionKind::JuttnerLab).unwrap();
        let mc = params.particle.mass_c();
        for _ in 0..1000 {
            let scale = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
            let p: [f64; 3] = std::array::from_fn(|_| scale * rng.sample::<f64, _>(StandardNormal));
            let s = sde_diffusion_root(p, &params);
            let target = Matrix3::from_fn(|j, l| params.kappa2 * (if j == l { mc * mc } else { 0.0 } + p[j] * p[l]));
            // independent square root from the eigendecomposition of the target
            let eig = target.symmetric_eigen();
            let root = eig.eigenvectors
                * Matrix3::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
                * eig.eigenvectors.transpose();
            let sm = Matrix3::from_fn(|j, l| s[j][l]);
            let norm = target.norm();
            assert!((sm * sm.transpose() - target).norm() <= 1e-12 * norm);
            assert!((sm - root).norm() <= 1e-10 * root.norm());
        }
    }

    #[test]
    fn origin_values() {
        let params = sd(2.0);
        let s = sde_diffusion_root([0.0; 3], &params);
        for j in 0..3 {
            for l in 0..3 {
                let expect = if j == l { 2f64.sqrt() } else { 0.0 };
                assert!((s[j][l] - expect).abs() < 1e-15);
            }
        }
        assert_eq!(sde_drift(DiffusionKind::SchayDudleyProper, [0.0; 3], &params), [0.0; 3]);
        assert_eq!(sde_drift(DiffusionKind::JuttnerLab, [0.0; 3], &params), [0.0; 3]);
    }

    #[test]
    fn quadratic_moment_identity() {
        // (κ²/2)Δ_H(p^j p^l) = κ² m²c² δ^{jl} + 4κ² p^j p^l, by exact derivatives
        let params = ParticleParams::new(1.7, 1.0).unwrap();
        let kappa2 = 0.6;
        let mc = params.mass_c();
        let p = [0.3, -1.1, 0.8];
        for j in 0..3 {
            for l in 0..3 {
                let mut grad = [0.0; 3];
                grad[j] += p[l];
                grad[l] += p[j];
                let mut hess = [[0.0; 3]; 3];
                hess[j][l] += 1.0;
                hess[l][j] += 1.0;
                let got = 0.5 * kappa2 * operator_from_derivatives(DiffusionKind::SchayDudleyProper, p, grad, hess, &params);
                let expect = kappa2 * (if j == l { mc * mc } else { 0.0 }) + 4.0 * kappa2 * p[j] * p[l];
                assert!((got - expect).abs() < 1e-12, "{j}{l}");
            }
        }
    }

    #[test]
    fn zero_kappa_leaves_state_unchanged() {
        let params = DiffusionParams::new(0.0, ParticleParams::default(), DiffusionKind::JuttnerLab).unwrap();
        let st = MomentumState::new([0.3, 0.2, -1.0]);
        assert_eq!(sde_step(&st, &params, 0.1, [1.0, -2.0, 0.5]).p, st.p);
    }

    #[test]
    fn first_step_from_rest() {
        let params = sd(0.5);
        let n = [0.3, -1.2, 2.0];
        let st = sde_step(&MomentumState::new([0.0; 3]), &params, 0.01, n);
        for j in 0..3 {
            assert!((st.p[j] - 0.5f64.sqrt() * 0.1 * n[j]).abs() < 1e-15);
        }
        // the laboratory clock at rest has p⁰ = mc, so ds_eff = ds
        let lab = DiffusionParams { kind: DiffusionKind::JuttnerLab, ..params };
        assert_eq!(sde_step(&MomentumState::new([0.0; 3]), &lab, 0.01, n).p, st.p);
    }

    #[test]
    fn zero_flux_density() {
        let mut rng = stream_rng(8, 0);
        for _ in 0..1000 {
            let p: [f64; 3] = std::array::from_fn(|_| 3.0 * rng.sample::<f64, _>(StandardNormal));
            let j = stationary_flux(p);
            assert!(j.iter().all(|c| c.abs() <= 1e-10), "{j:?}");
            // independent check of J = ∂_l(a ρ) - bρ by finite differences
            let rho = |q: [f64; 3]| (-energy(q, 1.0)).exp() / energy(q, 1.0);
            let h = 1e-4;
            for jj in 0..3 {
                let mut div = 0.0;
                for l in 0..3 {
                    let a_rho = |q: [f64; 3]| (if jj == l { 1.0 } else { 0.0 } + q[jj] * q[l]) * rho(q);
                    let mut qp = p;
                    let mut qm = p;
                    qp[l] += h;
                    qm[l] -= h;
                    div += (a_rho(qp) - a_rho(qm)) / (2.0 * h);
                }
                let flux = div - (3.0 - energy(p, 1.0)) * p[jj] * rho(p);
                assert!(flux.abs() < 1e-7 * (1.0 + dot3(p, p)), "{flux}");
            }
        }
    }

    #[test]
    fn pure_juttner_balances_only_on_the_lab_clock() {
        let rho = |e: f64| (-e).exp();
        let drho = |e: f64| -(-e).exp();
        let p = [0.7, -0.4, 1.3];
        let s_clock = density_flux(p, rho, drho);
        assert!(s_clock.iter().any(|c| c.abs() > 1e-3));
        let lab = lab_clock_flux(p, rho, drho);
        assert!(lab.iter().all(|c| c.abs() < 1e-14));
        let hot = density_flux(p, |e| (-2.0 * e).exp(), |e| -2.0 * (-2.0 * e).exp());
        assert!(hot.iter().any(|c| c.abs() > 1e-3));
    }

    #[test]
    fn divergence_form_is_symmetric_and_consistent() {
        let op = DivergenceFormOperator::assemble(MomentumGrid::new(13, 1.5), &ParticleParams::default());
        assert!(op.symmetry_defect() <= 1e-10);
        // consistency on a smooth function away from the boundary
        let grid = &op.grid;
        let f = grid.tabulate(|p| (-0.5 * dot3(p, p)).exp());
        let fine = DivergenceFormOperator::assemble(MomentumGrid::new(25, 1.5), &ParticleParams::default());
        let ff = fine.grid.tabulate(|p| (-0.5 * dot3(p, p)).exp());
        let c = centre(grid);
        // Δ_H e^{-|p|²/2} at p = 0 is -3
        let exact = -3.0;
        let coarse_err = (op.apply(&f, grid.index(c)) - exact).abs();
        let fine_err = (fine.apply(&ff, fine.grid.index(centre(&fine.grid))) - exact).abs();
        assert!(fine_err < coarse_err / 3.0, "{coarse_err} {fine_err}");
    }

    #[test]
    fn juttner_mean_energy_matches_bessel_ratio() {
        // 3T + K₁(1/T)/K₂(1/T), K_n(z) = ∫₀^∞ e^{-z cosh t} cosh(nt) dt
        let bessel = |n: f64, z: f64| {
            gauss_legendre(200, 0.0, 12.0).iter().map(|(t, w)| w * (-z * t.cosh()).exp() * (n * t).cosh()).sum::<f64>()
        };
        for temp in [0.5, 1.0, 2.0] {
            let expect = 3.0 * temp + bessel(1.0, 1.0 / temp) / bessel(2.0, 1.0 / temp);
            assert!((juttner_mean_energy(temp) - expect).abs() < 1e-8, "T = {temp}");
        }
        assert!((juttner_mean_energy(1.0) - 3.3704).abs() < 1e-4);
    }

    #[test]
    fn equal_probability_edges_split_the_mass() {
        let cdf = JuttnerCdf::new(1.0);
        let edges = cdf.equal_probability_edges(10);
        assert_eq!(edges.len(), 9);
        for (b, e) in edges.iter().enumerate() {
            assert!((cdf.cdf(*e) - (b + 1) as f64 / 10.0).abs() < 1e-9);
        }
        // median against direct quadrature
        let median = edges[4];
        let num = integrate(|e| juttner_energy_density(e, 1.0), 1.0, median, 1e-13);
        let den = integrate(|e| juttner_energy_density(e, 1.0), 1.0, 80.0, 1e-13);
        assert!((num / den - 0.5).abs() < 1e-8);
    }
}
