//! Deterministic motion of a charged particle in a given field.
//!
//! Proper time: `dx^μ/dτ = p^μ/(mc)`, `dp^μ/dτ = F^μ_ν p^ν/(mc)`. Each step
//! freezes the field at a predicted midpoint and then integrates the frozen
//! linear system exactly: `p ← exp(X) p` and `x ← x + (dτ/mc) φ₁(X) p` with
//! `X = (dτ/mc) F^μ_ν` and `φ₁(z) = (e^z - 1)/z`. `X` has eigenvalues `±a`,
//! `±ib`, so both functions are cubic polynomials in `X` with coefficients
//! from `a` and `b`; the momentum update is a Lorentz transformation up to
//! roundoff.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldSource;
use crate::minkowski::{dot3, lorentz_force, AntisymTensor, FourVector, Matrix4};

/// Drift of `p²` beyond which a propagation is rejected.
pub const DRIFT_LIMIT: f64 = 1e-6;
pub const MASS_SHELL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("integrator tolerance exceeded: relative mass-shell drift {drift:.3e}")]
    ToleranceExceeded { drift: f64 },
    #[error("step and horizon must be positive, got step {step} and horizon {horizon}")]
    InvalidStep { step: f64, horizon: f64 },
    #[error("invalid particle parameters: m = {mass}, c = {c}")]
    InvalidParams { mass: f64, c: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleParams {
    pub mass: f64,
    pub c: f64,
}

impl Default for ParticleParams {
    fn default() -> Self {
        ParticleParams { mass: 1.0, c: 1.0 }
    }
}

impl ParticleParams {
    pub fn new(mass: f64, c: f64) -> Result<Self, DynamicsError> {
        if mass > 0.0 && c > 0.0 && mass.is_finite() && c.is_finite() {
            Ok(ParticleParams { mass, c })
        } else {
            Err(DynamicsError::InvalidParams { mass, c })
        }
    }

    pub fn mass_c(&self) -> f64 {
        self.mass * self.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: FourVector,
    pub p: FourVector,
}

impl PhasePoint {
    pub fn new(x: FourVector, p: FourVector) -> Self {
        PhasePoint { x, p }
    }

    /// Particle at `x` with spatial momentum `space`, `p⁰` from the mass shell.
    pub fn on_shell(x: FourVector, space: [f64; 3], params: &ParticleParams) -> Self {
        PhasePoint { x, p: FourVector::on_shell(space, params.mass_c()) }
    }

    pub fn at_rest(params: &ParticleParams) -> Self {
        Self::on_shell(FourVector::ZERO, [0.0; 3], params)
    }

    /// `|p² - m²c²| / (m²c²)`.
    pub fn mass_shell_error(&self, params: &ParticleParams) -> f64 {
        let mc2 = params.mass_c().powi(2);
        (self.p.square() - mc2).abs() / mc2
    }

    pub fn is_valid(&self, params: &ParticleParams) -> bool {
        self.p.time() > 0.0 && self.mass_shell_error(params) <= MASS_SHELL_TOLERANCE
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clock {
    Proper,
    Lab,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub clock: Clock,
    pub s: Vec<f64>,
    pub points: Vec<PhasePoint>,
    /// Largest relative mass-shell error seen along the way.
    pub mass_shell_drift: f64,
}

impl Trajectory {
    pub fn last(&self) -> &PhasePoint {
        self.points.last().expect("trajectories hold at least the initial point")
    }

    /// CSV with columns `s,x0,x1,x2,x3,p0,p1,p2,p3`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,x0,x1,x2,x3,p0,p1,p2,p3\n");
        for (s, pt) in self.s.iter().zip(&self.points) {
            let vals: Vec<String> =
                std::iter::once(*s).chain(pt.x.0).chain(pt.p.0).map(|v| format!("{v:?}")).collect();
            out.push_str(&vals.join(","));
            out.push('\n');
        }
        out
    }

    /// State where the worldline crosses laboratory time `x0`, by cubic
    /// Hermite interpolation between the bracketing samples. Derivatives with
    /// respect to `x⁰` come from the equations of motion in `field`.
    pub fn state_at_time<S: FieldSource + ?Sized>(
        &self,
        x0: f64,
        field: &S,
        params: &ParticleParams,
    ) -> Option<PhasePoint> {
        let times: Vec<f64> = self.points.iter().map(|pt| pt.x.time()).collect();
        if x0 < times[0] || x0 > *times.last()? {
            return None;
        }
        let i = times.partition_point(|&t| t <= x0).clamp(1, times.len() - 1);
        let (a, b) = (&self.points[i - 1], &self.points[i]);
        let (t0, t1) = (times[i - 1], times[i]);
        let h = t1 - t0;
        let u = (x0 - t0) / h;
        let rate = |pt: &PhasePoint| {
            // d/dx⁰ = (mc/p⁰) d/dτ
            let f = lorentz_force(&field.field_at(&pt.x), &pt.p);
            let scale = params.c / pt.p.time();
            (scale * pt.p, scale * f)
        };
        let (dxa, dpa) = rate(a);
        let (dxb, dpb) = rate(b);
        let h00 = 2.0 * u.powi(3) - 3.0 * u * u + 1.0;
        let h10 = u.powi(3) - 2.0 * u * u + u;
        let h01 = -2.0 * u.powi(3) + 3.0 * u * u;
        let h11 = u.powi(3) - u * u;
        let blend = |ya: FourVector, da: FourVector, yb: FourVector, db: FourVector| {
            FourVector(std::array::from_fn(|m| {
                h00 * ya.0[m] + h10 * h * da.0[m] + h01 * yb.0[m] + h11 * h * db.0[m]
            }))
        };
        Some(PhasePoint { x: blend(a.x, dxa, b.x, dxb), p: blend(a.p, dpa, b.p, dpb) })
    }
}

/// Power series `Σ_m c_m u^m` of the even and odd parts of `exp` and `φ₁` in
/// `u = λ²`: `cosh√u`, `sinh√u/√u` and `(cosh√u - 1)/u`.
#[derive(Clone, Copy)]
enum Part {
    Cosh,
    Sinhc,
    Coshc,
}

impl Part {
    /// `1/(2m + offset)!`.
    fn offset(self) -> i32 {
        match self {
            Part::Cosh => 0,
            Part::Sinhc => 1,
            Part::Coshc => 2,
        }
    }

    fn eval(self, u: f64) -> f64 {
        if u.abs() < 1e-4 {
            let o = self.offset();
            let mut term = 1.0 / (1..=o).product::<i32>().max(1) as f64;
            let mut sum = 0.0;
            for m in 0..6 {
                sum += term;
                term *= u / ((2 * m + o + 1) * (2 * m + o + 2)) as f64;
            }
            return sum;
        }
        let r = u.abs().sqrt();
        match (self, u > 0.0) {
            (Part::Cosh, true) => r.cosh(),
            (Part::Cosh, false) => r.cos(),
            (Part::Sinhc, true) => r.sinh() / r,
            (Part::Sinhc, false) => r.sin() / r,
            (Part::Coshc, true) => 2.0 * (0.5 * r).sinh().powi(2) / u,
            (Part::Coshc, false) => 2.0 * (0.5 * r).sin().powi(2) / -u,
        }
    }

    /// Divided difference `(F(x) - F(y))/(x - y)` for `x ≥ 0 ≥ y`.
    fn divided(self, x: f64, y: f64) -> f64 {
        if x.abs().max(y.abs()) > 1.0 {
            return (self.eval(x) - self.eval(y)) / (x - y);
        }
        // Σ_{m≥1} c_m h_{m-1}(x, y) with h_k the complete homogeneous sum
        let o = self.offset();
        let mut c = 1.0 / (1..=o).product::<i32>().max(1) as f64;
        let (mut h, mut xp, mut sum) = (1.0, 1.0, 0.0);
        for m in 1..20 {
            c /= ((2 * m + o - 1) * (2 * m + o)) as f64;
            if m > 1 {
                xp *= x;
                h = xp + y * h;
            }
            sum += c * h;
        }
        sum
    }
}

/// `exp(X)` and `φ₁(X)` for `X = scale · F^μ_ν` in closed form.
pub fn lorentz_exp_and_phi1(f: &AntisymTensor, scale: f64) -> (Matrix4, Matrix4) {
    let g = f.mixed().map(|row| row.map(|v| v * scale));
    // eigenvalues of X² are x = a² ≥ 0 and y = -b² ≤ 0
    let s = (dot3(f.e, f.e) - dot3(f.b, f.b)) * scale * scale;
    let q = dot3(f.e, f.b) * scale * scale;
    let r = s.hypot(2.0 * q);
    let (x, y) = if s >= 0.0 {
        let x = 0.5 * (s + r);
        (x, if x > 0.0 { -q * q / x } else { 0.0 })
    } else {
        let y = 0.5 * (s - r);
        (-q * q / y, y)
    };
    let g2 = mul(&g, &g);
    let g3 = mul(&g2, &g);
    // f(X) = (E(y) - y·ΔE) I + (O(y) - y·ΔO) X + ΔE X² + ΔO X³
    let combine = |even: Part, odd: Part| -> Matrix4 {
        let (de, dodd) = (even.divided(x, y), odd.divided(x, y));
        let (c0, c1) = (even.eval(y) - y * de, odd.eval(y) - y * dodd);
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let id = if i == j { c0 } else { 0.0 };
                id + c1 * g[i][j] + de * g2[i][j] + dodd * g3[i][j]
            })
        })
    };
    (combine(Part::Cosh, Part::Sinhc), combine(Part::Sinhc, Part::Coshc))
}

fn mul(a: &Matrix4, b: &Matrix4) -> Matrix4 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|k| a[i][k] * b[k][j]).sum()))
}

/// Exact solution over `dτ` of the motion in the constant field `f`.
pub fn step_in_constant_field(state: &PhasePoint, f: &AntisymTensor, dtau: f64, params: &ParticleParams) -> PhasePoint {
    let mc = params.mass_c();
    let (e, phi) = lorentz_exp_and_phi1(f, dtau / mc);
    let p = FourVector::apply(&e, &state.p);
    let dx = FourVector::apply(&phi, &state.p);
    PhasePoint { x: state.x + (dtau / mc) * dx, p }
}

/// One proper-time step with the field taken at the predicted midpoint.
pub fn proper_step<S: FieldSource + ?Sized>(
    state: &PhasePoint,
    field: &S,
    dtau: f64,
    params: &ParticleParams,
) -> PhasePoint {
    let mid = state.x + (0.5 * dtau / params.mass_c()) * state.p;
    step_in_constant_field(state, &field.field_at(&mid), dtau, params)
}

/// One laboratory-time step landing on `x⁰ + c·dt`. The proper-time length is
/// first guessed as `mc·c·dt/p⁰`, the field is frozen at the corresponding
/// midpoint, and the proper time is then corrected by secant iterations on the
/// landing condition.
pub fn lab_step<S: FieldSource + ?Sized>(
    state: &PhasePoint,
    field: &S,
    dt: f64,
    params: &ParticleParams,
) -> PhasePoint {
    let mc = params.mass_c();
    let target = state.x.time() + params.c * dt;
    let guess = mc * params.c * dt / state.p.time();
    let mid = state.x + (0.5 * guess / mc) * state.p;
    let f = field.field_at(&mid);
    let miss = |pt: &PhasePoint| pt.x.time() - target;

    let mut t0 = guess;
    let mut s0 = step_in_constant_field(state, &f, t0, params);
    let mut r0 = miss(&s0);
    // the secant needs a second point; the local slope is p⁰/(mc)
    let mut t1 = t0 - r0 * mc / s0.p.time();
    for _ in 0..8 {
        if r0.abs() <= 1e-14 * params.c * dt {
            break;
        }
        let s1 = step_in_constant_field(state, &f, t1, params);
        let r1 = miss(&s1);
        if r1 == r0 {
            s0 = s1;
            break;
        }
        let t2 = t1 - r1 * (t1 - t0) / (r1 - r0);
        t0 = t1;
        s0 = s1;
        r0 = r1;
        t1 = t2;
    }
    s0.x.0[0] = target;
    s0
}

/// Steps `state` with a fixed step until `horizon`, recording every sample.
pub fn propagate<S: FieldSource + ?Sized>(
    state: &PhasePoint,
    field: &S,
    horizon: f64,
    step: f64,
    clock: Clock,
    params: &ParticleParams,
) -> Result<Trajectory, DynamicsError> {
    if !(step > 0.0 && horizon > 0.0) {
        return Err(DynamicsError::InvalidStep { step, horizon });
    }
    let n = (horizon / step).round().max(1.0) as usize;
    let mut s = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    let s0 = match clock {
        Clock::Proper => 0.0,
        Clock::Lab => state.x.time() / params.c,
    };
    let mut current = *state;
    let mut drift = current.mass_shell_error(params);
    s.push(s0);
    points.push(current);
    for i in 1..=n {
        current = match clock {
            Clock::Proper => proper_step(&current, field, step, params),
            Clock::Lab => lab_step(&current, field, step, params),
        };
        drift = drift.max(current.mass_shell_error(params));
        s.push(s0 + i as f64 * step);
        points.push(current);
    }
    if drift > DRIFT_LIMIT {
        return Err(DynamicsError::ToleranceExceeded { drift });
    }
    Ok(Trajectory { clock, s, points, mass_shell_drift: drift })
}
