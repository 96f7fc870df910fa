//! Minkowski-space tensor algebra.
//!
//! Conventions used throughout the crate:
//!
//! * Metric signature `(+, -, -, -)`.
//! * [`FourVector`] stores contravariant (upper-index) components `c0..c3`,
//!   `c0` being the time-like one. Lowering flips the sign of `c1..c3`.
//! * [`AntisymTensor`] stores the covariant field strength `F_{μν}` as two
//!   triples: `e_j = F_{0j}` and `b_1 = F_{32}`, `b_2 = F_{13}`, `b_3 = F_{21}`,
//!   so that `F_{ij} = -ε_{ijk} b_k`.
//! * The six independent components are ordered `(e_1, e_2, e_3, b_1, b_2, b_3)`
//!   and correspond to the index pairs in [`PAIRS`]. Every 6×6 array in the crate
//!   (mode covariances, two-point tensors) uses this ordering.
//!
//! With these conventions the raised Lorentz force on a momentum `p` is
//! `f^0 = e·p`, `f^i = e_i p^0 + (p × b)_i`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Diagonal of the metric `η`.
pub const METRIC: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// Index pairs `(μ, ν)` of the six independent components of an antisymmetric
/// tensor, in storage order.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (3, 2), (1, 3), (2, 1)];

pub type Matrix4 = [[f64; 4]; 4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MinkowskiError {
    #[error("boost speed |v| = {0} is not below the speed of light")]
    Superluminal(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourVector(pub [f64; 4]);

impl FourVector {
    pub const ZERO: FourVector = FourVector([0.0; 4]);

    pub const fn new(c0: f64, c1: f64, c2: f64, c3: f64) -> Self {
        FourVector([c0, c1, c2, c3])
    }

    pub fn from_parts(time: f64, space: [f64; 3]) -> Self {
        FourVector([time, space[0], space[1], space[2]])
    }

    /// On-shell momentum with the given spatial part: `p^0 = sqrt(mass_c² + |p|²)`.
    pub fn on_shell(space: [f64; 3], mass_c: f64) -> Self {
        let p0 = (mass_c * mass_c + dot3(space, space)).sqrt();
        Self::from_parts(p0, space)
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.0[0]
    }

    #[inline]
    pub fn space(&self) -> [f64; 3] {
        [self.0[1], self.0[2], self.0[3]]
    }

    /// Covariant components `a_μ = η_{μν} a^ν`.
    #[inline]
    pub fn lower(&self) -> [f64; 4] {
        [self.0[0], -self.0[1], -self.0[2], -self.0[3]]
    }

    #[inline]
    pub fn dot(&self, other: &FourVector) -> f64 {
        minkowski_dot(self, other)
    }

    #[inline]
    pub fn square(&self) -> f64 {
        minkowski_dot(self, self)
    }

    /// Largest absolute component, used as a scale for relative tolerances.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn apply(m: &Matrix4, v: &FourVector) -> FourVector {
        let mut out = [0.0; 4];
        for (i, row) in m.iter().enumerate() {
            out[i] = row[0] * v.0[0] + row[1] * v.0[1] + row[2] * v.0[2] + row[3] * v.0[3];
        }
        FourVector(out)
    }
}

impl Add for FourVector {
    type Output = FourVector;
    fn add(self, rhs: FourVector) -> FourVector {
        FourVector(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
    }
}

impl AddAssign for FourVector {
    fn add_assign(&mut self, rhs: FourVector) {
        for i in 0..4 {
            self.0[i] += rhs.0[i];
        }
    }
}

impl Sub for FourVector {
    type Output = FourVector;
    fn sub(self, rhs: FourVector) -> FourVector {
        FourVector(std::array::from_fn(|i| self.0[i] - rhs.0[i]))
    }
}

impl Neg for FourVector {
    type Output = FourVector;
    fn neg(self) -> FourVector {
        FourVector(self.0.map(|c| -c))
    }
}

impl Mul<FourVector> for f64 {
    type Output = FourVector;
    fn mul(self, rhs: FourVector) -> FourVector {
        FourVector(rhs.0.map(|c| self * c))
    }
}

/// `a^0 b^0 - a·b`.
#[inline]
pub fn minkowski_dot(a: &FourVector, b: &FourVector) -> f64 {
    a.0[0] * b.0[0] - a.0[1] * b.0[1] - a.0[2] * b.0[2] - a.0[3] * b.0[3]
}

#[inline]
pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Covariant antisymmetric tensor `F_{μν}` packed as electric and magnetic triples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AntisymTensor {
    pub e: [f64; 3],
    pub b: [f64; 3],
}

impl AntisymTensor {
    pub const ZERO: AntisymTensor = AntisymTensor { e: [0.0; 3], b: [0.0; 3] };

    pub fn new(e: [f64; 3], b: [f64; 3]) -> Self {
        AntisymTensor { e, b }
    }

    pub fn from_components(c: [f64; 6]) -> Self {
        AntisymTensor { e: [c[0], c[1], c[2]], b: [c[3], c[4], c[5]] }
    }

    pub fn components(&self) -> [f64; 6] {
        [self.e[0], self.e[1], self.e[2], self.b[0], self.b[1], self.b[2]]
    }

    /// Full 4×4 array of `F_{μν}`; antisymmetric by construction.
    pub fn to_matrix(&self) -> Matrix4 {
        let mut m = [[0.0; 4]; 4];
        for (value, &(mu, nu)) in self.components().iter().zip(PAIRS.iter()) {
            m[mu][nu] = *value;
            m[nu][mu] = -*value;
        }
        m
    }

    /// Reads the storage-order components from a 4×4 array, ignoring whatever
    /// sits below the pairs in [`PAIRS`].
    pub fn from_matrix(m: &Matrix4) -> Self {
        Self::from_components(std::array::from_fn(|i| {
            let (mu, nu) = PAIRS[i];
            m[mu][nu]
        }))
    }

    /// Mixed-index generator `F^μ_ν = η^{μα} F_{αν}`.
    pub fn mixed(&self) -> Matrix4 {
        let mut m = self.to_matrix();
        for (row, sign) in m.iter_mut().zip(METRIC) {
            for entry in row.iter_mut() {
                *entry *= sign;
            }
        }
        m
    }

    pub fn scaled(&self, s: f64) -> Self {
        AntisymTensor { e: self.e.map(|v| v * s), b: self.b.map(|v| v * s) }
    }

    pub fn max_abs(&self) -> f64 {
        self.components().iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }
}

impl Add for AntisymTensor {
    type Output = AntisymTensor;
    fn add(self, rhs: AntisymTensor) -> AntisymTensor {
        AntisymTensor {
            e: std::array::from_fn(|i| self.e[i] + rhs.e[i]),
            b: std::array::from_fn(|i| self.b[i] + rhs.b[i]),
        }
    }
}

impl AddAssign for AntisymTensor {
    fn add_assign(&mut self, rhs: AntisymTensor) {
        for i in 0..3 {
            self.e[i] += rhs.e[i];
            self.b[i] += rhs.b[i];
        }
    }
}

/// Per-mode complex amplitude `z_{μν}`, stored as real and imaginary parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplexAntisymTensor {
    pub re: AntisymTensor,
    pub im: AntisymTensor,
}

impl ComplexAntisymTensor {
    pub fn new(re: AntisymTensor, im: AntisymTensor) -> Self {
        ComplexAntisymTensor { re, im }
    }

    pub fn max_abs(&self) -> f64 {
        self.re.max_abs().max(self.im.max_abs())
    }
}

/// Raised Lorentz force `f^μ = η^{μα} F_{αν} p^ν`. Minkowski-orthogonal to `p`.
#[inline]
pub fn lorentz_force(f: &AntisymTensor, p: &FourVector) -> FourVector {
    let space = p.space();
    let pxb = cross3(space, f.b);
    FourVector([
        dot3(f.e, space),
        f.e[0] * p.0[0] + pxb[0],
        f.e[1] * p.0[0] + pxb[1],
        f.e[2] * p.0[0] + pxb[2],
    ])
}

/// Totally antisymmetric symbol with `ε^{0123} = +1`.
pub fn levi_civita(idx: [usize; 4]) -> f64 {
    let mut sign = 1.0;
    let mut v = idx;
    for i in 0..4 {
        if v[i] > 3 {
            return 0.0;
        }
        for j in (i + 1)..4 {
            if v[i] == v[j] {
                return 0.0;
            }
        }
    }
    // bubble sort, counting transpositions
    for i in 0..4 {
        for j in 0..(3 - i) {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            }
        }
    }
    sign
}

pub fn mat_mul(a: &Matrix4, b: &Matrix4) -> Matrix4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..4 {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Matrix4) -> Matrix4 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

pub const IDENTITY: Matrix4 =
    [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

/// Pure Lorentz boost into the frame moving with velocity `beta` (in units of c).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Boost {
    forward: Matrix4,
    inverse: Matrix4,
}

impl Boost {
    pub fn new(beta: [f64; 3]) -> Result<Self, MinkowskiError> {
        let b2 = dot3(beta, beta);
        if !(b2 < 1.0) {
            return Err(MinkowskiError::Superluminal(b2.sqrt()));
        }
        Ok(Boost { forward: boost_matrix(beta, b2), inverse: boost_matrix(beta.map(|b| -b), b2) })
    }

    /// Matrix acting on contravariant components.
    pub fn matrix(&self) -> &Matrix4 {
        &self.forward
    }

    pub fn inverse(&self) -> Boost {
        Boost { forward: self.inverse, inverse: self.forward }
    }

    pub fn apply(&self, a: &FourVector) -> FourVector {
        FourVector::apply(&self.forward, a)
    }

    /// Transforms a covariant tensor: `F' = Λ⁻ᵀ F Λ⁻¹`.
    pub fn apply_tensor(&self, f: &AntisymTensor) -> AntisymTensor {
        let m = f.to_matrix();
        let out = mat_mul(&transpose(&self.inverse), &mat_mul(&m, &self.inverse));
        AntisymTensor::from_matrix(&out)
    }

    pub fn apply_complex_tensor(&self, z: &ComplexAntisymTensor) -> ComplexAntisymTensor {
        ComplexAntisymTensor { re: self.apply_tensor(&z.re), im: self.apply_tensor(&z.im) }
    }

    /// Linear map induced on the six storage-order components, as a 6×6 array.
    pub fn tensor_representation(&self) -> [[f64; 6]; 6] {
        let mut rep = [[0.0; 6]; 6];
        for col in 0..6 {
            let mut unit = [0.0; 6];
            unit[col] = 1.0;
            let image = self.apply_tensor(&AntisymTensor::from_components(unit)).components();
            for row in 0..6 {
                rep[row][col] = image[row];
            }
        }
        rep
    }
}

fn boost_matrix(beta: [f64; 3], b2: f64) -> Matrix4 {
    let gamma = 1.0 / (1.0 - b2).sqrt();
    let mut m = IDENTITY;
    m[0][0] = gamma;
    for i in 0..3 {
        m[0][i + 1] = -gamma * beta[i];
        m[i + 1][0] = -gamma * beta[i];
        for j in 0..3 {
            // (γ-1)/β² written as γ²/(γ+1) to stay finite at β → 0
            m[i + 1][j + 1] += gamma * gamma / (gamma + 1.0) * beta[i] * beta[j];
        }
    }
    m
}

/// Boosts `a` into the frame moving with velocity `beta` (units of c).
pub fn boost(beta: [f64; 3], a: &FourVector) -> Result<FourVector, MinkowskiError> {
    Ok(Boost::new(beta)?.apply(a))
}
