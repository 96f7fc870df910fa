//! Numerical integration helpers shared by the oracles and the Kubo routines.

use gauss_quad::legendre::GaussLegendre;

/// Gauss–Legendre nodes and weights mapped onto `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(n.max(2)).expect("degree >= 2");
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.iter().map(|&(x, w)| (mid + half * x, half * w)).collect()
}

/// Double-exponential integral of `f` over the finite interval `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    quadrature::integrate(f, a, b, tol).integral
}

/// Outcome of a semi-infinite integral estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TailEstimate {
    Converged(f64),
    Divergent,
}

/// `∫_0^∞ f(s) ds`, integrating over doubling windows `[0, L·2^k]` until the last
/// window stops contributing. `scale` seeds the first window length.
pub fn integrate_semi_infinite(f: impl Fn(f64) -> f64, scale: f64, rel_tol: f64) -> TailEstimate {
    let mut upper = scale.max(f64::MIN_POSITIVE);
    let mut total = integrate(&f, 0.0, upper, 1e-15);
    if !total.is_finite() {
        return TailEstimate::Divergent;
    }
    let mut last_piece = f64::INFINITY;
    for _ in 0..40 {
        let piece = integrate(&f, upper, 2.0 * upper, 1e-15);
        if !piece.is_finite() {
            return TailEstimate::Divergent;
        }
        total += piece;
        upper *= 2.0;
        if piece.abs() <= rel_tol * total.abs() || (total == 0.0 && piece == 0.0) {
            return TailEstimate::Converged(total);
        }
        // windows double in length; a convergent tail must eventually shrink
        if piece.abs() > last_piece.abs() * 4.0 && last_piece.is_finite() {
            return TailEstimate::Divergent;
        }
        last_piece = piece;
    }
    TailEstimate::Divergent
}

/// Composite trapezoid rule on a tabulated function.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}
