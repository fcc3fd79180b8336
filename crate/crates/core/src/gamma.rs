//! The misfit energy density `gamma(phi)`: energy per unit length of a rigid
//! relative shift `phi` (in lattice units) between the two layers.
//!
//! A surface is built from one of three sources: the classic sinusoid, a
//! lattice sum over an inter-layer pair potential, or a finite cosine series
//! (used for the slice of the fitted two-dimensional surface). Every source
//! is sampled on a uniform periodic grid, and its cosine coefficients are
//! kept so that `gamma` can be evaluated as a sum of `sin^2` terms. That form
//! keeps full relative accuracy near the minima, where a lattice sum would
//! lose digits to cancellation.

use crate::error::{Error, Result};
use crate::potentials::PairPotential;
use std::f64::consts::PI;

pub const DEFAULT_GRID: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum GammaSource {
    /// `A (1 - cos 2 pi phi)`.
    Sinusoidal { amplitude: f64 },
    /// `sum_s [U(s - 1/2 + phi) - U(s - 1/2)]`.
    Potential(PairPotential),
    /// `sum_k a_k (1 - cos 2 pi k phi)`, `k = 1, 2, ...`.
    Cosine(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct GammaSurface {
    pub source: GammaSource,
    /// `gamma(j / G)` for `j = 0..G`.
    pub values: Vec<f64>,
    /// `gamma^(k)(j / G)` for `k = 1..=4`.
    pub derivs: [Vec<f64>; 4],
    /// Cosine coefficients `a_k` (index 0 holds `a_1`) from the value grid.
    pub coeffs: Vec<f64>,
    pub gamma2_at_0: f64,
    /// Elastic constant paired with this surface.
    pub alpha: f64,
    /// `sqrt(gamma''(0) / alpha)`: the small parameter these inputs imply
    /// when `gamma` and `alpha` carry physical units per lattice constant.
    pub eps: f64,
}

impl GammaSurface {
    pub fn new(source: GammaSource, alpha: f64, grid: usize) -> Result<Self> {
        if grid < 8 || grid % 2 != 0 {
            return Err(Error::Domain(format!(
                "gamma grid size must be even and at least 8, got {grid}"
            )));
        }
        let eval = |k: usize, phi: f64| source_eval(&source, k, phi);
        let pts: Vec<f64> = (0..grid).map(|j| j as f64 / grid as f64).collect();
        let values: Vec<f64> = pts.iter().map(|&p| eval(0, p)).collect();
        let derivs = [1, 2, 3, 4].map(|k| pts.iter().map(|&p| eval(k, p)).collect::<Vec<_>>());
        let coeffs = match &source {
            GammaSource::Sinusoidal { amplitude } => vec![*amplitude],
            GammaSource::Cosine(a) => a.clone(),
            GammaSource::Potential(u) => cosine_coefficients(&values, rounding_level(u)),
        };
        let gamma2_at_0 = eval(2, 0.0);
        let eps = if alpha > 0.0 && gamma2_at_0 > 0.0 {
            (gamma2_at_0 / alpha).sqrt()
        } else {
            f64::NAN
        };
        Ok(Self {
            source,
            values,
            derivs,
            coeffs,
            gamma2_at_0,
            alpha,
            eps,
        })
    }

    pub fn sinusoidal(amplitude: f64, alpha: f64) -> Result<Self> {
        Self::new(GammaSource::Sinusoidal { amplitude }, alpha, DEFAULT_GRID)
    }

    pub fn from_potential(u: &PairPotential, alpha: f64) -> Result<Self> {
        Self::new(GammaSource::Potential(u.clone()), alpha, DEFAULT_GRID)
    }

    /// The `psi = 0` slice of a fitted two-dimensional surface, in units of
    /// the fit's lattice constant, paired with `alpha`.
    pub fn from_trig_slice(fit: &GammaTrigFit, alpha: f64) -> Result<Self> {
        Self::new(GammaSource::Cosine(fit.slice_coefficients().to_vec()), alpha, DEFAULT_GRID)
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    /// `gamma^(k)(phi)` from the source: analytic for the sinusoid and cosine
    /// series, term-wise differentiated lattice sum for a potential.
    pub fn deriv(&self, k: usize, phi: f64) -> Result<f64> {
        if k > 4 {
            return Err(Error::Order(k));
        }
        Ok(source_eval(&self.source, k, phi))
    }

    /// Unchecked `gamma^(k)`, `k <= 4`.
    #[inline]
    pub fn d(&self, k: usize, phi: f64) -> f64 {
        source_eval(&self.source, k, phi)
    }

    /// `gamma(phi)` with full relative accuracy near integers, evaluated as
    /// `sum_k 2 a_k sin^2(pi k phi)`.
    pub fn value(&self, phi: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .rev()
            .map(|(i, a)| {
                let s = (PI * (i + 1) as f64 * phi).sin();
                2.0 * a * s * s
            })
            .sum()
    }

    /// k-th derivative of the trigonometric interpolant of the value grid.
    pub fn spectral_deriv(&self, k: usize, phi: f64) -> f64 {
        if k == 0 {
            return self.value(phi);
        }
        self.coeffs
            .iter()
            .enumerate()
            .rev()
            .map(|(i, a)| {
                let w = 2.0 * PI * (i + 1) as f64;
                // d^k/dphi^k of -a cos(w phi)
                let c = -a * w.powi(k as i32);
                let t = w * phi;
                c * match k % 4 {
                    0 => t.cos(),
                    1 => -t.sin(),
                    2 => -t.cos(),
                    _ => t.sin(),
                }
            })
            .sum()
    }
}

fn source_eval(source: &GammaSource, k: usize, phi: f64) -> f64 {
    match source {
        GammaSource::Sinusoidal { amplitude: a } => {
            let t = 2.0 * PI * phi;
            let w = 2.0 * PI;
            match k {
                0 => 2.0 * a * (PI * phi).sin().powi(2),
                1 => a * w * t.sin(),
                2 => a * w * w * t.cos(),
                3 => -a * w.powi(3) * t.sin(),
                _ => -a * w.powi(4) * t.cos(),
            }
        }
        GammaSource::Cosine(coeffs) => coeffs
            .iter()
            .enumerate()
            .rev()
            .map(|(i, a)| {
                let w = 2.0 * PI * (i + 1) as f64;
                let t = w * phi;
                match k {
                    0 => 2.0 * a * (0.5 * t).sin().powi(2),
                    1 => a * w * t.sin(),
                    2 => a * w * w * t.cos(),
                    3 => -a * w.powi(3) * t.sin(),
                    _ => -a * w.powi(4) * t.cos(),
                }
            })
            .sum(),
        GammaSource::Potential(u) => lattice_sum(u, k, phi),
    }
}

/// `sum_{s=-S+1}^{S} [U^(k)(s - 1/2 + phi) - delta_{k0} U(s - 1/2)]`, with
/// the outermost shells accumulated first.
fn lattice_sum(u: &PairPotential, k: usize, phi: f64) -> f64 {
    let shells = u.shells();
    let mut acc = 0.0;
    for j in (0..shells).rev() {
        let c = j as f64 + 0.5;
        let mut term = u.d(k, c + phi) + u.d(k, -c + phi);
        if k == 0 {
            term -= 2.0 * u.d(0, c);
        }
        acc += term;
    }
    acc
}

/// `gamma(phi) = sum_s [U(s - 1/2 + phi) - U(s - 1/2)]`.
pub fn gamma_from_potential(u: &PairPotential, phi: f64) -> f64 {
    lattice_sum(u, 0, phi)
}

pub fn gamma_deriv(g: &GammaSurface, k: usize, phi: f64) -> Result<f64> {
    g.deriv(k, phi)
}

/// Size of the rounding error in one grid value of the lattice sum, which
/// cancels terms much larger than `gamma` itself.
fn rounding_level(u: &PairPotential) -> f64 {
    let terms: f64 = (0..u.shells())
        .map(|j| {
            let c = j as f64 + 0.5;
            u.d(0, c + 0.5).abs() + u.d(0, -c + 0.5).abs() + 2.0 * u.d(0, c).abs()
        })
        .sum();
    f64::EPSILON * terms
}

/// Cosine coefficients `a_k` of an even periodic grid function with
/// `f(0) = 0`, so that `f(phi) = sum_k a_k (1 - cos 2 pi k phi)`. Trailing
/// coefficients below round-off, either relative to the largest one or to
/// `noise` (the rounding level of the values), are dropped; kept, they
/// would be amplified by `(2 pi k)^m` in derivatives.
fn cosine_coefficients(values: &[f64], noise: f64) -> Vec<f64> {
    let g = values.len();
    let half = g / 2;
    let mut a: Vec<f64> = (1..=half)
        .map(|k| {
            let scale = if k == half { 1.0 } else { 2.0 } / g as f64;
            let s: f64 = values
                .iter()
                .enumerate()
                .map(|(j, v)| v * (2.0 * PI * ((k * j) % g) as f64 / g as f64).cos())
                .sum();
            -scale * s
        })
        .collect();
    let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-14 * peak).max(4.0 * noise);
    while a.len() > 1 && a.last().is_some_and(|v| v.abs() <= floor) {
        a.pop();
    }
    a
}

/// `sqrt(a^2 gamma''(0) / alpha)`.
pub fn epsilon_parameter(alpha: f64, gamma2_at_0: f64, a: f64) -> Result<f64> {
    if alpha <= 0.0 || gamma2_at_0 <= 0.0 {
        return Err(Error::Stability(format!(
            "epsilon needs alpha > 0 and gamma''(0) > 0, got alpha={alpha}, gamma''(0)={gamma2_at_0}"
        )));
    }
    Ok((a * a * gamma2_at_0 / alpha).sqrt())
}

/// Six-coefficient trigonometric fit of a two-dimensional stacking-fault
/// surface on a hexagonal lattice (energies per area, lengths in the unit
/// of `a`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaTrigFit {
    pub c: [f64; 6],
    pub a: f64,
}

impl GammaTrigFit {
    /// Builds a fit from `c0..c3`; `c4 = sqrt(3) c1` and `c5 = -sqrt(3) c3`.
    pub fn new(c0: f64, c1: f64, c2: f64, c3: f64, a: f64) -> Result<Self> {
        let r3 = 3f64.sqrt();
        Self::with_all([c0, c1, c2, c3, r3 * c1, -r3 * c3], a)
    }

    pub fn with_all(c: [f64; 6], a: f64) -> Result<Self> {
        if a <= 0.0 {
            return Err(Error::Domain(format!("lattice constant must be positive, got {a}")));
        }
        let r3 = 3f64.sqrt();
        let tol = 1e-12 * c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if (c[4] - r3 * c[1]).abs() > tol || (c[5] + r3 * c[3]).abs() > tol {
            return Err(Error::Domain(
                "fit constants must satisfy c4 = sqrt(3) c1 and c5 = -sqrt(3) c3".into(),
            ));
        }
        Ok(Self { c, a })
    }

    /// Graphene bilayer constants in J/m^2 with `a = 2.46` angstrom.
    pub fn graphene() -> Self {
        Self::new(21.336e-3, -6.127e-3, -1.128e-3, 0.143e-3, 2.46).expect("valid constants")
    }

    /// Cosine coefficients of `phi -> gamma2d(phi a, 0)` (phi in units of `a`),
    /// in the form `sum_k a_k (1 - cos 2 pi k phi)`. Exact when the series
    /// vanishes at the origin.
    pub fn slice_coefficients(&self) -> [f64; 2] {
        let [_, c1, c2, c3, _, _] = self.c;
        [-2.0 * (c1 + c2), -(c2 + 2.0 * c3)]
    }
}

/// The fitted surface at `(phi, psi)` in the fit's length unit.
pub fn gamma2d_trig(fit: &GammaTrigFit, phi: f64, psi: f64) -> f64 {
    gamma2d_terms(fit, phi, psi, 0)
}

/// `d^2 gamma2d / d phi^2` by term-wise differentiation.
pub fn gamma2d_trig_d2phi(fit: &GammaTrigFit, phi: f64, psi: f64) -> f64 {
    gamma2d_terms(fit, phi, psi, 2)
}

/// Evaluates the series or its `k`-th `phi` derivative (`k` = 0 or 2). Each
/// term is `amp * trig(w_phi phi + w_psi psi)`; the second derivative of such
/// a term is `-w_phi^2` times the term.
fn gamma2d_terms(fit: &GammaTrigFit, phi: f64, psi: f64, k: usize) -> f64 {
    let [c0, c1, c2, c3, c4, c5] = fit.c;
    let a = fit.a;
    let r3 = 3f64.sqrt();
    let q = 2.0 * PI / a;
    // (coefficient, phi frequency, psi frequency, is_sine)
    let terms: [(f64, f64, f64, bool); 15] = [
        (c1, q, q / r3, false),
        (c1, q, -q / r3, false),
        (c1, 0.0, 2.0 * q / r3, false),
        (c2, q, q * r3, false),
        (c2, q, -q * r3, false),
        (c2, 2.0 * q, 0.0, false),
        (c3, 2.0 * q, 2.0 * q / r3, false),
        (c3, 2.0 * q, -2.0 * q / r3, false),
        (c3, 0.0, 4.0 * q / r3, false),
        (c4, q, -q / r3, true),
        (-c4, q, q / r3, true),
        (c4, 0.0, 2.0 * q / r3, true),
        (c5, 2.0 * q, -2.0 * q / r3, true),
        (-c5, 2.0 * q, 2.0 * q / r3, true),
        (c5, 0.0, 4.0 * q / r3, true),
    ];
    let mut acc = if k == 0 { c0 } else { 0.0 };
    for (amp, wp, ws, sine) in terms {
        let t = wp * phi + ws * psi;
        let base = if sine { t.sin() } else { t.cos() };
        acc += amp * base * if k == 0 { 1.0 } else { -wp * wp };
    }
    acc
}

/// Outcome of the structural checks on a surface.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GammaValidation {
    pub value_at_zero: f64,
    pub min_value: f64,
    pub periodicity_violation: f64,
    pub symmetry_violation: f64,
    /// Largest grid radius on which `gamma(phi) >= gamma''(0) phi^2 / 4`.
    pub c0: f64,
    /// Same radius for the stronger constant `gamma''(0) / 2`; this is zero
    /// whenever `gamma''''(0) < 0`, as for the sinusoid.
    pub c0_half_curvature: f64,
    /// `min gamma` over `[c0, 1 - c0]`.
    pub m_prime: f64,
    pub largest_violation: f64,
}

pub fn validate_gamma(g: &GammaSurface) -> GammaValidation {
    let n = g.grid_size();
    let h = 1.0 / n as f64;
    let vals = &g.values;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let periodicity_violation = (0..n)
        .map(|j| (g.d(0, j as f64 * h + 1.0) - vals[j]).abs())
        .fold(0.0, f64::max);
    let symmetry_violation = (0..n)
        .map(|j| (vals[j] - vals[(n - j) % n]).abs())
        .fold(0.0, f64::max);
    let min_value = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let radius = |factor: f64| {
        let mut r = 0.0;
        for (j, v) in vals.iter().enumerate().take(n / 2 + 1).skip(1) {
            let phi = j as f64 * h;
            if *v + 1e-14 * scale >= factor * g.gamma2_at_0 * phi * phi {
                r = phi;
            } else {
                break;
            }
        }
        r
    };
    let c0 = radius(0.25);
    let c0_half_curvature = radius(0.5);
    let m_prime = vals
        .iter()
        .enumerate()
        .filter(|(j, _)| {
            let phi = *j as f64 * h;
            phi >= c0 - 1e-15 && phi <= 1.0 - c0 + 1e-15
        })
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let value_at_zero = vals[0];
    let largest_violation = [
        value_at_zero.abs(),
        (-min_value).max(0.0),
        periodicity_violation,
        symmetry_violation,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    GammaValidation {
        value_at_zero,
        min_value,
        periodicity_violation,
        symmetry_violation,
        c0,
        c0_half_curvature,
        m_prime,
        largest_violation,
    }
}

/// Result of the end-to-end calibration of the small parameter from the
/// fitted surface and an elastic constant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EpsilonCalibration {
    pub c11: f64,
    pub lattice_constant: f64,
    pub d2gamma_dphi2: f64,
    pub eps: f64,
}

pub fn calibrate_epsilon(fit: &GammaTrigFit, c11: f64) -> Result<EpsilonCalibration> {
    let d2 = gamma2d_trig_d2phi(fit, 0.0, 0.0);
    let eps = epsilon_parameter(c11, d2, fit.a)?;
    Ok(EpsilonCalibration {
        c11,
        lattice_constant: fit.a,
        d2gamma_dphi2: d2,
        eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_basics() {
        let g = GammaSurface::sinusoidal(1.0, 1.0).unwrap();
        assert!((g.gamma2_at_0 - 4.0 * PI * PI).abs() < 1e-12);
        let v = validate_gamma(&g);
        assert!(v.periodicity_violation < 1e-14);
        assert!(v.symmetry_violation < 1e-14);
        assert_eq!(v.c0_half_curvature, 0.0);
        assert!(v.c0 > 0.4);
    }

    #[test]
    fn epsilon_identities() {
        assert_eq!(epsilon_parameter(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(epsilon_parameter(4.0, 1.0, 1.0).unwrap(), 0.5);
        assert!(epsilon_parameter(0.0, 1.0, 1.0).is_err());
        assert!(epsilon_parameter(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn fit_vanishes_at_origin_and_is_periodic() {
        let fit = GammaTrigFit::graphene();
        let [c0, c1, c2, c3, _, _] = fit.c;
        let at0 = gamma2d_trig(&fit, 0.0, 0.0);
        assert!((at0 - (c0 + 3.0 * c1 + 3.0 * c2 + 3.0 * c3)).abs() < 1e-15);
        for (p, s) in [(0.3, 0.1), (1.1, -0.7)] {
            let d = gamma2d_trig(&fit, p + fit.a, s) - gamma2d_trig(&fit, p, s);
            assert!(d.abs() < 1e-15);
        }
    }

    #[test]
    fn slice_matches_series() {
        let fit = GammaTrigFit::graphene();
        let g = GammaSurface::from_trig_slice(&fit, 312.67).unwrap();
        for j in 0..20 {
            let phi = j as f64 / 20.0;
            let direct = gamma2d_trig(&fit, phi * fit.a, 0.0);
            assert!((g.d(0, phi) - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn constraint_on_fit_constants_is_enforced() {
        assert!(GammaTrigFit::with_all([0.0, 1.0, 0.0, 0.0, 1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn order_error() {
        let g = GammaSurface::sinusoidal(1.0, 1.0).unwrap();
        assert!(matches!(g.deriv(5, 0.1), Err(Error::Order(5))));
    }
}
