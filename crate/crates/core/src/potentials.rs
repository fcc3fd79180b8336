//! Pair interactions for the bilayer: the intra-layer potential `V`, the
//! rescaled inter-layer potential `U`, their lattice sums, and the elastic
//! constant of a layer.
//!
//! All positions are in units of the lattice constant. Every potential is
//! even, so derivatives obey `p^(k)(-x) = (-1)^k p^(k)(x)`; kinds implement
//! the positive half-line and the sign rule is applied in one place.

use crate::error::{Error, Result};
use crate::linalg;
use std::path::Path;

/// Which side of the model a potential plays. The decay requirements differ
/// by two powers of `|x|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Intra,
    Inter,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// `-(r0/|x|)^m + (r0/|x|)^n`.
    LennardJones { m: f64, n: f64, r0: f64 },
    /// `k0/2 (|x|-1)^2` for `|x| < 3/2`, zero beyond: a bond to the nearest
    /// neighbour only.
    HarmonicNN { k0: f64 },
    /// `amp * exp(-(x/width)^2)`.
    Gaussian { amp: f64, width: f64 },
    /// Cardinal quintic B-spline through tabulated values, extended evenly.
    Tabulated(QuinticTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairPotential {
    pub kind: PotentialKind,
    pub decay_r: f64,
    pub decay_theta: f64,
    pub s_max: usize,
}

pub const DEFAULT_S_MAX: usize = 64;

impl PairPotential {
    pub fn lennard_jones(m: f64, n: f64, r0: f64) -> Result<Self> {
        if !(m > 1.0 && n > m && r0 > 0.0) {
            return Err(Error::Domain(format!(
                "Lennard-Jones needs 1 < m < n and r0 > 0, got m={m}, n={n}, r0={r0}"
            )));
        }
        Ok(Self {
            kind: PotentialKind::LennardJones { m, n, r0 },
            decay_r: 2.0 * r0.max(1.0),
            decay_theta: 1.0,
            s_max: DEFAULT_S_MAX,
        })
    }

    /// Lennard-Jones with `r0` set so that unit spacing is stress free in an
    /// isolated chain.
    pub fn lennard_jones_calibrated(m: f64, n: f64) -> Result<Self> {
        Self::lennard_jones(m, n, r0_closed_form(m, n)?)
    }

    pub fn harmonic_nn(k0: f64) -> Result<Self> {
        if k0 <= 0.0 {
            return Err(Error::Domain(format!("HarmonicNN needs k0 > 0, got {k0}")));
        }
        Ok(Self {
            kind: PotentialKind::HarmonicNN { k0 },
            decay_r: 2.0,
            decay_theta: 1.0,
            s_max: DEFAULT_S_MAX,
        })
    }

    pub fn gaussian(amp: f64, width: f64) -> Result<Self> {
        if width <= 0.0 || !amp.is_finite() {
            return Err(Error::Domain(format!(
                "Gaussian needs width > 0 and finite amplitude, got amp={amp}, width={width}"
            )));
        }
        Ok(Self {
            kind: PotentialKind::Gaussian { amp, width },
            decay_r: 8.0 * width,
            decay_theta: 1.0,
            s_max: DEFAULT_S_MAX,
        })
    }

    pub fn tabulated(table: QuinticTable) -> Self {
        let support = table.support();
        Self {
            kind: PotentialKind::Tabulated(table),
            decay_r: support.max(1.0),
            decay_theta: 1.0,
            s_max: DEFAULT_S_MAX,
        }
    }

    /// Reads a two-column `x,value` file (header optional) with uniformly
    /// spaced `x` starting at 0.
    pub fn tabulated_from_csv(path: &Path) -> Result<Self> {
        let io = |e: &dyn std::fmt::Display| Error::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| io(&e))?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| io(&e))?;
            let parsed = match (rec.get(0), rec.get(1)) {
                (Some(a), Some(b)) => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some((x, y)) => {
                    xs.push(x);
                    ys.push(y);
                }
                None if xs.is_empty() && row == 0 => continue, // header row
                None => {
                    return Err(Error::Domain(format!(
                        "{}: record {} is not an `x,value` pair",
                        path.display(),
                        row + 1
                    )))
                }
            }
        }
        Ok(Self::tabulated(QuinticTable::new(&xs, &ys)?))
    }

    pub fn with_s_max(mut self, s_max: usize) -> Self {
        self.s_max = s_max.max(1);
        self
    }

    pub fn with_decay(mut self, r: f64, theta: f64) -> Self {
        self.decay_r = r;
        self.decay_theta = theta;
        self
    }

    /// Largest integer separation that can interact, if the kind has finite
    /// range. Lattice sums use `min(s_max, range)`.
    pub fn range(&self) -> Option<usize> {
        match &self.kind {
            PotentialKind::HarmonicNN { .. } => Some(1),
            PotentialKind::Tabulated(t) => Some(t.support().ceil() as usize),
            _ => None,
        }
    }

    /// Number of lattice shells used in sums.
    pub fn shells(&self) -> usize {
        match self.range() {
            Some(r) => r.min(self.s_max).max(1),
            None => self.s_max,
        }
    }

    fn singular_at_origin(&self) -> bool {
        matches!(
            self.kind,
            PotentialKind::LennardJones { .. } | PotentialKind::HarmonicNN { .. }
        )
    }

    /// `d^k p / dx^k` at `x`.
    pub fn eval_deriv(&self, k: usize, x: f64) -> Result<f64> {
        if k > 4 {
            return Err(Error::Order(k));
        }
        if x == 0.0 && self.singular_at_origin() {
            return Err(Error::Domain(
                "potential is singular at x = 0".to_string(),
            ));
        }
        Ok(self.d(k, x))
    }

    /// Unchecked derivative for inner loops: `k <= 4` and, for singular
    /// kinds, `x != 0` are the caller's responsibility.
    #[inline]
    pub fn d(&self, k: usize, x: f64) -> f64 {
        let (ax, sign) = if x < 0.0 {
            (-x, if k % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (x, 1.0)
        };
        sign * self.d_pos(k, ax)
    }

    fn d_pos(&self, k: usize, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::LennardJones { m, n, r0 } => {
                let a = rising(*m, k) * power_term(r0 / x, *m);
                let b = rising(*n, k) * power_term(r0 / x, *n);
                let xk = x.powi(k as i32);
                let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
                sign * (b - a) / xk
            }
            PotentialKind::HarmonicNN { k0 } => {
                if x >= 1.5 {
                    return 0.0;
                }
                match k {
                    0 => 0.5 * k0 * (x - 1.0) * (x - 1.0),
                    1 => k0 * (x - 1.0),
                    2 => *k0,
                    _ => 0.0,
                }
            }
            PotentialKind::Gaussian { amp, width } => {
                let y = x / width;
                amp * hermite(k, y) * (-y * y).exp() * (-1.0 / width).powi(k as i32)
            }
            PotentialKind::Tabulated(t) => t.eval(k, x),
        }
    }
}

/// `p(p+1)...(p+k-1)`.
fn rising(p: f64, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (p + j as f64))
}

fn power_term(base: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < 64.0 {
        base.powi(p as i32)
    } else {
        base.powf(p)
    }
}

/// Physicists' Hermite polynomials, so that
/// `d^k/dy^k exp(-y^2) = (-1)^k H_k(y) exp(-y^2)`.
fn hermite(k: usize, y: f64) -> f64 {
    let y2 = y * y;
    match k {
        0 => 1.0,
        1 => 2.0 * y,
        2 => 4.0 * y2 - 2.0,
        3 => y * (8.0 * y2 - 12.0),
        _ => 16.0 * y2 * y2 - 48.0 * y2 + 12.0,
    }
}

/// Result of the elastic-constant sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha {
    pub alpha: f64,
    /// Estimated magnitude of the neglected shells `s > s_max`.
    pub tail_bound: f64,
}

/// `alpha = sum_{s != 0} V''(s) s^2 / 2 = sum_{s >= 1} V''(s) s^2`.
pub fn elastic_alpha(v: &PairPotential) -> Result<Alpha> {
    let shells = v.shells();
    let alpha = (1..=shells)
        .rev()
        .map(|s| {
            let s = s as f64;
            v.d(2, s) * s * s
        })
        .sum::<f64>();
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::Stability(format!(
            "elastic constant alpha = {alpha} is not positive"
        )));
    }
    let tail_bound = if v.range().is_some_and(|r| r <= shells) {
        0.0
    } else {
        // |V''(x)| <= C x^(-6-theta) on [S, 2S] integrated from S to infinity.
        let s = shells as f64;
        let p = 6.0 + v.decay_theta;
        let c = (0..=64)
            .map(|j| {
                let x = s * (1.0 + j as f64 / 64.0);
                v.d(2, x).abs() * x.powf(p)
            })
            .fold(0.0, f64::max);
        c * s.powf(3.0 - p) / (p - 3.0)
    };
    Ok(Alpha { alpha, tail_bound })
}

/// Riemann zeta for real `s > 1`: partial sum plus an Euler-Maclaurin tail.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta needs s > 1");
    let k = 200usize;
    let kf = k as f64;
    let head: f64 = (1..k).rev().map(|j| (j as f64).powf(-s)).sum();
    // sum_{j >= K} j^-s = K^{1-s}/(s-1) + K^-s/2 + s K^{-s-1}/12
    //                     - s(s+1)(s+2) K^{-s-3}/720 + ...
    let tail = kf.powf(1.0 - s) / (s - 1.0) + 0.5 * kf.powf(-s) + s * kf.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * kf.powf(-s - 3.0) / 720.0;
    head + tail
}

/// `r0` from `r0^(n-m) = m zeta(m) / (n zeta(n))`.
pub fn r0_closed_form(m: f64, n: f64) -> Result<f64> {
    if !(m > 1.0 && n > m) {
        return Err(Error::Domain(format!("need 1 < m < n, got m={m}, n={n}")));
    }
    Ok((m * zeta(m) / (n * zeta(n))).powf(1.0 / (n - m)))
}

/// Residual of the uniform-spacing equilibrium condition
/// `sum_{k != 0} k V'(k) + eps^2 sum_k (k - 1/2) U'(k - 1/2)`.
/// The intra-layer part uses the full lattice (zeta functions); the
/// inter-layer part uses `U`'s own shell count.
pub fn calibration_residual(m: f64, n: f64, r0: f64, u: &PairPotential, eps: f64) -> f64 {
    let intra = 2.0 * (m * r0.powf(m) * zeta(m) - n * r0.powf(n) * zeta(n));
    let s = u.shells() as i64;
    let inter: f64 = (-s + 1..=s)
        .rev()
        .map(|k| {
            let y = k as f64 - 0.5;
            y * u.d(1, y)
        })
        .sum();
    intra + eps * eps * inter
}

/// Finds `r0` in `(0.5, 1.5)` zeroing [`calibration_residual`].
pub fn calibrate_r0(m: f64, n: f64, u: &PairPotential, eps: f64) -> Result<f64> {
    if !(m > 1.0 && n > m) || eps < 0.0 {
        return Err(Error::Domain(format!(
            "calibration needs 1 < m < n and eps >= 0, got m={m}, n={n}, eps={eps}"
        )));
    }
    let f = |r: f64| calibration_residual(m, n, r, u, eps);
    linalg::bisect_secant(f, 0.5, 1.5, 1e-15)
        .ok_or_else(|| Error::convergence("calibrate_r0", "no sign change in (0.5, 1.5)"))
}

/// Outcome of a decay scan on `[R, 10R]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub role_exponent_offset: f64,
    /// Smallest `C_k` with `|p^(k)(x)| <= C_k |x|^-(k + offset + theta)` on the samples.
    pub constants: [f64; 5],
    /// Orders whose scaled derivative still grows at the far end of the scan,
    /// which means the claimed exponent is too strong.
    pub violations: Vec<usize>,
}

impl DecayReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty() && self.constants.iter().all(|c| c.is_finite())
    }
}

pub fn verify_decay(p: &PairPotential, role: Role) -> DecayReport {
    let offset = match role {
        Role::Intra => 4.0,
        Role::Inter => 2.0,
    };
    let r = p.decay_r;
    let samples = 400;
    let mut constants = [0.0; 5];
    let mut violations = Vec::new();
    for (k, slot) in constants.iter_mut().enumerate() {
        let expo = k as f64 + offset + p.decay_theta;
        let scaled: Vec<f64> = (0..=samples)
            .map(|j| {
                let x = r * 10f64.powf(j as f64 / samples as f64);
                p.d(k, x).abs() * x.powf(expo)
            })
            .collect();
        *slot = scaled.iter().cloned().fold(0.0, f64::max);
        let half = samples / 2;
        let near = scaled[..=half].iter().cloned().fold(0.0, f64::max);
        let far = scaled[half..].iter().cloned().fold(0.0, f64::max);
        if far > near * (1.0 + 1e-9) + f64::MIN_POSITIVE {
            violations.push(k);
        }
    }
    DecayReport {
        role_exponent_offset: offset,
        constants,
        violations,
    }
}

/// Even C^4 interpolant built from the centred quintic B-spline on uniform
/// knots `x_j = j h`, `j = 0..=J`. Coefficients beyond `J` vanish, so the
/// function has support `|x| < (J + 3) h`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuinticTable {
    h: f64,
    coef: Vec<f64>,
}

impl QuinticTable {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 3 {
            return Err(Error::Domain(
                "tabulated potential needs at least three (x, value) pairs".into(),
            ));
        }
        if xs[0].abs() > 1e-12 {
            return Err(Error::Domain("tabulated knots must start at x = 0".into()));
        }
        let h = xs[1] - xs[0];
        if h <= 0.0 || xs.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
            return Err(Error::Domain(
                "tabulated knots must be sorted and uniformly spaced".into(),
            ));
        }
        let j = xs.len();
        // Row r: sum_m c_|m| B(r - m) = y_r with B(0), B(1), B(2) = 66, 26, 1 (/120).
        let mut a = nalgebra::DMatrix::<f64>::zeros(j, j);
        for r in 0..j as i64 {
            for (off, w) in [(-2i64, 1.0), (-1, 26.0), (0, 66.0), (1, 26.0), (2, 1.0)] {
                let m = (r + off).unsigned_abs() as usize;
                if m < j {
                    a[(r as usize, m)] += w / 120.0;
                }
            }
        }
        let rhs = nalgebra::DVector::from_column_slice(ys);
        let coef = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Domain("spline system is singular".into()))?;
        Ok(Self {
            h,
            coef: coef.iter().cloned().collect(),
        })
    }

    pub fn support(&self) -> f64 {
        (self.coef.len() as f64 + 2.0) * self.h
    }

    fn eval(&self, k: usize, x: f64) -> f64 {
        let t = x / self.h;
        let centre = t.floor() as i64;
        let last = self.coef.len() as i64 - 1;
        let mut acc = 0.0;
        for m in (centre - 3)..=(centre + 3) {
            let idx = m.unsigned_abs() as i64;
            if idx > last {
                continue;
            }
            acc += self.coef[idx as usize] * bspline5(k, t - m as f64);
        }
        acc / self.h.powi(k as i32)
    }
}

/// k-th derivative of the centred cardinal quintic B-spline.
fn bspline5(k: usize, t: f64) -> f64 {
    let (at, sign) = if t < 0.0 {
        (-t, if k % 2 == 1 { -1.0 } else { 1.0 })
    } else {
        (t, 1.0)
    };
    if at >= 3.0 {
        return 0.0;
    }
    // d^k/dt^k (a - t)_+^5 = (-1)^k 5!/(5-k)! (a - t)_+^(5-k)
    let falling = [1.0, 5.0, 20.0, 60.0, 120.0][k];
    let piece = |a: f64| {
        let d = a - at;
        if d > 0.0 {
            d.powi(5 - k as i32)
        } else {
            0.0
        }
    };
    let sk = if k % 2 == 1 { -1.0 } else { 1.0 };
    sign * sk * falling * (piece(3.0) - 6.0 * piece(2.0) + 15.0 * piece(1.0)) / 120.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lj1() -> PairPotential {
        PairPotential::lennard_jones(6.0, 12.0, 1.0).unwrap()
    }

    #[test]
    fn lj_at_r0_is_zero() {
        assert_eq!(lj1().eval_deriv(0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn odd_derivative_of_gaussian_vanishes_at_origin() {
        let g = PairPotential::gaussian(1.0, 1.0).unwrap();
        assert_eq!(g.eval_deriv(1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn singular_origin_and_order_errors() {
        assert!(matches!(lj1().eval_deriv(0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(lj1().eval_deriv(5, 1.0), Err(Error::Order(5))));
    }

    #[test]
    fn lj_second_derivative_against_differenced_first() {
        let p = lj1();
        let h = 1e-5;
        let fd = (p.d(1, 2.0 + h) - p.d(1, 2.0 - h)) / (2.0 * h);
        let exact = p.eval_deriv(2, 2.0).unwrap();
        assert!(((fd - exact) / exact).abs() < 1e-6);
    }

    #[test]
    fn harmonic_alpha() {
        for k0 in [1.0, 2.0] {
            let a = elastic_alpha(&PairPotential::harmonic_nn(k0).unwrap()).unwrap();
            assert_eq!(a.alpha, k0);
            assert_eq!(a.tail_bound, 0.0);
        }
    }

    #[test]
    fn zeta_known_values() {
        let pi = std::f64::consts::PI;
        assert!((zeta(2.0) - pi * pi / 6.0).abs() < 1e-14);
        assert!((zeta(6.0) - pi.powi(6) / 945.0).abs() < 1e-14);
        assert!((zeta(12.0) - 691.0 * pi.powi(12) / 638512875.0).abs() < 1e-14);
    }

    #[test]
    fn closed_form_r0_balances_chain() {
        let r0 = r0_closed_form(6.0, 12.0).unwrap();
        let u = PairPotential::gaussian(1.0, 0.5).unwrap();
        assert!(calibration_residual(6.0, 12.0, r0, &u, 0.0).abs() < 1e-12);
        let r = calibrate_r0(6.0, 12.0, &u, 0.0).unwrap();
        assert!((r - r0).abs() < 1e-10);
    }

    #[test]
    fn nonpositive_alpha_is_rejected() {
        let p = PairPotential::gaussian(-1.0, 0.3).unwrap();
        assert!(matches!(elastic_alpha(&p), Err(Error::Stability(_))));
    }

    #[test]
    fn bspline_partition_of_unity_and_values() {
        let s: f64 = (-3..=3).map(|m| bspline5(0, 0.3 - m as f64)).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!((bspline5(0, 0.0) - 66.0 / 120.0).abs() < 1e-15);
        assert!((bspline5(0, 1.0) - 26.0 / 120.0).abs() < 1e-15);
        assert!((bspline5(0, 2.0) - 1.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn table_interpolates_knots() {
        let xs: Vec<f64> = (0..12).map(|j| j as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (-x * x).exp()).collect();
        let t = QuinticTable::new(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((t.eval(0, *x) - y).abs() < 1e-13);
        }
        assert_eq!(t.eval(0, t.support() + 0.1), 0.0);
    }
}
