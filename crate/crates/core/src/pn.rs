//! The continuum (Peierls–Nabarro) dislocation.
//!
//! With `v = (phi/2, -phi/2)` the energy reduces to
//! `int alpha/4 |phi'|^2 + gamma(phi) dx`, whose minimiser obeys the first
//! integral `phi' = sqrt(4 gamma(phi) / alpha)`. The profile is obtained by
//! inverting `x(phi) = int_{1/2}^{phi} dpsi / sqrt(4 gamma(psi) / alpha)`.
//! Substituting `psi = 1/2 + tanh(t)/2` turns the logarithmic endpoint
//! singularity into a smooth integrand that tends to `2/mu`, so composite
//! Gauss–Legendre panels in `t` give the map `t -> x` to round-off.
//!
//! Only `x >= 0` is computed; the left half follows from
//! `phi(-x) = 1 - phi(x)`. Near `phi = 1` the code carries
//! `eta = 1 - phi` directly so that the exponential tail keeps its digits.

use crate::error::{Error, Result};
use crate::gamma::GammaSurface;
use crate::linalg::{self, BandSym};

const PANEL_NODES: usize = 12;
const CHECK_NODES: usize = 8;

#[derive(Debug, Clone)]
pub struct PNSolution {
    pub gamma: GammaSurface,
    pub alpha: f64,
    pub l: f64,
    /// `mu = sqrt(2 gamma''(0) / alpha)`.
    pub tail_rate: f64,
    pub tol: f64,
    /// Graded grid on `[-L, L]`: images of uniform `t` panels.
    pub grid: Vec<f64>,
    pub phi: Vec<f64>,
    /// `phi'`, `phi''`, `phi'''` on `grid`.
    pub phi_derivs: [Vec<f64>; 3],
    h_t: f64,
    /// `x(t_j)` for `t_j = j h_t`, `j = 0..`.
    x_nodes: Vec<f64>,
    rule: (Vec<f64>, Vec<f64>),
}

/// `eta(t) = 1 - psi(t) = 1 / (1 + e^{2t})`.
fn eta_of_t(t: f64) -> f64 {
    if t > 0.0 {
        let e = (-2.0 * t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + (2.0 * t).exp())
    }
}

impl PNSolution {
    /// `dx/dt` at `t >= 0`.
    fn dxdt(&self, t: f64) -> f64 {
        dxdt(&self.gamma, self.alpha, self.tail_rate, t)
    }

    fn x_of_t(&self, t: f64) -> f64 {
        let j = ((t / self.h_t).floor() as usize).min(self.x_nodes.len() - 1);
        let t0 = j as f64 * self.h_t;
        if t == t0 {
            return self.x_nodes[j];
        }
        self.x_nodes[j] + linalg::gl_integrate(|s| self.dxdt(s), t0, t, &self.rule)
    }

    fn x_max(&self) -> f64 {
        *self.x_nodes.last().unwrap()
    }

    /// `t >= 0` with `x(t) = x`, for `0 <= x <= x_max`.
    fn t_of_x(&self, x: f64) -> f64 {
        let j = match self
            .x_nodes
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(j) => return j as f64 * self.h_t,
            Err(j) => j.max(1) - 1,
        };
        let (lo, hi) = (j as f64 * self.h_t, (j + 1) as f64 * self.h_t);
        let (x0, x1) = (self.x_nodes[j], self.x_nodes[(j + 1).min(self.x_nodes.len() - 1)]);
        let mut t = if x1 > x0 {
            lo + (x - x0) / (x1 - x0) * self.h_t
        } else {
            lo
        };
        let (mut a, mut b) = (lo, hi);
        for _ in 0..60 {
            let f = self.x_of_t(t) - x;
            if f > 0.0 {
                b = t;
            } else {
                a = t;
            }
            let mut next = t - f / self.dxdt(t);
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            let done = (next - t).abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0);
            t = next;
            if done {
                break;
            }
        }
        t
    }

    /// `1 - phi(x)` for `x >= 0`, accurate in the far tail.
    fn eta_right(&self, x: f64) -> f64 {
        let xm = self.x_max();
        if x <= xm {
            eta_of_t(self.t_of_x(x))
        } else {
            let tm = (self.x_nodes.len() - 1) as f64 * self.h_t;
            eta_of_t(tm) * (-self.tail_rate * (x - xm)).exp()
        }
    }

    /// Returns `(phi, min(phi, 1 - phi))` at `x`; the second value carries
    /// full relative precision in both tails.
    fn phi_and_gap(&self, x: f64) -> (f64, f64) {
        let e = self.eta_right(x.abs());
        if x >= 0.0 {
            (1.0 - e, e)
        } else {
            (e, e)
        }
    }

    pub fn phi_at(&self, x: f64) -> f64 {
        self.phi_and_gap(x).0
    }

    /// `phi(x)` for `x < 0` and `1 - phi(x)` for `x >= 0`, without
    /// cancellation.
    pub fn distance_to_well(&self, x: f64) -> f64 {
        self.phi_and_gap(x).1
    }

    /// `phi^(k)(x)` for `k = 0..=3`, using the first integral and its
    /// derivatives.
    pub fn phi_deriv(&self, k: usize, x: f64) -> f64 {
        let (phi, gap) = self.phi_and_gap(x);
        let g = &self.gamma;
        let d1 = (4.0 * g.value(gap) / self.alpha).sqrt();
        match k {
            0 => phi,
            1 => d1,
            2 => 2.0 * g.d(1, phi) / self.alpha,
            _ => 2.0 * g.d(2, phi) * d1 / self.alpha,
        }
    }

    /// `v(x) = (phi(x)/2, -phi(x)/2)`.
    pub fn displacement(&self, x: f64) -> (f64, f64) {
        let p = self.phi_at(x);
        (0.5 * p, -0.5 * p)
    }

    /// Residual of `alpha/4 phi'^2 = gamma(phi)` on the grid, with `phi'`
    /// taken as the reciprocal of the quadrature integrand `dx/dphi`.
    pub fn first_integral_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (j, x) in self.grid.iter().enumerate() {
            let t = self.t_of_x(x.abs());
            let eta = eta_of_t(t);
            let dpsi_dt = 2.0 * eta * (1.0 - eta);
            let dphi_dx = dpsi_dt / self.dxdt(t);
            let lhs = 0.25 * self.alpha * dphi_dx * dphi_dx;
            let rhs = self.gamma.value(self.phi[j].min(1.0 - self.phi[j]));
            worst = worst.max((lhs - rhs).abs());
        }
        worst
    }
}

fn dxdt(g: &GammaSurface, alpha: f64, mu: f64, t: f64) -> f64 {
    let eta = eta_of_t(t);
    if eta < 1e-280 {
        return 2.0 / mu;
    }
    let gam = g.value(eta);
    2.0 * eta * (1.0 - eta) / (4.0 * gam / alpha).sqrt()
}

/// Solves the separable problem on `[0, L]` (and by symmetry `[-L, 0]`).
pub fn solve_pn(g: &GammaSurface, alpha: f64, l: f64, tol: f64) -> Result<PNSolution> {
    if !(alpha > 0.0) || !(g.gamma2_at_0 > 0.0) || !(tol > 0.0) || !(l > 0.0) {
        return Err(Error::Stability(format!(
            "PN solve needs alpha > 0, gamma''(0) > 0, L > 0 and tol > 0 \
             (alpha={alpha}, gamma''(0)={}, L={l}, tol={tol})",
            g.gamma2_at_0
        )));
    }
    let n = g.grid_size();
    let peak = g.values.iter().fold(0.0f64, |m, v| m.max(*v));
    for (j, v) in g.values.iter().enumerate().skip(1) {
        if *v <= 1e-14 * peak {
            return Err(Error::SingularGamma(j as f64 / n as f64));
        }
    }
    let mu = (2.0 * g.gamma2_at_0 / alpha).sqrt();
    let rule = linalg::gauss_legendre(PANEL_NODES);
    let check = linalg::gauss_legendre(CHECK_NODES);

    let mut h_t = 0.1;
    loop {
        let mut x_nodes = vec![0.0];
        let mut err_est = 0.0;
        let mut j = 0usize;
        while *x_nodes.last().unwrap() < l {
            let (a, b) = (j as f64 * h_t, (j + 1) as f64 * h_t);
            let f = |t: f64| dxdt(g, alpha, mu, t);
            let fine = linalg::gl_integrate(f, a, b, &rule);
            let coarse = linalg::gl_integrate(f, a, b, &check);
            err_est += (fine - coarse).abs();
            x_nodes.push(x_nodes[j] + fine);
            j += 1;
            if j > 1_000_000 {
                return Err(Error::convergence("solve_pn", "quadrature range does not reach L"));
            }
        }
        // The integrand is analytic, so the 12-node panel error is far below
        // the 8-node estimate; scale by the characteristic size of x.
        if err_est > tol * l.max(1.0) {
            if h_t < 1e-3 {
                return Err(Error::Tolerance {
                    stage: "solve_pn quadrature".into(),
                    achieved: err_est,
                    requested: tol,
                });
            }
            h_t *= 0.5;
            continue;
        }
        let mut sol = PNSolution {
            gamma: g.clone(),
            alpha,
            l,
            tail_rate: mu,
            tol,
            grid: Vec::new(),
            phi: Vec::new(),
            phi_derivs: [Vec::new(), Vec::new(), Vec::new()],
            h_t,
            x_nodes,
            rule,
        };
        let pos: Vec<f64> = sol
            .x_nodes
            .iter()
            .cloned()
            .filter(|x| *x > 0.0 && *x < l)
            .chain(std::iter::once(l))
            .collect();
        let grid: Vec<f64> = pos
            .iter()
            .rev()
            .map(|x| -x)
            .chain(std::iter::once(0.0))
            .chain(pos.iter().cloned())
            .collect();
        sol.phi = grid.iter().map(|&x| sol.phi_at(x)).collect();
        sol.phi_derivs = [1, 2, 3].map(|k| grid.iter().map(|&x| sol.phi_deriv(k, x)).collect());
        sol.grid = grid;
        let fi = sol.first_integral_residual();
        if fi > tol {
            return Err(Error::Tolerance {
                stage: "solve_pn first integral".into(),
                achieved: fi,
                requested: tol,
            });
        }
        return Ok(sol);
    }
}

/// Energy by quadrature of `alpha/4 phi'^2 + gamma(phi)` over `[-L, L]`
/// plus the linearised tails, checked against `int_0^1 sqrt(alpha gamma)`.
pub fn pn_energy(sol: &PNSolution) -> Result<f64> {
    let rule = linalg::gauss_legendre(16);
    let integrand = |x: f64| {
        let d1 = sol.phi_deriv(1, x);
        0.25 * sol.alpha * d1 * d1 + sol.gamma.value(sol.distance_to_well(x))
    };
    let mut half = 0.0;
    let pos: Vec<f64> = sol.grid.iter().cloned().filter(|x| *x >= 0.0).collect();
    for w in pos.windows(2) {
        half += linalg::gl_integrate(integrand, w[0], w[1], &rule);
    }
    let eta_l = sol.distance_to_well(sol.l);
    let tail = sol.gamma.gamma2_at_0 * eta_l * eta_l / (2.0 * sol.tail_rate);
    let quad = 2.0 * (half + tail);
    let equi = pn_energy_equipartition(sol);
    if (quad - equi).abs() > 10.0 * sol.tol {
        return Err(Error::Tolerance {
            stage: "pn_energy cross-check".into(),
            achieved: (quad - equi).abs(),
            requested: 10.0 * sol.tol,
        });
    }
    Ok(quad)
}

/// `int_0^1 sqrt(alpha gamma(phi)) dphi`.
pub fn pn_energy_equipartition(sol: &PNSolution) -> f64 {
    let rule = linalg::gauss_legendre(24);
    let f = |p: f64| (sol.alpha * sol.gamma.value(p)).sqrt();
    let panels = 8;
    let mut acc = 0.0;
    for j in 0..panels {
        let a = 0.5 * j as f64 / panels as f64;
        let b = 0.5 * (j + 1) as f64 / panels as f64;
        acc += linalg::gl_integrate(f, a, b, &rule);
    }
    2.0 * acc
}

/// Sup over a uniform `n`-point grid on `[-L, L]` of
/// `|-alpha/2 phi'' + gamma'(phi)|`, with `phi''` from sixth-order central
/// differences of `profile`.
pub fn el_residual_of(
    profile: impl Fn(f64) -> f64,
    gamma: &GammaSurface,
    alpha: f64,
    l: f64,
    n: usize,
) -> f64 {
    const C: [f64; 4] = [-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0];
    let h = 2.0 * l / (n - 1) as f64;
    let vals: Vec<f64> = (0..n).map(|j| profile(-l + j as f64 * h)).collect();
    let mut worst = 0.0f64;
    for j in 3..n.saturating_sub(3) {
        let mut d2 = C[0] * vals[j];
        for m in 1..4 {
            d2 += C[m] * (vals[j + m] + vals[j - m]);
        }
        d2 /= h * h;
        let r = -0.5 * alpha * d2 + gamma.d(1, vals[j]);
        worst = worst.max(r.abs());
    }
    worst
}

pub fn el_residual(sol: &PNSolution, n: usize) -> f64 {
    el_residual_of(|x| sol.phi_at(x), &sol.gamma, sol.alpha, sol.l, n)
}

/// The translation mode sampled on a uniform grid, with the residual of the
/// discretised second variation applied to it.
#[derive(Debug, Clone)]
pub struct ZeroMode {
    pub x: Vec<f64>,
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
    /// `||L_h f|| / (||alpha D_h^2 f|| + ||gamma'' f_perp||)` over interior
    /// nodes, both layers.
    pub relative_residual: f64,
}

pub fn zero_mode(sol: &PNSolution, h: f64) -> ZeroMode {
    let m = (sol.l / h).floor() as i64;
    let x: Vec<f64> = (-m..=m).map(|j| j as f64 * h).collect();
    let f_plus: Vec<f64> = x.iter().map(|&xi| 0.5 * sol.phi_deriv(1, xi)).collect();
    let f_minus: Vec<f64> = f_plus.iter().map(|v| -v).collect();
    let (mut res, mut ela, mut mis) = (0.0, 0.0, 0.0);
    for j in 1..x.len() - 1 {
        let g2 = sol.gamma.d(2, sol.phi_at(x[j]));
        let perp = f_plus[j] - f_minus[j];
        for (f, sign) in [(&f_plus, 1.0), (&f_minus, -1.0)] {
            let lap = sol.alpha * (f[j + 1] - 2.0 * f[j] + f[j - 1]) / (h * h);
            let jump = sign * g2 * perp;
            res += (-lap + jump).powi(2);
            ela += lap * lap;
            mis += jump * jump;
        }
    }
    ZeroMode {
        x,
        f_plus,
        f_minus,
        relative_residual: res.sqrt() / (ela.sqrt() + mis.sqrt()),
    }
}

/// Coercivity estimate of the second variation at the PN solution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KappaReport {
    pub kappa: f64,
    /// Smallest eigenvalue restricted to the jump mode `f+ - f-`.
    pub jump_mode: f64,
    /// Eigenvalue of the mean mode `f+ + f-`, which is `alpha` exactly.
    pub mean_mode: f64,
    pub n: usize,
    pub l: f64,
    pub residual: f64,
}

/// Assembles the forms of the jump mode `d = f+ - f-` on `n` uniform cells
/// of `[-L, L]`. With `s = f+ + f-` the second variation splits as
/// `alpha/2 (|s'|^2 + |d'|^2) + gamma''(phi) d^2` against the Gram form
/// `1/2 (|s'|^2 + |d'|^2) + d^2`, so the mean mode contributes exactly
/// `alpha` and the jump mode carries the rest.
pub fn jump_mode_forms(sol: &PNSolution, n: usize, pinned: bool) -> (BandSym, BandSym) {
    assert!(n >= 4 && n % 2 == 0, "grid size must be even");
    let h = 2.0 * sol.l / n as f64;
    let centre = n / 2;
    let map = |j: usize| -> Option<usize> {
        if pinned {
            match j.cmp(&centre) {
                std::cmp::Ordering::Less => Some(j),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(j - 1),
            }
        } else {
            Some(j)
        }
    };
    let dim = if pinned { n } else { n + 1 };
    let mut a = BandSym::zeros(dim, 1);
    let mut b = BandSym::zeros(dim, 1);
    for j in 0..=n {
        let x = -sol.l + j as f64 * h;
        let w = if j == 0 || j == n { 0.5 * h } else { h };
        if let Some(p) = map(j) {
            let g2 = sol.gamma.d(2, sol.phi_at(x));
            a.add(p, p, w * g2);
            b.add(p, p, w);
        }
        if j < n {
            // cell (j, j+1): (d_{j+1} - d_j)^2 / h, weights alpha/2 and 1/2
            let (p, q) = (map(j), map(j + 1));
            for i in [p, q].into_iter().flatten() {
                a.add(i, i, 0.5 * sol.alpha / h);
                b.add(i, i, 0.5 / h);
            }
            if let (Some(i), Some(k)) = (p, q) {
                a.add(k, i, -0.5 * sol.alpha / h);
                b.add(k, i, -0.5 / h);
            }
        }
    }
    (a, b)
}

pub fn pn_stability_kappa(sol: &PNSolution, n: usize) -> Result<KappaReport> {
    pn_stability(sol, n, true)
}

/// Smallest generalised eigenvalue; with `pinned = false` the translation
/// mode is admitted and the value collapses towards zero.
pub fn pn_stability(sol: &PNSolution, n: usize, pinned: bool) -> Result<KappaReport> {
    let (a, b) = jump_mode_forms(sol, n, pinned);
    let eig = linalg::smallest_generalized_eig(&a, &b, -0.1 * sol.alpha, 300, 1e-12, 11)?;
    Ok(KappaReport {
        kappa: eig.value.min(sol.alpha),
        jump_mode: eig.value,
        mean_mode: sol.alpha,
        n,
        l: sol.l,
        residual: eig.residual,
    })
}
