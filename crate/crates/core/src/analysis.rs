//! Stability gap, spectra and convergence studies built on the solvers.

use crate::error::{Error, Result};
use crate::gamma::GammaSurface;
use crate::lattice::{
    self, gram_matrix, AtomisticModel, Clamp, LatticeState, Mode, PerturbationField, Reduction,
    RelaxOptions,
};
use crate::linalg;
use crate::pn::{self, PNSolution};
use crate::potentials::{elastic_alpha, PairPotential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    Fourier,
    Circulant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    /// `max(0, raw)`.
    pub delta: f64,
    /// Supremum of the symbol before clamping.
    pub raw: f64,
    /// Wavenumber in `[0, pi]` where the supremum is attained.
    pub k_star: f64,
    pub method: GapMethod,
    pub s_max: usize,
}

/// Symbol of (continuum minus atomistic) elastic forms per unit
/// `||Df||^2`:
/// `S(k) = sum_{s>=2} V''(s) [s^2 - sin^2(s k / 2) / sin^2(k / 2)]`,
/// given `curv[s-1] = V''(s)`.
pub fn gap_symbol(curv: &[f64], k: f64) -> f64 {
    let h = (0.5 * k).sin();
    let mut acc = 0.0;
    for (idx, c) in curv.iter().enumerate().skip(1).rev() {
        let s = (idx + 1) as f64;
        let fejer = if h.abs() < 1e-8 {
            // small-k expansion of sin^2(s k/2) / sin^2(k/2)
            s * s * (1.0 - (s * s - 1.0) * k * k / 12.0)
        } else {
            let q = (0.5 * s * k).sin() / h;
            q * q
        };
        acc += c * (s * s - fejer);
    }
    acc
}

fn curvatures(v: &PairPotential) -> Vec<f64> {
    (1..=v.shells()).map(|s| v.d(2, s as f64)).collect()
}

/// Gap from the Fourier symbol: 4096 samples of `[0, pi]` refined by
/// golden-section search around the best one.
pub fn delta_gap_from_curvatures(curv: &[f64]) -> GapReport {
    const SAMPLES: usize = 4096;
    let dk = PI / SAMPLES as f64;
    let (mut j_best, mut best) = (0usize, gap_symbol(curv, 0.0));
    for j in 1..=SAMPLES {
        let v = gap_symbol(curv, j as f64 * dk);
        if v > best {
            best = v;
            j_best = j;
        }
    }
    let lo = (j_best as f64 - 1.0).max(0.0) * dk;
    let hi = (j_best as f64 + 1.0).min(SAMPLES as f64) * dk;
    let (k_ref, v_ref) = linalg::golden_max(|k| gap_symbol(curv, k), lo, hi, 1e-12);
    let (k_star, raw) = if v_ref > best { (k_ref, v_ref) } else { (j_best as f64 * dk, best) };
    GapReport {
        delta: raw.max(0.0),
        raw,
        k_star,
        method: GapMethod::Fourier,
        s_max: curv.len(),
    }
}

pub fn delta_gap(v: &PairPotential) -> GapReport {
    delta_gap_from_curvatures(&curvatures(v))
}

/// The same form written out as a dense matrix on a periodic ring of `m`
/// sites in the difference variables `g = Df`, and its largest eigenvalue.
pub fn delta_gap_circulant_from_curvatures(curv: &[f64], m: usize) -> GapReport {
    let s_max = curv.len().min(m / 2 - 1);
    let mut c = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (idx, v2) in curv.iter().enumerate().take(s_max).skip(1) {
        let s = idx + 1;
        for i in 0..m {
            c[(i, i)] += v2 * (s * s) as f64;
            // - (sum_{j<s} g_{i+j})^2
            for a in 0..s {
                for b in 0..s {
                    c[((i + a) % m, (i + b) % m)] -= v2;
                }
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(c);
    let (jmax, raw) = eig
        .eigenvalues
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
    // Read the wavenumber off the eigenvector's dominant Fourier component.
    let vec = eig.eigenvectors.column(jmax);
    let (mut k_star, mut amp) = (0.0, -1.0);
    for q in 0..=m / 2 {
        let k = 2.0 * PI * q as f64 / m as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for i in 0..m {
            re += vec[i] * (k * i as f64).cos();
            im += vec[i] * (k * i as f64).sin();
        }
        let a = re * re + im * im;
        if a > amp {
            amp = a;
            k_star = k;
        }
    }
    GapReport {
        delta: raw.max(0.0),
        raw,
        k_star,
        method: GapMethod::Circulant,
        s_max,
    }
}

pub fn delta_gap_circulant(v: &PairPotential, m: usize) -> GapReport {
    delta_gap_circulant_from_curvatures(&curvatures(v), m)
}

/// Smallest eigenvalues of the second variations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Coercivity of the continuum second variation, if computed.
    pub lambda_min_pn: Option<f64>,
    pub lambda_min_atom: f64,
    /// `||H f - lambda G f|| / ||f||` for the atomistic pair.
    pub residual: f64,
    pub eps: f64,
    pub n: usize,
    /// Grid size used for the continuum eigenproblem.
    pub grid: Option<usize>,
    pub pinned: bool,
}

/// Smallest generalised eigenvalue of `(d2E_a[u], X_eps Gram)`, over fields
/// vanishing at `i = 0` when `pinned`.
pub fn atom_stability(model: &AtomisticModel, st: &LatticeState, pinned: bool) -> Result<StabilityReport> {
    let mode = if pinned { Mode::Full } else { Mode::Unpinned };
    let red = Reduction::new(mode, st.n, model.shells());
    let h = red.project(&model.hessian(st)?);
    let g = red.project(&gram_matrix(st.n, st.eps));
    let alpha = elastic_alpha(&model.intra)?.alpha;
    let eig = linalg::smallest_generalized_eig(&h, &g, -0.1 * alpha, 200, 1e-12, 7)?;
    Ok(StabilityReport {
        lambda_min_pn: None,
        lambda_min_atom: eig.value,
        residual: eig.residual,
        eps: st.eps,
        n: st.n,
        grid: None,
        pinned,
    })
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// 95% confidence interval of the slope (Student t).
    pub ci95: (f64, f64),
    pub points: usize,
}

pub fn loglog_fit(x: &[f64], y: &[f64]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let half = if n > 2 {
        let se = (sse / (nf - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, nf - 2.0)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::INFINITY);
        t * se
    } else {
        f64::INFINITY
    };
    Some(SlopeFit {
        slope,
        intercept,
        r2,
        ci95: (slope - half, slope + half),
        points: n,
    })
}

/// Everything a sweep needs besides the list of `eps`.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub model: AtomisticModel,
    pub gamma_grid: usize,
    pub pn_tol: f64,
    /// Continuum half-width; `None` means `max(20/mu, eps N)`.
    pub pn_l: Option<f64>,
    /// Window half-width; `None` means `ceil(24 / (mu eps))`.
    pub n: Option<usize>,
    pub relax: RelaxOptions,
    pub seed: u64,
    pub drift_samples: usize,
}

impl SweepConfig {
    pub fn new(model: AtomisticModel) -> Self {
        Self {
            model,
            gamma_grid: crate::gamma::DEFAULT_GRID,
            pn_tol: 1e-10,
            pn_l: None,
            n: None,
            relax: RelaxOptions::default(),
            seed: 1,
            drift_samples: 20,
        }
    }
}

/// The continuum side shared by all rows of a sweep.
#[derive(Debug, Clone)]
pub struct Continuum {
    pub gamma: GammaSurface,
    pub alpha: f64,
    pub mu: f64,
}

impl Continuum {
    pub fn new(cfg: &SweepConfig) -> Result<Self> {
        let alpha = elastic_alpha(&cfg.model.intra)?.alpha;
        let gamma = GammaSurface::new(
            crate::gamma::GammaSource::Potential(cfg.model.inter.clone()),
            alpha,
            cfg.gamma_grid,
        )?;
        if !(gamma.gamma2_at_0 > 0.0) {
            return Err(Error::Stability(format!(
                "gamma''(0) = {} must be positive",
                gamma.gamma2_at_0
            )));
        }
        let mu = (2.0 * gamma.gamma2_at_0 / alpha).sqrt();
        Ok(Self { gamma, alpha, mu })
    }

    pub fn window(&self, cfg: &SweepConfig, eps: f64) -> usize {
        cfg.n.unwrap_or_else(|| lattice::default_window(self.mu, eps))
    }

    pub fn solve(&self, cfg: &SweepConfig, eps: f64) -> Result<PNSolution> {
        let n = self.window(cfg, eps);
        let l = cfg.pn_l.unwrap_or(20.0 / self.mu).max(eps * n as f64);
        pn::solve_pn(&self.gamma, self.alpha, l, cfg.pn_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub n: usize,
    /// `||v^eps - v||_{X_eps}`.
    pub x_err: f64,
    /// `|E_PN[v] - E_a[v^eps]|`.
    pub e_gap: f64,
    pub consistency: f64,
    pub newton_iterations: usize,
    /// Set when a solver failed on this row; the numbers are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<SweepRow>,
    pub x_err_fit: Option<SlopeFit>,
    pub e_gap_fit: Option<SlopeFit>,
    pub consistency_fit: Option<SlopeFit>,
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::config("sweep.eps_list", "empty list"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("sweep.eps_list", "values must be strictly decreasing"));
    }
    if eps_list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::config("sweep.eps_list", "values must lie in (0, 1)"));
    }
    Ok(())
}

fn sweep_row(cfg: &SweepConfig, cont: &Continuum, eps: f64) -> Result<SweepRow> {
    let sol = cont.solve(cfg, eps)?;
    let e_pn = pn::pn_energy(&sol)?;
    let n = cont.window(cfg, eps);
    let v = lattice::sample_pn(&sol, eps, n)?;
    let consistency = lattice::consistency_residual(&cfg.model, &v, cfg.relax.mode)?;
    let rep = lattice::relax(&cfg.model, &v, &cfg.relax)?;
    Ok(SweepRow {
        eps,
        n,
        x_err: lattice::x_eps_norm(&rep.state.diff(&v), eps),
        e_gap: (e_pn - rep.energy).abs(),
        consistency,
        newton_iterations: rep.iterations,
        error: None,
    })
}

/// One row per `eps`, computed in parallel and returned in input order.
/// Failed rows are kept and flagged.
pub fn convergence_sweep(eps_list: &[f64], cfg: &SweepConfig) -> Result<ConvergenceTable> {
    check_eps_list(eps_list)?;
    let cont = Continuum::new(cfg)?;
    let rows: Vec<SweepRow> = eps_list
        .par_iter()
        .map(|&eps| {
            sweep_row(cfg, &cont, eps).unwrap_or_else(|e| SweepRow {
                eps,
                n: cont.window(cfg, eps),
                x_err: f64::NAN,
                e_gap: f64::NAN,
                consistency: f64::NAN,
                newton_iterations: 0,
                error: Some(e.to_string()),
            })
        })
        .collect();
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let col = |f: fn(&SweepRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    Ok(ConvergenceTable {
        x_err_fit: loglog_fit(&eps, &col(|r| r.x_err)),
        e_gap_fit: loglog_fit(&eps, &col(|r| r.e_gap)),
        consistency_fit: loglog_fit(&eps, &col(|r| r.consistency)),
        rows,
    })
}

/// A random smooth perturbation: a bump of half-width `w` times
/// `(x / w)` times a random trigonometric polynomial of degree 3,
/// independently per layer, scaled to unit `X_eps` norm. The factor `x`
/// makes the field vanish at the pinned centre.
pub fn random_field(n: usize, eps: f64, w: f64, centre: f64, rng: &mut impl Rng) -> PerturbationField {
    let mut coeffs = [[0.0f64; 6]; 2];
    for layer in coeffs.iter_mut() {
        for c in layer.iter_mut() {
            *c = rng.gen_range(-1.0..1.0);
        }
    }
    let mut f = PerturbationField::zeros(n);
    for (k, i) in (-(n as i64)..=(n as i64)).enumerate() {
        let x = eps * i as f64;
        let r = (x - centre) / w;
        let bump = if r.abs() < 1.0 { (-1.0 / (1.0 - r * r)).exp() } else { 0.0 };
        let vals = coeffs.map(|c| {
            (1..=3)
                .map(|m| {
                    let t = PI * m as f64 * r;
                    c[2 * (m - 1)] * t.cos() + c[2 * m - 1] * t.sin()
                })
                .sum::<f64>()
        });
        let base = bump * (x / w);
        f.f_plus[k] = base * vals[0];
        f.f_minus[k] = base * vals[1];
    }
    let nrm = lattice::x_eps_norm(&f, eps);
    if nrm > 0.0 {
        f.f_plus.iter_mut().for_each(|v| *v /= nrm);
        f.f_minus.iter_mut().for_each(|v| *v /= nrm);
    }
    f
}

/// `int (gamma''(phi(x)) - gamma''(0)) (fbar_perp)^2 dx` for the piecewise
/// linear interpolant of `f_perp` on the nodes `eps i`.
pub fn continuum_misfit_excess(sol: &PNSolution, f: &PerturbationField, eps: f64) -> f64 {
    let rule = linalg::gauss_legendre(4);
    let n = (f.f_plus.len() - 1) / 2;
    let perp: Vec<f64> = f.f_plus.iter().zip(&f.f_minus).map(|(a, b)| a - b).collect();
    let g0 = sol.gamma.gamma2_at_0;
    let mut acc = 0.0;
    // cells [eps i, eps (i+1)] for i = -N-1..=N, with zero outside the window
    let at = |k: i64| -> f64 {
        if k < 0 || k as usize >= perp.len() {
            0.0
        } else {
            perp[k as usize]
        }
    };
    for k in -1..=(2 * n as i64) {
        let (p0, p1) = (at(k), at(k + 1));
        if p0 == 0.0 && p1 == 0.0 {
            continue;
        }
        let x0 = eps * (k - n as i64) as f64;
        acc += linalg::gl_integrate(
            |x| {
                let t = (x - x0) / eps;
                let fb = p0 + t * (p1 - p0);
                (sol.gamma.d(2, sol.phi_at(x)) - g0) * fb * fb
            },
            x0,
            x0 + eps,
            &rule,
        );
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub eps: f64,
    pub n: usize,
    pub mean_abs_drift: f64,
    pub max_abs_drift: f64,
    /// Largest `|drift| / eps` over the samples.
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftTable {
    pub rows: Vec<DriftRow>,
    pub fit: Option<SlopeFit>,
}

/// Drift of the (atomistic minus continuum) second variation between the
/// dislocation and the perfect lattice, over random unit fields:
/// `[<H_a[v] f, f> - <H_a[0] f, f>] - int (gamma''(phi) - gamma''(0)) fbar_perp^2`.
/// The elastic parts of the continuum forms cancel exactly.
pub fn drift_of_field(
    model: &AtomisticModel,
    v: &LatticeState,
    sol: &PNSolution,
    f: &PerturbationField,
) -> Result<f64> {
    let x = f.to_dofs();
    let hv = model.hess_vec(v, &x)?;
    let zero = LatticeState::new(v.eps, v.n, Clamp::PERFECT)?;
    let h0 = model.hess_vec(&zero, &x)?;
    let atom = linalg::dot(&x, &hv) - linalg::dot(&x, &h0);
    Ok(atom - continuum_misfit_excess(sol, f, v.eps))
}

pub fn stability_gap_drift(eps_list: &[f64], cfg: &SweepConfig) -> Result<DriftTable> {
    check_eps_list(eps_list)?;
    let cont = Continuum::new(cfg)?;
    let rows: Result<Vec<DriftRow>> = eps_list
        .par_iter()
        .map(|&eps| {
            let sol = cont.solve(cfg, eps)?;
            let n = cont.window(cfg, eps);
            let v = lattice::sample_pn(&sol, eps, n)?;
            // the same fields at every eps: seed does not depend on eps
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let w = 6.0 / cont.mu;
            let mut drifts = Vec::with_capacity(cfg.drift_samples);
            for _ in 0..cfg.drift_samples {
                let f = random_field(n, eps, w, 0.0, &mut rng);
                drifts.push(drift_of_field(&cfg.model, &v, &sol, &f)?.abs());
            }
            let max = drifts.iter().cloned().fold(0.0, f64::max);
            Ok(DriftRow {
                eps,
                n,
                mean_abs_drift: drifts.iter().sum::<f64>() / drifts.len().max(1) as f64,
                max_abs_drift: max,
                max_ratio: max / eps,
            })
        })
        .collect();
    let rows = rows?;
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.mean_abs_drift).collect();
    Ok(DriftTable {
        fit: loglog_fit(&eps, &d),
        rows,
    })
}
