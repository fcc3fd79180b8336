//! The rescaled atomistic energy of the bilayer, its derivatives, the
//! discrete energy norm, and relaxation to the atomistic dislocation.
//!
//! Layout. Active atoms carry indices `i = -N..=N` in both layers; beyond
//! them `S` frozen atoms per side hold the clamp values, where `S` is the
//! larger interaction range of the two potentials. Degrees of freedom are
//! interleaved as `2 (i + N) + layer`, with layer 0 the upper (`+`) chain.
//!
//! The energy is written as a sum over interacting pairs, each counted
//! once:
//! - intra-layer pairs `(i, i + s)`, `1 <= s <= S_V`, weight `1/eps`,
//!   argument `s + u_{i+s} - u_i`;
//! - inter-layer pairs `(+j, -i)`, `s = j - i` in `[1 - S_U, S_U]`, weight
//!   `eps`, argument `s - 1/2 + u+_j - u-_i`.
//!
//! A pair enters when at least one of its atoms is active. Frozen-frozen
//! pairs only add a constant.

use crate::error::{Error, Result};
use crate::linalg::{self, BandChol, BandSym};
use crate::pn::PNSolution;
use crate::potentials::PairPotential;

/// Far-field values `(u+, u-)` of the frozen atoms on each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamp {
    pub left: (f64, f64),
    pub right: (f64, f64),
}

impl Clamp {
    /// One dislocation: slip 0 on the left, 1 on the right.
    pub const DISLOCATION: Clamp = Clamp {
        left: (0.0, 0.0),
        right: (0.5, -0.5),
    };
    pub const PERFECT: Clamp = Clamp {
        left: (0.0, 0.0),
        right: (0.0, 0.0),
    };
}

/// Displacements of the active window `i = -N..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub eps: f64,
    pub n: usize,
    pub u_plus: Vec<f64>,
    pub u_minus: Vec<f64>,
    pub clamp: Clamp,
}

impl LatticeState {
    pub fn new(eps: f64, n: usize, clamp: Clamp) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
        }
        if n == 0 {
            return Err(Error::Domain("window half-width N must be positive".into()));
        }
        Ok(Self {
            eps,
            n,
            u_plus: vec![0.0; 2 * n + 1],
            u_minus: vec![0.0; 2 * n + 1],
            clamp,
        })
    }

    /// Array position of atom `i`.
    #[inline]
    pub fn idx(&self, i: i64) -> usize {
        (i + self.n as i64) as usize
    }

    pub fn plus(&self, i: i64) -> f64 {
        self.u_plus[self.idx(i)]
    }

    pub fn minus(&self, i: i64) -> f64 {
        self.u_minus[self.idx(i)]
    }

    /// `u+_i - u-_i` over the window.
    pub fn disregistry(&self) -> Vec<f64> {
        self.u_plus.iter().zip(&self.u_minus).map(|(p, m)| p - m).collect()
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        let n = self.n as i64;
        -n..=n
    }

    /// `self - other` as a perturbation field.
    pub fn diff(&self, other: &LatticeState) -> PerturbationField {
        assert_eq!(self.n, other.n);
        PerturbationField {
            f_plus: self.u_plus.iter().zip(&other.u_plus).map(|(a, b)| a - b).collect(),
            f_minus: self.u_minus.iter().zip(&other.u_minus).map(|(a, b)| a - b).collect(),
        }
    }

    /// Interleaved degree-of-freedom vector.
    pub fn to_dofs(&self) -> Vec<f64> {
        interleave(&self.u_plus, &self.u_minus)
    }

    pub fn add_dofs(&mut self, x: &[f64], scale: f64) {
        for k in 0..self.u_plus.len() {
            self.u_plus[k] += scale * x[2 * k];
            self.u_minus[k] += scale * x[2 * k + 1];
        }
    }
}

fn interleave(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).flat_map(|(x, y)| [*x, *y]).collect()
}

/// A displacement increment over the window; entries outside it are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationField {
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
}

impl PerturbationField {
    pub fn zeros(n: usize) -> Self {
        Self {
            f_plus: vec![0.0; 2 * n + 1],
            f_minus: vec![0.0; 2 * n + 1],
        }
    }

    pub fn from_dofs(x: &[f64]) -> Self {
        Self {
            f_plus: x.iter().step_by(2).cloned().collect(),
            f_minus: x.iter().skip(1).step_by(2).cloned().collect(),
        }
    }

    pub fn to_dofs(&self) -> Vec<f64> {
        interleave(&self.f_plus, &self.f_minus)
    }
}

/// `sqrt(eps sum (Df+)^2 + eps sum (Df-)^2 + eps sum (f+ - f-)^2)` with
/// `Df_i = (f_{i+1} - f_i) / eps` and `f = 0` outside the window.
pub fn x_eps_norm(f: &PerturbationField, eps: f64) -> f64 {
    let grad = |g: &[f64]| -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for v in g.iter().chain(std::iter::once(&0.0)) {
            let d = (v - prev) / eps;
            acc += d * d;
            prev = *v;
        }
        acc
    };
    let perp: f64 = f
        .f_plus
        .iter()
        .zip(&f.f_minus)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (eps * (grad(&f.f_plus) + grad(&f.f_minus) + perp)).sqrt()
}

/// The pair of potentials defining the atomistic energy.
#[derive(Debug, Clone)]
pub struct AtomisticModel {
    pub intra: PairPotential,
    pub inter: PairPotential,
}

/// One interacting pair: atoms `(layer, extended index)`.
#[derive(Clone, Copy)]
struct Pair {
    a: (usize, usize),
    b: (usize, usize),
    intra: bool,
    offset: f64,
}

impl AtomisticModel {
    pub fn new(intra: PairPotential, inter: PairPotential) -> Self {
        Self { intra, inter }
    }

    /// Width of the frozen shell.
    pub fn shells(&self) -> usize {
        self.intra.shells().max(self.inter.shells())
    }

    fn check(&self, st: &LatticeState) -> Result<()> {
        let s = self.shells();
        if s > st.n {
            return Err(Error::Window { s_max: s, n: st.n });
        }
        Ok(())
    }

    /// Interleaved bandwidth of the Hessian.
    pub fn bandwidth(&self) -> usize {
        2 * self.shells()
    }

    /// Displacements including the frozen shells, per layer.
    fn extended(&self, st: &LatticeState) -> [Vec<f64>; 2] {
        let s = self.shells();
        let build = |active: &[f64], l: f64, r: f64| -> Vec<f64> {
            let mut v = Vec::with_capacity(active.len() + 2 * s);
            v.extend(std::iter::repeat(l).take(s));
            v.extend_from_slice(active);
            v.extend(std::iter::repeat(r).take(s));
            v
        };
        [
            build(&st.u_plus, st.clamp.left.0, st.clamp.right.0),
            build(&st.u_minus, st.clamp.left.1, st.clamp.right.1),
        ]
    }

    /// Calls `f` on every pair with at least one active atom, in a fixed
    /// order.
    fn for_each_pair(&self, n: usize, mut f: impl FnMut(Pair)) {
        let s = self.shells();
        let len = 2 * n + 1 + 2 * s;
        let active = |k: usize| k >= s && k < s + 2 * n + 1;
        let sv = self.intra.shells();
        for layer in 0..2 {
            for ka in 0..len {
                for d in 1..=sv {
                    let kb = ka + d;
                    if kb >= len {
                        break;
                    }
                    if active(ka) || active(kb) {
                        f(Pair {
                            a: (layer, ka),
                            b: (layer, kb),
                            intra: true,
                            offset: d as f64,
                        });
                    }
                }
            }
        }
        let su = self.inter.shells() as i64;
        for ka in 0..len as i64 {
            for d in (1 - su)..=su {
                let kb = ka + d;
                if kb < 0 || kb >= len as i64 {
                    continue;
                }
                let (ka_u, kb_u) = (ka as usize, kb as usize);
                if active(ka_u) || active(kb_u) {
                    f(Pair {
                        a: (1, ka_u),
                        b: (0, kb_u),
                        intra: false,
                        offset: d as f64 - 0.5,
                    });
                }
            }
        }
    }

    #[inline]
    fn pot(&self, p: &Pair) -> &PairPotential {
        if p.intra {
            &self.intra
        } else {
            &self.inter
        }
    }

    #[inline]
    fn weight(&self, p: &Pair, eps: f64) -> f64 {
        if p.intra {
            1.0 / eps
        } else {
            eps
        }
    }

    /// Degree of freedom of an extended-index atom, if active.
    #[inline]
    fn dof(&self, n: usize, atom: (usize, usize)) -> Option<usize> {
        let s = self.shells();
        let (layer, k) = atom;
        if k >= s && k < s + 2 * n + 1 {
            Some(2 * (k - s) + layer)
        } else {
            None
        }
    }

    pub fn energy(&self, st: &LatticeState) -> Result<f64> {
        self.check(st)?;
        let x = self.extended(st);
        let mut e = 0.0;
        self.for_each_pair(st.n, |p| {
            let arg = p.offset + x[p.b.0][p.b.1] - x[p.a.0][p.a.1];
            let pot = self.pot(&p);
            e += self.weight(&p, st.eps) * (pot.d(0, arg) - pot.d(0, p.offset));
        });
        Ok(e)
    }

    /// Partial derivatives with respect to every active displacement,
    /// interleaved.
    pub fn gradient(&self, st: &LatticeState) -> Result<Vec<f64>> {
        self.check(st)?;
        let x = self.extended(st);
        let mut g = vec![0.0; 2 * (2 * st.n + 1)];
        self.for_each_pair(st.n, |p| {
            let arg = p.offset + x[p.b.0][p.b.1] - x[p.a.0][p.a.1];
            let c = self.weight(&p, st.eps) * self.pot(&p).d(1, arg);
            if let Some(j) = self.dof(st.n, p.b) {
                g[j] += c;
            }
            if let Some(j) = self.dof(st.n, p.a) {
                g[j] -= c;
            }
        });
        Ok(g)
    }

    /// Second variation applied to an interleaved vector, without forming
    /// the matrix.
    pub fn hess_vec(&self, st: &LatticeState, f: &[f64]) -> Result<Vec<f64>> {
        self.check(st)?;
        let x = self.extended(st);
        let mut y = vec![0.0; f.len()];
        self.for_each_pair(st.n, |p| {
            let arg = p.offset + x[p.b.0][p.b.1] - x[p.a.0][p.a.1];
            let c = self.weight(&p, st.eps) * self.pot(&p).d(2, arg);
            let (ja, jb) = (self.dof(st.n, p.a), self.dof(st.n, p.b));
            let fa = ja.map_or(0.0, |j| f[j]);
            let fb = jb.map_or(0.0, |j| f[j]);
            let t = c * (fb - fa);
            if let Some(j) = jb {
                y[j] += t;
            }
            if let Some(j) = ja {
                y[j] -= t;
            }
        });
        Ok(y)
    }

    /// The Hessian in band form over all active degrees of freedom.
    pub fn hessian(&self, st: &LatticeState) -> Result<BandSym> {
        self.check(st)?;
        let x = self.extended(st);
        let mut h = BandSym::zeros(2 * (2 * st.n + 1), self.bandwidth());
        self.for_each_pair(st.n, |p| {
            let arg = p.offset + x[p.b.0][p.b.1] - x[p.a.0][p.a.1];
            let c = self.weight(&p, st.eps) * self.pot(&p).d(2, arg);
            let (ja, jb) = (self.dof(st.n, p.a), self.dof(st.n, p.b));
            if let Some(a) = ja {
                h.add(a, a, c);
            }
            if let Some(b) = jb {
                h.add(b, b, c);
            }
            if let (Some(a), Some(b)) = (ja, jb) {
                h.add(a, b, -c);
            }
        });
        Ok(h)
    }
}

/// Matrix of the squared `X_eps` norm over all active degrees of freedom.
pub fn gram_matrix(n: usize, eps: f64) -> BandSym {
    let m = 2 * n + 1;
    let mut g = BandSym::zeros(2 * m, 2);
    let w = 1.0 / eps;
    for layer in 0..2 {
        for k in 0..m {
            let j = 2 * k + layer;
            // the two differences touching atom k
            g.add(j, j, 2.0 * w);
            if k + 1 < m {
                g.add(j + 2, j, -w);
            }
        }
    }
    for k in 0..m {
        let (p, q) = (2 * k, 2 * k + 1);
        g.add(p, p, eps);
        g.add(q, q, eps);
        g.add(q, p, -eps);
    }
    g
}

/// The admissible perturbation subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `f+_i = -f-_i = -f+_{-i}`, unknowns `f+_i` for `i > 0`.
    Symmetric,
    /// Every active atom except the pinned centre.
    Full,
    /// Every active atom, centre included.
    Unpinned,
}

/// A sparse basis `P` of the subspace selected by a [`Mode`]: column `c` is
/// a list of `(dof, coefficient)`.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub mode: Mode,
    cols: Vec<Vec<(usize, f64)>>,
    full_dim: usize,
    bandwidth: usize,
}

impl Reduction {
    pub fn new(mode: Mode, n: usize, shells: usize) -> Self {
        let full_dim = 2 * (2 * n + 1);
        let centre = n;
        let (cols, bandwidth) = match mode {
            Mode::Symmetric => {
                let cols = (1..=n)
                    .map(|i| {
                        let (r, l) = (centre + i, centre - i);
                        vec![(2 * r, 1.0), (2 * l, -1.0), (2 * r + 1, -1.0), (2 * l + 1, 1.0)]
                    })
                    .collect();
                (cols, shells.max(1))
            }
            Mode::Full => {
                let cols = (0..full_dim)
                    .filter(|j| j / 2 != centre)
                    .map(|j| vec![(j, 1.0)])
                    .collect();
                (cols, 2 * shells.max(1))
            }
            Mode::Unpinned => ((0..full_dim).map(|j| vec![(j, 1.0)]).collect(), 2 * shells.max(1)),
        };
        Self {
            mode,
            cols,
            full_dim,
            bandwidth,
        }
    }

    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    /// `P^T g`.
    pub fn restrict(&self, g: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|c| c.iter().map(|(j, w)| w * g[*j]).sum())
            .collect()
    }

    /// `P y`.
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.full_dim];
        for (c, yc) in self.cols.iter().zip(y) {
            for (j, w) in c {
                x[*j] += w * yc;
            }
        }
        x
    }

    /// `P^T A P` in band form.
    pub fn project(&self, a: &BandSym) -> BandSym {
        let m = self.dim();
        let b = self.bandwidth.min(m.saturating_sub(1));
        let mut out = BandSym::zeros(m, b);
        for c in 0..m {
            for d in c.saturating_sub(b)..=c {
                let mut v = 0.0;
                for (p, wp) in &self.cols[c] {
                    for (q, wq) in &self.cols[d] {
                        v += wp * wq * a.get(*p, *q);
                    }
                }
                if v != 0.0 {
                    out.add(c, d, v);
                }
            }
        }
        out
    }
}

/// Dual `X_eps` norm of an interleaved gradient over the subspace of
/// `red`, using a factorised projected Gram matrix.
pub fn dual_norm(red: &Reduction, gram: &BandChol, g_full: &[f64]) -> f64 {
    let r = red.restrict(g_full);
    let z = gram.solve(&r);
    linalg::dot(&r, &z).max(0.0).sqrt()
}

/// `u^±_i = v^±(eps i)` on `i = -N..=N` with the dislocation clamp.
pub fn sample_pn(sol: &PNSolution, eps: f64, n: usize) -> Result<LatticeState> {
    if eps * n as f64 > sol.l * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "window eps N = {} exceeds the PN domain L = {}",
            eps * n as f64,
            sol.l
        )));
    }
    let mut st = LatticeState::new(eps, n, Clamp::DISLOCATION)?;
    for i in -(n as i64)..=(n as i64) {
        let (p, m) = sol.displacement(eps * i as f64);
        let k = st.idx(i);
        st.u_plus[k] = p;
        st.u_minus[k] = m;
    }
    Ok(st)
}

/// Dual `X_eps` norm of the atomistic first variation at `v_sampled`,
/// restricted to `mode`.
pub fn consistency_residual(
    model: &AtomisticModel,
    v_sampled: &LatticeState,
    mode: Mode,
) -> Result<f64> {
    let red = Reduction::new(mode, v_sampled.n, model.shells());
    let gram = red.project(&gram_matrix(v_sampled.n, v_sampled.eps)).cholesky()?;
    let g = model.gradient(v_sampled)?;
    Ok(dual_norm(&red, &gram, &g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    NewtonCg,
    FixedPoint,
}

#[derive(Debug, Clone, Copy)]
pub struct RelaxOptions {
    pub solver: Solver,
    pub mode: Mode,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            solver: Solver::NewtonCg,
            mode: Mode::Symmetric,
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaxReport {
    pub state: LatticeState,
    pub iterations: usize,
    pub cg_iterations: usize,
    /// Dual `X_eps` norm of the gradient over the mode's subspace.
    pub grad_norm: f64,
    pub energy: f64,
}

/// Relaxes `st` within the subspace of `opts.mode` until the dual gradient
/// norm is at most `opts.tol`.
pub fn relax(model: &AtomisticModel, st: &LatticeState, opts: &RelaxOptions) -> Result<RelaxReport> {
    model.check(st)?;
    let red = Reduction::new(opts.mode, st.n, model.shells());
    let gram = red.project(&gram_matrix(st.n, st.eps)).cholesky()?;
    match opts.solver {
        Solver::NewtonCg => newton_cg(model, st, opts, &red, &gram),
        Solver::FixedPoint => fixed_point(model, st, opts, &red, &gram),
    }
}

fn newton_cg(
    model: &AtomisticModel,
    start: &LatticeState,
    opts: &RelaxOptions,
    red: &Reduction,
    gram: &BandChol,
) -> Result<RelaxReport> {
    let mut st = start.clone();
    let mut energy = model.energy(&st)?;
    let mut g_full = model.gradient(&st)?;
    let mut gnorm = dual_norm(red, gram, &g_full);
    let mut cg_total = 0;
    let mut stalled = 0;
    for it in 0..=opts.max_iter {
        if gnorm <= opts.tol {
            return Ok(RelaxReport {
                state: st,
                iterations: it,
                cg_iterations: cg_total,
                grad_norm: gnorm,
                energy,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let r = red.restrict(&g_full);
        let h = red.project(&model.hessian(&st)?);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let forcing = 0.1f64.min(gnorm.sqrt());
        let cg = linalg::pcg(
            |x, y| h.matvec(x, y),
            |x| gram.solve(x),
            &rhs,
            forcing,
            10 * red.dim().max(100),
            "Newton inner solve",
        )?;
        cg_total += cg.iterations;
        let step = red.lift(&cg.x);
        let slope = linalg::dot(&r, &cg.x);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = st.clone();
            trial.add_dofs(&step, t);
            let e_new = model.energy(&trial)?;
            let armijo = e_new <= energy + 1e-4 * t * slope;
            // Near the minimum the decrease drops below round-off in the
            // energy; fall back on the gradient norm there.
            let flat = (e_new - energy).abs() <= 1e-13 * energy.abs().max(1.0);
            let (g_new, gn_new) = if armijo || flat {
                let g = model.gradient(&trial)?;
                let n = dual_norm(red, gram, &g);
                (Some(g), n)
            } else {
                (None, f64::INFINITY)
            };
            if armijo || (flat && gn_new < gnorm) {
                // Accepted only on the gradient criterion with little
                // progress: the iteration sits on its round-off floor.
                if !armijo && gn_new > 0.9 * gnorm {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                st = trial;
                energy = e_new;
                g_full = g_new.unwrap();
                gnorm = gn_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if stalled >= 3 {
            return Err(Error::Tolerance {
                stage: "Newton-CG".into(),
                achieved: gnorm,
                requested: opts.tol,
            });
        }
        if !accepted {
            return Err(Error::convergence(
                "Newton line search",
                format!("no acceptable step at iteration {it}, gradient norm {gnorm:e}"),
            ));
        }
    }
    Err(Error::convergence(
        "Newton-CG",
        format!("gradient norm {gnorm:e} above {:e} after {} iterations", opts.tol, opts.max_iter),
    ))
}

/// Iterates `w <- -A_w^{-1} dE_a[v]` with `A_w = int_0^1 d2E_a[v + t w] dt`
/// by three-point Gauss quadrature; `v` is the starting state.
fn fixed_point(
    model: &AtomisticModel,
    v: &LatticeState,
    opts: &RelaxOptions,
    red: &Reduction,
    gram: &BandChol,
) -> Result<RelaxReport> {
    let rule = linalg::gauss_legendre(3);
    let nodes: Vec<(f64, f64)> = rule
        .0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    let g_v = red.restrict(&model.gradient(v)?);
    let rhs: Vec<f64> = g_v.iter().map(|x| -x).collect();
    let mut w = vec![0.0; red.dim()];
    let mut cg_total = 0;
    let mut gnorm = f64::INFINITY;
    for it in 0..opts.max_iter {
        let lifted = red.lift(&w);
        // The quadrature average of Hessians along v + t w, assembled once
        // per outer step; applying it equals averaging hess_vec products.
        let mut avg: Option<BandSym> = None;
        for (t, wq) in &nodes {
            let mut s = v.clone();
            s.add_dofs(&lifted, *t);
            let h = model.hessian(&s)?;
            avg = Some(match avg {
                None => BandSym::zeros(h.dim(), h.bandwidth()).add_scaled(*wq, &h),
                Some(a) => a.add_scaled(*wq, &h),
            });
        }
        let a = red.project(&avg.expect("three nodes"));
        let cg = linalg::pcg(
            |x, y| a.matvec(x, y),
            |x| gram.solve(x),
            &rhs,
            1e-13,
            10 * red.dim().max(100),
            "fixed-point inner solve",
        )?;
        cg_total += cg.iterations;
        w = cg.x;
        let mut st = v.clone();
        st.add_dofs(&red.lift(&w), 1.0);
        let g_full = model.gradient(&st)?;
        gnorm = dual_norm(red, gram, &g_full);
        if gnorm <= opts.tol {
            let energy = model.energy(&st)?;
            return Ok(RelaxReport {
                state: st,
                iterations: it + 1,
                cg_iterations: cg_total,
                grad_norm: gnorm,
                energy,
            });
        }
    }
    Err(Error::convergence(
        "fixed-point iteration",
        format!("gradient norm {gnorm:e} above {:e} after {} iterations", opts.tol, opts.max_iter),
    ))
}

/// `N = ceil(24 / (mu eps))`.
pub fn default_window(mu: f64, eps: f64) -> usize {
    (24.0 / (mu * eps)).ceil() as usize
}
