//! Small numerical kernels shared by the solvers: symmetric band matrices
//! with Cholesky, preconditioned conjugate gradients, shift-invert Lanczos
//! for the generalized problem `H x = lambda G x`, Gauss-Legendre rules and
//! scalar root/extremum finders.

use crate::error::{Error, Result};

/// Symmetric matrix with half-bandwidth `b`; only the lower band is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSym {
    n: usize,
    b: usize,
    data: Vec<f64>,
}

impl BandSym {
    pub fn zeros(n: usize, b: usize) -> Self {
        Self {
            n,
            b,
            data: vec![0.0; n * (b + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.b, "entry ({i},{j}) outside band {}", self.b);
        i * (self.b + 1) + (i - j)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.b {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)` (and by symmetry `(j, i)`). Diagonal
    /// entries receive `v` once.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// `self + c * other` for matrices of equal size; the result has the
    /// larger bandwidth.
    pub fn add_scaled(&self, c: f64, other: &BandSym) -> BandSym {
        assert_eq!(self.n, other.n);
        let b = self.b.max(other.b);
        let mut out = BandSym::zeros(self.n, b);
        for m in [(1.0, self), (c, other)] {
            let (w, src) = m;
            for i in 0..src.n {
                for d in 0..=src.b.min(i) {
                    let v = src.data[i * (src.b + 1) + d];
                    if v != 0.0 {
                        out.add(i, i - d, w * v);
                    }
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        let w = self.b + 1;
        for i in 0..self.n {
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = row[0] * x[i];
            let xi = x[i];
            for d in 1..=self.b.min(i) {
                let a = row[d];
                let j = i - d;
                acc += a * x[j];
                y[j] += a * xi;
            }
            y[i] += acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Banded Cholesky `A = L L^T`. Fails if a pivot is not positive.
    pub fn cholesky(&self) -> Result<BandChol> {
        let n = self.n;
        let b = self.b;
        let w = b + 1;
        let mut l = self.data.clone();
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..=i {
                let mut sum = l[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(b));
                for k in k0..j {
                    sum -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::convergence(
                            "band Cholesky",
                            format!("non-positive pivot {sum:e} at row {i}"),
                        ));
                    }
                    l[i * w] = sum.sqrt();
                } else {
                    l[i * w + (i - j)] = sum / l[j * w];
                }
            }
        }
        Ok(BandChol { n, b, l })
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

#[derive(Debug, Clone)]
pub struct BandChol {
    n: usize,
    b: usize,
    l: Vec<f64>,
}

impl BandChol {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let w = self.b + 1;
        for i in 0..self.n {
            let mut s = x[i];
            for d in 1..=self.b.min(i) {
                s -= self.l[i * w + d] * x[i - d];
            }
            x[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let s = x[i] / self.l[i * w];
            x[i] = s;
            for d in 1..=self.b.min(i) {
                x[i - d] -= self.l[i * w + d] * s;
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned CG for `A x = b` from `x = 0`, stopping when the
/// preconditioned residual norm drops below `rtol` times its initial value.
/// Reports non-positive curvature instead of continuing through it.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
    stage: &str,
) -> Result<CgOutcome> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut rz = dot(&r, &z);
    let rz0 = rz;
    if rz0 == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let curv = dot(&p, &ap);
        if curv <= 0.0 {
            return Err(Error::NonPositiveCurvature {
                stage: stage.to_string(),
                curvature: curv / dot(&p, &p),
            });
        }
        let a = rz / curv;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let rel = (rz_new.abs() / rz0).sqrt();
        if rel <= rtol {
            return Ok(CgOutcome {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::convergence(
        stage,
        format!("conjugate gradients did not reach {rtol:e} in {max_iter} iterations"),
    ))
}

/// An approximate eigenpair of `H x = lambda G x`.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    pub vector: Vec<f64>,
    /// `||H x - lambda G x|| / ||x||` in the Euclidean norm.
    pub residual: f64,
    pub iterations: usize,
}

/// Smallest eigenvalue of the pencil `(H, G)` (G positive definite) by
/// Lanczos on `(H - sigma G)^{-1} G` in the `G` inner product, with full
/// reorthogonalisation. `sigma` must lie below the spectrum.
pub fn smallest_generalized_eig(
    h: &BandSym,
    g: &BandSym,
    sigma: f64,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<EigPair> {
    let n = h.dim();
    assert_eq!(g.dim(), n);
    let shifted = h.add_scaled(-sigma, g).cholesky().map_err(|_| {
        Error::convergence(
            "shift-invert Lanczos",
            format!("H - sigma G is not positive definite for sigma = {sigma:e}"),
        )
    })?;
    let op = |x: &[f64]| shifted.solve(&g.mul(x));
    let gdot = |a: &[f64], b: &[f64]| dot(a, &g.mul(b));

    // Deterministic smooth-plus-noise start vector.
    let mut state = seed ^ 0x9E37_79B9_7F4A_7C15;
    let mut q: Vec<f64> = (0..n)
        .map(|i| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let noise = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            1.0 + 0.1 * ((i as f64) * 0.37).sin() + 0.5 * noise
        })
        .collect();
    let nq = gdot(&q, &q).sqrt();
    q.iter_mut().for_each(|v| *v /= nq);

    let m = max_iter.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alphas = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for j in 0..m {
        basis.push(q.clone());
        let mut w = op(&q);
        let a = gdot(&q, &w);
        alphas.push(a);
        for _ in 0..2 {
            let gw = g.mul(&w);
            let coeffs: Vec<f64> = basis.iter().map(|v| dot(v, &gw)).collect();
            for (c, v) in coeffs.iter().zip(&basis) {
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
        }
        let beta = gdot(&w, &w).sqrt();
        // Ritz values of the current tridiagonal matrix.
        let k = alphas.len();
        let t = nalgebra::DMatrix::from_fn(k, k, |r, c| {
            if r == c {
                alphas[r]
            } else if r + 1 == c {
                betas[r]
            } else if c + 1 == r {
                betas[c]
            } else {
                0.0
            }
        });
        let eig = nalgebra::SymmetricEigen::new(t);
        let (imax, theta) = eig
            .eigenvalues
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let s = eig.eigenvectors.column(imax);
        let ritz_res = beta * s[k - 1].abs();
        let converged = ritz_res <= tol * theta.abs() || beta < 1e-300 || j + 1 == m;
        if converged {
            let mut y = vec![0.0; n];
            for (c, v) in s.iter().zip(&basis) {
                y.iter_mut().zip(v).for_each(|(yi, vi)| *yi += c * vi);
            }
            let lambda = sigma + 1.0 / theta;
            let hy = h.mul(&y);
            let gy = g.mul(&y);
            let res: Vec<f64> = hy.iter().zip(&gy).map(|(a, b)| a - lambda * b).collect();
            let residual = norm(&res) / norm(&y);
            best = Some((lambda, y));
            if ritz_res <= tol * theta.abs() || beta < 1e-300 {
                let (value, vector) = best.take().unwrap();
                return Ok(EigPair {
                    value,
                    vector,
                    residual,
                    iterations: j + 1,
                });
            }
            break;
        }
        betas.push(beta);
        q = w.iter().map(|v| v / beta).collect();
    }
    let detail = match best {
        Some((v, _)) => format!("Ritz value {v:e} not converged in {m} iterations"),
        None => "empty Krylov space".to_string(),
    };
    Err(Error::convergence("shift-invert Lanczos", detail))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pi = std::f64::consts::PI;
    for i in 0..n.div_ceil(2) {
        let mut z = (pi * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Integrates `f` over `[a, b]` with an `n`-point Gauss-Legendre rule whose
/// nodes and weights are supplied (on `[-1, 1]`).
pub fn gl_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(c + r * x))
        .sum::<f64>()
        * r
}

/// Root of `f` in `[a, b]` by bisection down to a short bracket, then
/// secant steps kept inside the bracket.
pub fn bisect_secant(f: impl Fn(f64) -> f64, a: f64, b: f64, xtol: f64) -> Option<f64> {
    let (mut lo, mut hi) = (a, b);
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let (mut x0, mut x1) = (lo, hi);
    let (mut f0, mut f1) = (f(x0), f(x1));
    for _ in 0..100 {
        if f1 == f0 {
            break;
        }
        let mut x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        if !(x2 > lo.min(hi) - 1e-3 && x2 < hi.max(lo) + 1e-3) {
            x2 = 0.5 * (lo + hi);
        }
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = f(x1);
        if (x1 - x0).abs() <= xtol * x1.abs().max(1.0) || f1 == 0.0 {
            break;
        }
    }
    Some(x1)
}

/// Maximiser of a unimodal `f` on `[a, b]` by golden-section search.
pub fn golden_max(f: impl Fn(f64) -> f64, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (a, b);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > xtol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize, shift: f64) -> BandSym {
        let mut a = BandSym::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0 + shift);
            if i + 1 < n {
                a.add(i + 1, i, -1.0);
            }
        }
        a
    }

    #[test]
    fn cholesky_solves_banded_system() {
        let n = 50;
        let mut a = BandSym::zeros(n, 3);
        for i in 0..n {
            a.add(i, i, 10.0 + i as f64 * 0.1);
            for d in 1..=3 {
                if i >= d {
                    a.add(i, i - d, 1.0 / (d as f64 + 1.0));
                }
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let b = a.mul(&x);
        let y = a.cholesky().unwrap().solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-12);
        }
        let dense = a.to_dense();
        let bd = &dense * nalgebra::DVector::from_column_slice(&x);
        for i in 0..n {
            assert!((bd[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pcg_converges_and_flags_indefinite() {
        let a = laplacian(40, 0.01);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let out = pcg(|x, y| a.matvec(x, y), |r| r.to_vec(), &b, 1e-12, 500, "t").unwrap();
        let r = a.mul(&out.x);
        for i in 0..40 {
            assert!((r[i] - b[i]).abs() < 1e-9);
        }
        let neg = laplacian(40, -3.0);
        let res = pcg(|x, y| neg.matvec(x, y), |r| r.to_vec(), &b, 1e-12, 500, "t");
        assert!(matches!(res, Err(Error::NonPositiveCurvature { .. })));
    }

    #[test]
    fn lanczos_matches_dense_generalized() {
        let n = 60;
        let h = laplacian(n, 0.05);
        let mut g = BandSym::zeros(n, 1);
        for i in 0..n {
            g.add(i, i, 1.0 + 0.5 * (i as f64 * 0.2).sin().abs());
        }
        let eig = smallest_generalized_eig(&h, &g, -0.1, 200, 1e-13, 7).unwrap();
        // Dense oracle: G^{-1/2} H G^{-1/2} (G diagonal).
        let hd = h.to_dense();
        let gs: Vec<f64> = (0..n).map(|i| g.get(i, i).sqrt()).collect();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| hd[(i, j)] / (gs[i] * gs[j]));
        let lmin = nalgebra::SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!((eig.value - lmin).abs() < 1e-10 * lmin.abs().max(1.0));
        assert!(eig.residual < 1e-8);
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let rule = gauss_legendre(8);
        let v = gl_integrate(|x| x.powi(15) + x.powi(14), 0.0, 1.0, &rule);
        assert!((v - (1.0 / 16.0 + 1.0 / 15.0)).abs() < 1e-14);
        let s: f64 = rule.1.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_solvers() {
        let r = bisect_secant(|x| x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        let (x, fx) = golden_max(|x| -(x - 0.3) * (x - 0.3) + 1.0, 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!((fx - 1.0).abs() < 1e-14);
    }
}
