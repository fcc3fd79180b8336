//! Flat `section.key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown keys and duplicate keys are errors, so a typo never silently
//! falls back to a default.

use crate::analysis::SweepConfig;
use crate::error::{Error, Result};
use crate::gamma::{GammaSource, GammaSurface, GammaTrigFit, DEFAULT_GRID};
use crate::lattice::{AtomisticModel, Mode, RelaxOptions, Solver};
use crate::potentials::{elastic_alpha, PairPotential, DEFAULT_S_MAX};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// How the misfit surface is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaSpec {
    /// Lattice sum of the inter-layer potential.
    Potential,
    /// `A (1 - cos 2 pi phi)` with its own `alpha`.
    Sinusoidal { amplitude: f64, alpha: f64 },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub intra: PairPotential,
    pub inter: PairPotential,
    pub gamma: GammaSpec,
    pub gamma_grid: usize,
    pub pn_l: Option<f64>,
    pub pn_tol: f64,
    pub pn_grid: usize,
    pub eps: f64,
    pub n: Option<usize>,
    pub solver: Solver,
    pub mode: Mode,
    pub tol: f64,
    pub max_iter: usize,
    pub eps_list: Vec<f64>,
    pub seed: u64,
    pub drift_samples: usize,
    /// Fitted surface constants `c0..c3` and lattice constant `a`.
    pub fit_c: [f64; 4],
    pub fit_a: f64,
    pub c11: f64,
    pub output_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "potential.intra",
    "potential.inter",
    "potential.s_max",
    "gamma.source",
    "gamma.grid",
    "pn.L",
    "pn.tol",
    "pn.grid",
    "lattice.eps",
    "lattice.N",
    "lattice.s_max",
    "solver.mode",
    "solver.subspace",
    "solver.tol",
    "solver.max_iter",
    "sweep.eps_list",
    "drift.samples",
    "rng.seed",
    "epsilon.c0",
    "epsilon.c1",
    "epsilon.c2",
    "epsilon.c3",
    "epsilon.a",
    "epsilon.c11",
    "output.dir",
];

impl Default for RunConfig {
    fn default() -> Self {
        let g = GammaTrigFit::graphene();
        Self {
            intra: PairPotential::lennard_jones_calibrated(6.0, 12.0).expect("valid exponents"),
            inter: PairPotential::gaussian(1.0, 0.5).expect("valid parameters"),
            gamma: GammaSpec::Potential,
            gamma_grid: DEFAULT_GRID,
            pn_l: None,
            pn_tol: 1e-10,
            pn_grid: 1024,
            eps: 0.05,
            n: None,
            solver: Solver::NewtonCg,
            mode: Mode::Symmetric,
            tol: 1e-10,
            max_iter: 100,
            eps_list: vec![0.1, 0.05, 0.025, 0.0125],
            seed: 1,
            drift_samples: 20,
            fit_c: [g.c[0], g.c[1], g.c[2], g.c[3]],
            fit_a: g.a,
            c11: 312.67,
            output_dir: PathBuf::from("."),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| Error::config(key, format!("cannot parse `{v}` as a number")))
}

fn positive(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::config(key, format!("must be positive, got {x}")))
    }
}

/// Parses `lj m n [r0]`, `harmonic k0`, `gaussian amp width` or
/// `table <path>` (relative paths resolve against `base`).
pub fn parse_potential(key: &str, spec: &str, base: &Path) -> Result<PairPotential> {
    let words: Vec<&str> = spec.split_whitespace().collect();
    let wrap = |e: Error| match e {
        Error::Io { .. } => e,
        other => Error::config(key, other.to_string()),
    };
    let nums = |w: &[&str]| -> Result<Vec<f64>> { w.iter().map(|s| num::<f64>(key, s)).collect() };
    match words.split_first() {
        Some((&"lj", rest)) => match nums(rest)?.as_slice() {
            [m, n] => PairPotential::lennard_jones_calibrated(*m, *n).map_err(wrap),
            [m, n, r0] => PairPotential::lennard_jones(*m, *n, *r0).map_err(wrap),
            _ => Err(Error::config(key, "expected `lj m n [r0]`")),
        },
        Some((&"harmonic", rest)) => match nums(rest)?.as_slice() {
            [k0] => PairPotential::harmonic_nn(*k0).map_err(wrap),
            _ => Err(Error::config(key, "expected `harmonic k0`")),
        },
        Some((&"gaussian", rest)) => match nums(rest)?.as_slice() {
            [a, w] => PairPotential::gaussian(*a, *w).map_err(wrap),
            _ => Err(Error::config(key, "expected `gaussian amp width`")),
        },
        Some((&"table", [path])) => {
            let p = base.join(path);
            if !p.exists() {
                return Err(Error::Io {
                    path: p.display().to_string(),
                    detail: format!("table file referenced by `{key}` does not exist"),
                });
            }
            PairPotential::tabulated_from_csv(&p).map_err(wrap)
        }
        _ => Err(Error::config(
            key,
            format!("unknown potential `{spec}`; use lj, harmonic, gaussian or table"),
        )),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base)
    }

    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(&format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::config(k, "unknown key"));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::config(k, "key given twice"));
            }
        }
        let mut c = RunConfig::default();
        let s_max = match kv.get("potential.s_max").or(kv.get("lattice.s_max")) {
            Some(v) => {
                let s: usize = num("potential.s_max", v)?;
                if s == 0 {
                    return Err(Error::config("potential.s_max", "must be at least 1"));
                }
                s
            }
            None => DEFAULT_S_MAX,
        };
        if let Some(v) = kv.get("potential.intra") {
            c.intra = parse_potential("potential.intra", v, base)?;
        }
        if let Some(v) = kv.get("potential.inter") {
            c.inter = parse_potential("potential.inter", v, base)?;
        }
        c.intra = c.intra.with_s_max(s_max);
        c.inter = c.inter.with_s_max(s_max);
        if let Some(v) = kv.get("gamma.source") {
            let w: Vec<&str> = v.split_whitespace().collect();
            c.gamma = match w.as_slice() {
                ["potential"] => GammaSpec::Potential,
                ["sinusoidal", a, alpha] => GammaSpec::Sinusoidal {
                    amplitude: positive("gamma.source", a)?,
                    alpha: positive("gamma.source", alpha)?,
                },
                _ => {
                    return Err(Error::config(
                        "gamma.source",
                        "expected `potential` or `sinusoidal A alpha`",
                    ))
                }
            };
        }
        if let Some(v) = kv.get("gamma.grid") {
            c.gamma_grid = num("gamma.grid", v)?;
            if c.gamma_grid < 8 || c.gamma_grid % 2 != 0 {
                return Err(Error::config("gamma.grid", "must be even and at least 8"));
            }
        }
        if let Some(v) = kv.get("pn.L") {
            c.pn_l = Some(positive("pn.L", v)?);
        }
        if let Some(v) = kv.get("pn.tol") {
            c.pn_tol = positive("pn.tol", v)?;
        }
        if let Some(v) = kv.get("pn.grid") {
            c.pn_grid = num("pn.grid", v)?;
            if c.pn_grid < 4 || c.pn_grid % 2 != 0 {
                return Err(Error::config("pn.grid", "must be even and at least 4"));
            }
        }
        if let Some(v) = kv.get("lattice.eps") {
            c.eps = positive("lattice.eps", v)?;
            if c.eps >= 1.0 {
                return Err(Error::config("lattice.eps", "must lie in (0, 1)"));
            }
        }
        if let Some(v) = kv.get("lattice.N") {
            c.n = Some(num("lattice.N", v)?);
        }
        if let Some(v) = kv.get("solver.mode") {
            c.solver = match v.as_str() {
                "newton_cg" => Solver::NewtonCg,
                "fixed_point" => Solver::FixedPoint,
                _ => return Err(Error::config("solver.mode", "expected newton_cg or fixed_point")),
            };
        }
        if let Some(v) = kv.get("solver.subspace") {
            c.mode = match v.as_str() {
                "symmetric" => Mode::Symmetric,
                "full" => Mode::Full,
                _ => return Err(Error::config("solver.subspace", "expected symmetric or full")),
            };
        }
        if let Some(v) = kv.get("solver.tol") {
            c.tol = positive("solver.tol", v)?;
        }
        if let Some(v) = kv.get("solver.max_iter") {
            c.max_iter = num("solver.max_iter", v)?;
        }
        if let Some(v) = kv.get("sweep.eps_list") {
            c.eps_list = v
                .split(',')
                .map(|s| positive("sweep.eps_list", s.trim()))
                .collect::<Result<_>>()?;
            if c.eps_list.is_empty() || c.eps_list.iter().any(|e| *e >= 1.0) {
                return Err(Error::config("sweep.eps_list", "values must lie in (0, 1)"));
            }
            if c.eps_list.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::config("sweep.eps_list", "values must be strictly decreasing"));
            }
        }
        if let Some(v) = kv.get("drift.samples") {
            c.drift_samples = num("drift.samples", v)?;
        }
        if let Some(v) = kv.get("rng.seed") {
            c.seed = num("rng.seed", v)?;
        }
        for (j, key) in ["epsilon.c0", "epsilon.c1", "epsilon.c2", "epsilon.c3"].iter().enumerate() {
            if let Some(v) = kv.get(*key) {
                c.fit_c[j] = num(key, v)?;
            }
        }
        if let Some(v) = kv.get("epsilon.a") {
            c.fit_a = positive("epsilon.a", v)?;
        }
        if let Some(v) = kv.get("epsilon.c11") {
            c.c11 = positive("epsilon.c11", v)?;
        }
        if let Some(v) = kv.get("output.dir") {
            c.output_dir = base.join(v);
        }
        Ok(c)
    }

    pub fn model(&self) -> AtomisticModel {
        AtomisticModel::new(self.intra.clone(), self.inter.clone())
    }

    pub fn relax_options(&self) -> RelaxOptions {
        RelaxOptions {
            solver: self.solver,
            mode: self.mode,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let mut s = SweepConfig::new(self.model());
        s.gamma_grid = self.gamma_grid;
        s.pn_tol = self.pn_tol;
        s.pn_l = self.pn_l;
        s.n = self.n;
        s.relax = self.relax_options();
        s.seed = self.seed;
        s.drift_samples = self.drift_samples;
        s
    }

    /// The misfit surface and the elastic constant paired with it.
    pub fn gamma_surface(&self) -> Result<GammaSurface> {
        match &self.gamma {
            GammaSpec::Potential => {
                let alpha = elastic_alpha(&self.intra)?.alpha;
                GammaSurface::new(GammaSource::Potential(self.inter.clone()), alpha, self.gamma_grid)
            }
            GammaSpec::Sinusoidal { amplitude, alpha } => GammaSurface::new(
                GammaSource::Sinusoidal { amplitude: *amplitude },
                *alpha,
                self.gamma_grid,
            ),
        }
    }

    pub fn trig_fit(&self) -> Result<GammaTrigFit> {
        let [c0, c1, c2, c3] = self.fit_c;
        GammaTrigFit::new(c0, c1, c2, c3, self.fit_a).map_err(|e| Error::config("epsilon.c0", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse_str(
            "# comment\nlattice.eps = 0.1\nsolver.mode = fixed_point  # trailing\nsweep.eps_list = 0.2, 0.1\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.eps, 0.1);
        assert_eq!(c.solver, Solver::FixedPoint);
        assert_eq!(c.eps_list, vec![0.2, 0.1]);
        assert_eq!(c.mode, Mode::Symmetric);
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("lattice.epz = 0.1", "lattice.epz"),
            ("lattice.eps = abc", "lattice.eps"),
            ("sweep.eps_list = 0.1, 0.2", "sweep.eps_list"),
            ("potential.intra = morse 1 2", "potential.intra"),
            ("solver.tol = 1\nsolver.tol = 2", "solver.tol"),
        ] {
            match RunConfig::parse_str(text, Path::new(".")) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn missing_table_is_an_io_error() {
        let e = RunConfig::parse_str("potential.inter = table nowhere.csv", Path::new("/nonexistent"))
            .unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
        assert!(e.is_config_error());
    }
}
