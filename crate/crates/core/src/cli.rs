//! The `dislocore` command line: argument parsing, dispatch, artifacts.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 solver failure
//! (including a failed validation).

use crate::analysis::{self, Continuum};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gamma::{self, calibrate_epsilon};
use crate::lattice;
use crate::pn;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "dislocore", version, about = "Atomistic and Peierls-Nabarro bilayer dislocations")]
pub struct Cli {
    /// Run configuration (flat `key = value` file); built-in defaults if absent.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true, env = "DISLOCORE_THREADS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the misfit surface and check its structure.
    Gamma {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Solve the continuum problem: profile CSV and a JSON report.
    Pn {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Relax the atomistic dislocation at `lattice.eps`.
    Relax {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dump_grad: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Convergence table over `sweep.eps_list`, with fitted slopes.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also tabulate the second-variation drift.
        #[arg(long)]
        drift: Option<PathBuf>,
    },
    /// Stability gap of the intra-layer potential.
    Delta {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest eigenvalues of both second variations at `lattice.eps`.
    Stability {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Small parameter from the fitted surface constants and C11.
    EpsilonValidate {
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Entry point used by the binary and by tests. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                1
            } else {
                2
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::config("--jobs", "must be at least 1"));
        }
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let dir = cfg.output_dir.clone();
    let pick = |o: &Option<PathBuf>, name: &str| o.clone().unwrap_or_else(|| dir.join(name));
    match &cli.command {
        Command::Gamma { out, report } => cmd_gamma(&cfg, &pick(out, "gamma.csv"), &pick(report, "gamma.json")),
        Command::Pn { out, report } => cmd_pn(&cfg, &pick(out, "profile.csv"), &pick(report, "pn.json")),
        Command::Relax { out, dump_grad, report } => {
            cmd_relax(&cfg, &pick(out, "state.csv"), dump_grad.as_deref(), &pick(report, "relax.json"))
        }
        Command::Sweep { out, report, drift } => {
            cmd_sweep(&cfg, &pick(out, "table.csv"), &pick(report, "sweep.json"), drift.as_deref())
        }
        Command::Delta { out } => cmd_delta(&cfg, &pick(out, "gap.json")),
        Command::Stability { out } => cmd_stability(&cfg, &pick(out, "stab.json")),
        Command::EpsilonValidate { report } => cmd_epsilon(&cfg, report.as_deref()),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            std::fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
        }
    }
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Serialize)]
struct GammaReport {
    grid: usize,
    alpha: f64,
    gamma2_at_0: f64,
    eps_implied: f64,
    validation: gamma::GammaValidation,
}

fn cmd_gamma(cfg: &RunConfig, out: &Path, report: &Path) -> Result<()> {
    let g = cfg.gamma_surface()?;
    let n = g.grid_size();
    write_csv(
        out,
        &["phi", "gamma", "dgamma", "d2gamma"],
        (0..=n).map(|j| {
            let p = j as f64 / n as f64;
            vec![f(p), f(g.value(p)), f(g.d(1, p)), f(g.d(2, p))]
        }),
    )?;
    let validation = gamma::validate_gamma(&g);
    println!(
        "gamma: grid {n}, gamma''(0) = {:.6}, periodicity {:.2e}, symmetry {:.2e}",
        g.gamma2_at_0, validation.periodicity_violation, validation.symmetry_violation
    );
    write_json(
        report,
        &GammaReport {
            grid: n,
            alpha: g.alpha,
            gamma2_at_0: g.gamma2_at_0,
            eps_implied: g.eps,
            validation,
        },
    )
}

#[derive(Serialize)]
struct PnReport {
    kappa: f64,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "L")]
    l: f64,
    alpha: f64,
    tail_rate: f64,
    energy: f64,
    el_residual: f64,
    first_integral_residual: f64,
    kappa_unpinned: f64,
}

fn cmd_pn(cfg: &RunConfig, out: &Path, report: &Path) -> Result<()> {
    let g = cfg.gamma_surface()?;
    if !(g.gamma2_at_0 > 0.0) {
        return Err(Error::Stability(format!("gamma''(0) = {} must be positive", g.gamma2_at_0)));
    }
    let mu = (2.0 * g.gamma2_at_0 / g.alpha).sqrt();
    let l = cfg.pn_l.unwrap_or(20.0 / mu);
    let sol = pn::solve_pn(&g, g.alpha, l, cfg.pn_tol)?;
    write_csv(
        out,
        &["x", "phi", "dphi", "v_plus", "v_minus"],
        sol.grid.iter().zip(&sol.phi).zip(&sol.phi_derivs[0]).map(|((x, p), d)| {
            vec![f(*x), f(*p), f(*d), f(0.5 * p), f(-0.5 * p)]
        }),
    )?;
    let energy = pn::pn_energy(&sol)?;
    let kappa = pn::pn_stability_kappa(&sol, cfg.pn_grid)?;
    let free = pn::pn_stability(&sol, cfg.pn_grid, false)?;
    let rep = PnReport {
        kappa: kappa.kappa,
        n: cfg.pn_grid,
        l,
        alpha: g.alpha,
        tail_rate: sol.tail_rate,
        energy,
        el_residual: pn::el_residual(&sol, 2048),
        first_integral_residual: sol.first_integral_residual(),
        kappa_unpinned: free.jump_mode,
    };
    println!(
        "pn: L = {l:.4}, energy = {energy:.12}, kappa = {:.6} (unpinned {:.2e})",
        rep.kappa, rep.kappa_unpinned
    );
    write_json(report, &rep)
}

#[derive(Serialize)]
struct RelaxJson {
    eps: f64,
    #[serde(rename = "N")]
    n: usize,
    solver: lattice::Solver,
    mode: lattice::Mode,
    iterations: usize,
    cg_iterations: usize,
    grad_norm: f64,
    energy: f64,
    pn_energy: f64,
    x_err: f64,
}

fn cmd_relax(cfg: &RunConfig, out: &Path, grad: Option<&Path>, report: &Path) -> Result<()> {
    let sc = cfg.sweep_config();
    let cont = Continuum::new(&sc)?;
    let sol = cont.solve(&sc, cfg.eps)?;
    let n = cont.window(&sc, cfg.eps);
    let v = lattice::sample_pn(&sol, cfg.eps, n)?;
    let model = cfg.model();
    let rep = lattice::relax(&model, &v, &cfg.relax_options())?;
    let st = &rep.state;
    write_csv(
        out,
        &["i", "u_plus", "u_minus", "u_perp"],
        st.indices().map(|i| {
            let (p, m) = (st.plus(i), st.minus(i));
            vec![i.to_string(), f(p), f(m), f(p - m)]
        }),
    )?;
    if let Some(path) = grad {
        let g = model.gradient(st)?;
        write_csv(
            path,
            &["i", "g_plus", "g_minus"],
            st.indices().enumerate().map(|(k, i)| vec![i.to_string(), f(g[2 * k]), f(g[2 * k + 1])]),
        )?;
    }
    let j = RelaxJson {
        eps: cfg.eps,
        n,
        solver: cfg.solver,
        mode: cfg.mode,
        iterations: rep.iterations,
        cg_iterations: rep.cg_iterations,
        grad_norm: rep.grad_norm,
        energy: rep.energy,
        pn_energy: pn::pn_energy(&sol)?,
        x_err: lattice::x_eps_norm(&st.diff(&v), cfg.eps),
    };
    println!(
        "relax: eps = {}, N = {n}, {} iterations, |grad| = {:.2e}, ||v_eps - v|| = {:.3e}",
        cfg.eps, j.iterations, j.grad_norm, j.x_err
    );
    write_json(report, &j)
}

fn cmd_sweep(cfg: &RunConfig, out: &Path, report: &Path, drift: Option<&Path>) -> Result<()> {
    let sc = cfg.sweep_config();
    let table = analysis::convergence_sweep(&cfg.eps_list, &sc)?;
    let opt = |v: Option<analysis::SlopeFit>| v.map_or_else(|| "nan".to_string(), |s| f(s.slope));
    let mut rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| vec![f(r.eps), f(r.x_err), f(r.e_gap), f(r.consistency)])
        .collect();
    rows.push(vec![
        "slope".into(),
        opt(table.x_err_fit),
        opt(table.e_gap_fit),
        opt(table.consistency_fit),
    ]);
    write_csv(out, &["eps", "x_err", "e_gap", "consist"], rows)?;
    for r in &table.rows {
        match &r.error {
            None => println!(
                "eps {:<8} N {:<6} x_err {:.4e}  e_gap {:.4e}  consist {:.4e}",
                r.eps, r.n, r.x_err, r.e_gap, r.consistency
            ),
            Some(e) => println!("eps {:<8} FAILED: {e}", r.eps),
        }
    }
    for (name, fit) in [("x_err", table.x_err_fit), ("e_gap", table.e_gap_fit), ("consist", table.consistency_fit)] {
        if let Some(s) = fit {
            println!(
                "slope {name:<8} {:.4}  (95% CI {:.4}..{:.4}, R^2 {:.6})",
                s.slope, s.ci95.0, s.ci95.1, s.r2
            );
        }
    }
    write_json(report, &table)?;
    if let Some(path) = drift {
        let d = analysis::stability_gap_drift(&cfg.eps_list, &sc)?;
        let mut rows: Vec<Vec<String>> = d
            .rows
            .iter()
            .map(|r| vec![f(r.eps), f(r.mean_abs_drift), f(r.max_abs_drift), f(r.max_ratio)])
            .collect();
        rows.push(vec!["slope".into(), opt(d.fit), String::new(), String::new()]);
        write_csv(path, &["eps", "mean_abs_drift", "max_abs_drift", "max_ratio"], rows)?;
    }
    if table.rows.iter().any(|r| r.error.is_some()) {
        return Err(Error::convergence("sweep", "at least one row failed; see the table"));
    }
    Ok(())
}

#[derive(Serialize)]
struct DeltaJson {
    delta: f64,
    raw: f64,
    k_star: f64,
    method: analysis::GapMethod,
    s_max: usize,
    circulant: analysis::GapReport,
}

fn cmd_delta(cfg: &RunConfig, out: &Path) -> Result<()> {
    let fourier = analysis::delta_gap(&cfg.intra);
    let circ = analysis::delta_gap_circulant(&cfg.intra, 512);
    println!(
        "delta: {:.3e} (raw {:.3e}, k* = {:.6}); circulant {:.3e}",
        fourier.delta, fourier.raw, fourier.k_star, circ.delta
    );
    write_json(
        out,
        &DeltaJson {
            delta: fourier.delta,
            raw: fourier.raw,
            k_star: fourier.k_star,
            method: fourier.method,
            s_max: fourier.s_max,
            circulant: circ,
        },
    )
}

#[derive(Serialize)]
struct StabilityJson {
    lambda_min_pn: f64,
    lambda_min_atom: f64,
    lambda_min_atom_unpinned: f64,
    residual: f64,
    eps: f64,
    #[serde(rename = "N")]
    n: usize,
    grid: usize,
}

fn cmd_stability(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = cfg.sweep_config();
    let cont = Continuum::new(&sc)?;
    let sol = cont.solve(&sc, cfg.eps)?;
    let kappa = pn::pn_stability_kappa(&sol, cfg.pn_grid)?;
    let n = cont.window(&sc, cfg.eps);
    let v = lattice::sample_pn(&sol, cfg.eps, n)?;
    let model = cfg.model();
    let rep = lattice::relax(&model, &v, &cfg.relax_options())?;
    let pinned = analysis::atom_stability(&model, &rep.state, true)?;
    let free = analysis::atom_stability(&model, &rep.state, false)?;
    println!(
        "stability: kappa_PN = {:.6}, lambda_atom = {:.6} (unpinned {:.3e})",
        kappa.kappa, pinned.lambda_min_atom, free.lambda_min_atom
    );
    write_json(
        out,
        &StabilityJson {
            lambda_min_pn: kappa.kappa,
            lambda_min_atom: pinned.lambda_min_atom,
            lambda_min_atom_unpinned: free.lambda_min_atom,
            residual: pinned.residual,
            eps: cfg.eps,
            n,
            grid: cfg.pn_grid,
        },
    )
}

/// Target value and half-width accepted by `epsilon-validate`.
pub const EPSILON_TARGET: (f64, f64) = (0.0475, 0.0005);

#[derive(Serialize)]
struct EpsilonJson {
    #[serde(flatten)]
    calibration: gamma::EpsilonCalibration,
    target: f64,
    tolerance: f64,
    pass: bool,
}

fn cmd_epsilon(cfg: &RunConfig, report: Option<&Path>) -> Result<()> {
    let fit = cfg.trig_fit()?;
    let cal = calibrate_epsilon(&fit, cfg.c11)?;
    let pass = (cal.eps - EPSILON_TARGET.0).abs() <= EPSILON_TARGET.1;
    println!(
        "epsilon = {:.5} (d2gamma/dphi2 = {:.6e}, a = {}, C11 = {}) {}",
        cal.eps,
        cal.d2gamma_dphi2,
        cal.lattice_constant,
        cal.c11,
        if pass { "PASS" } else { "FAIL" }
    );
    if let Some(p) = report {
        write_json(
            p,
            &EpsilonJson {
                calibration: cal,
                target: EPSILON_TARGET.0,
                tolerance: EPSILON_TARGET.1,
                pass,
            },
        )?;
    }
    if pass {
        Ok(())
    } else {
        Err(Error::Tolerance {
            stage: "epsilon-validate".into(),
            achieved: (cal.eps - EPSILON_TARGET.0).abs(),
            requested: EPSILON_TARGET.1,
        })
    }
}
