//! Stability gap, spectra, the drift of the second variation, and the sweep
//! bookkeeping.

mod common;

use common::*;
use dislocore::analysis::*;
use dislocore::lattice::{self, relax};
use dislocore::pn;
use dislocore::potentials::{PairPotential, QuinticTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[test]
fn nearest_neighbour_potential_has_no_gap() {
    for k0 in [0.5, 1.0, 4.0] {
        let v = PairPotential::harmonic_nn(k0).unwrap();
        let r = delta_gap(&v);
        assert_eq!((r.delta, r.raw), (0.0, 0.0));
        assert_eq!(delta_gap_circulant(&v, 64).delta, 0.0);
    }
}

#[test]
fn lennard_jones_has_no_gap() {
    let v = PairPotential::lennard_jones_calibrated(6.0, 12.0).unwrap();
    assert!((2..=v.shells()).all(|s| v.d(2, s as f64) <= 0.0));
    let f = delta_gap(&v);
    assert!(f.delta.abs() <= 1e-10 && f.raw <= 1e-10, "{f:?}");
    let c = delta_gap_circulant(&v, 512);
    assert!(c.delta.abs() <= 1e-10, "{c:?}");
}

#[test]
fn positive_second_neighbour_curvature_opens_a_gap() {
    for curv in [vec![1.0, 0.3], vec![2.0, 0.7, 0.0, 0.0], vec![1.0, 0.25, -0.01]] {
        let f = delta_gap_from_curvatures(&curv);
        let c = delta_gap_circulant_from_curvatures(&curv, 512);
        assert!(f.delta > 0.0);
        assert!((f.delta - c.delta).abs() <= 1e-8, "{f:?} {c:?}");
        assert!((f.k_star - PI).abs() < 1e-6 && (c.k_star - PI).abs() < 1e-12);
    }
    // the gap of a single second-neighbour term is 4 V''(2), reached at pi
    let f = delta_gap_from_curvatures(&[1.0, 0.3]);
    assert!((f.delta - 1.2).abs() <= 1e-12);
}

#[test]
fn symbol_and_circulant_agree_for_mixed_signs() {
    // negative second and positive third neighbour: the supremum is interior
    let curv = [1.0, -0.05, 0.2];
    let f = delta_gap_from_curvatures(&curv);
    assert!(f.k_star > 0.0 && f.k_star < PI, "{f:?}");
    // put the maximiser on the ring: any multiple of 2 pi / m works, so
    // compare against the symbol evaluated at the ring's best wavenumber
    let m = 512;
    let c = delta_gap_circulant_from_curvatures(&curv, m);
    let ring_best = (0..=m / 2)
        .map(|q| gap_symbol(&curv, 2.0 * PI * q as f64 / m as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((c.raw - ring_best).abs() <= 1e-8, "{} vs {ring_best}", c.raw);
    assert!(f.raw >= c.raw - 1e-12 && f.raw - c.raw <= 1e-4);
}

#[test]
fn gap_is_clamped_but_raw_is_kept() {
    let f = delta_gap_from_curvatures(&[1.0, -0.3]);
    assert_eq!(f.delta, 0.0);
    assert!(f.raw <= 0.0);
}

#[test]
fn tabulated_potential_gap() {
    // a smooth bump with V''(2) > 0, sampled and interpolated
    let h = 0.05;
    let xs: Vec<f64> = (0..=120).map(|j| j as f64 * h).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (-(x / 0.8) * (x / 0.8)).exp()).collect();
    let v = PairPotential::tabulated(QuinticTable::new(&xs, &ys).unwrap());
    assert!(v.d(2, 2.0) > 0.0);
    let f = delta_gap(&v);
    let c = delta_gap_circulant(&v, 512);
    assert!(f.delta > 0.0);
    assert!((f.delta - c.delta).abs() <= 1e-8, "{f:?} {c:?}");
    let exact = delta_gap(&PairPotential::gaussian(1.0, 0.8).unwrap().with_s_max(f.s_max));
    assert!((f.delta - exact.delta).abs() <= 1e-5 * exact.delta);
}

#[test]
fn atomistic_stability_with_and_without_pin() {
    let cfg = default_config();
    let (_, sol, v) = sampled(&cfg, 0.05);
    let rep = relax(&cfg.model, &v, &cfg.relax).unwrap();
    let pinned = atom_stability(&cfg.model, &rep.state, true).unwrap();
    let free = atom_stability(&cfg.model, &rep.state, false).unwrap();
    assert!(pinned.lambda_min_atom > 0.0);
    assert!(pinned.residual <= 1e-8);
    assert!(free.lambda_min_atom < 1e-3 * pinned.lambda_min_atom);
    let kappa = pn::pn_stability_kappa(&sol, 1024).unwrap().kappa;
    assert!((pinned.lambda_min_atom - kappa).abs() < 0.05 * kappa);
}

#[test]
fn drift_far_from_the_core() {
    let cfg = default_config();
    let drifts = |eps: f64| {
        let (cont, sol, v) = sampled(&cfg, eps);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = 3.0 / cont.mu;
        let far = 0.6 * eps * v.n as f64;
        let mut d = [0.0; 3];
        for (slot, centre) in d.iter_mut().zip([0.0, -far, far]) {
            let f = random_field(v.n, eps, w, centre, &mut rng);
            assert!((lattice::x_eps_norm(&f, eps) - 1.0).abs() < 1e-12);
            *slot = drift_of_field(&cfg.model, &v, &sol, &f).unwrap().abs();
        }
        d
    };
    let [core, left, right] = drifts(0.05);
    // Unslipped side: the state is the perfect lattice up to the tail.
    assert!(left <= 1e-6 && left <= 1e-3 * core, "{left:e} vs {core:e}");
    // Slipped side: bonds connect f+_j with f-_(j-1), while the continuum
    // form compares the layers at the same x, an O(eps) mismatch.
    let [_, _, right_half] = drifts(0.025);
    assert!(right <= 2.0 * 0.05 && (right / right_half - 2.0).abs() < 0.5, "{right:e} {right_half:e}");
}

#[test]
fn drift_scales_linearly() {
    let cfg = default_config();
    let t = stability_gap_drift(&SWEEP, &cfg).unwrap();
    let fit = t.fit.unwrap();
    assert!(fit.slope >= 0.9 && fit.r2 >= 0.99, "{fit:?}");
    // one constant bounds every sample at every eps
    let c = t.rows.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    assert!(t.rows.iter().all(|r| r.max_abs_drift <= c * r.eps * (1.0 + 1e-12)));
    assert!(t.rows.iter().all(|r| r.max_ratio >= 0.25 * c));
}

#[test]
fn slope_fit() {
    assert!(loglog_fit(&[0.1], &[1.0]).is_none());
    let x = [0.1, 0.05, 0.025];
    let y = [2e-2, 5.2e-3, 1.3e-3];
    let f = loglog_fit(&x, &y).unwrap();
    assert!((f.slope - 1.97).abs() < 0.03);
    assert!(f.ci95.0 < f.slope && f.slope < f.ci95.1);
    assert_eq!(f.points, 3);
}

#[test]
fn sweep_flags_rows_that_cannot_run() {
    // at eps = 0.9 the default window is narrower than the interaction range
    let cfg = default_config();
    let t = convergence_sweep(&[0.9, 0.1, 0.05], &cfg).unwrap();
    assert_eq!(t.rows.len(), 3);
    assert!(t.rows[0].error.is_some() && t.rows[0].x_err.is_nan());
    assert!(t.rows[1].error.is_none() && t.rows[2].error.is_none());
    assert_eq!(t.x_err_fit.unwrap().points, 2);
    assert!(convergence_sweep(&[0.05, 0.1], &cfg).unwrap_err().is_config_error());
}
