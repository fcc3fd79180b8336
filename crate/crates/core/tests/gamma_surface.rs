//! Misfit-surface construction, its structure, and the small-parameter
//! calibration.

use dislocore::gamma::*;
use dislocore::potentials::PairPotential;
use dislocore::Error;
use std::f64::consts::PI;

fn surfaces() -> Vec<GammaSurface> {
    vec![
        GammaSurface::sinusoidal(0.8, 1.0).unwrap(),
        GammaSurface::new(GammaSource::Cosine(vec![0.5, 0.1, -0.02]), 1.0, 512).unwrap(),
        GammaSurface::from_potential(&PairPotential::gaussian(1.0, 0.5).unwrap(), 18.6).unwrap(),
        GammaSurface::from_potential(&PairPotential::gaussian(0.3, 0.9).unwrap().with_s_max(20), 2.0)
            .unwrap(),
    ]
}

#[test]
fn periodic_even_and_nonnegative() {
    for g in surfaces() {
        let v = validate_gamma(&g);
        let peak = g.values.iter().cloned().fold(0.0, f64::max);
        assert!(v.periodicity_violation <= 1e-12 * peak, "{v:?}");
        assert!(v.symmetry_violation <= 1e-12 * peak, "{v:?}");
        assert_eq!(v.value_at_zero, 0.0);
        assert!(v.min_value >= -1e-14 * peak);
        assert!(v.m_prime > 0.0);
        for phi in [0.1, 0.27, 0.5, 0.81] {
            assert!((g.value(phi) - g.value(1.0 - phi)).abs() <= 1e-12 * peak);
            assert!((g.value(phi + 1.0) - g.value(phi)).abs() <= 1e-12 * peak);
            assert!((g.value(-phi) - g.value(phi)).abs() <= 1e-12 * peak);
        }
    }
}

#[test]
fn gaussian_surface_has_a_local_stability_radius() {
    let g = GammaSurface::from_potential(&PairPotential::gaussian(1.0, 0.5).unwrap(), 18.6).unwrap();
    assert!(validate_gamma(&g).c0 >= 0.1);
}

#[test]
fn sinusoid_second_derivative() {
    let g = GammaSurface::sinusoidal(1.0, 1.0).unwrap();
    assert!((g.gamma2_at_0 - 4.0 * PI * PI).abs() <= 1e-12 * g.gamma2_at_0);
}

#[test]
fn lattice_sum_against_direct_summation() {
    let u = PairPotential::gaussian(1.0, 1.0).unwrap().with_s_max(50);
    // terms sorted by magnitude and added with a running compensation
    let mut terms: Vec<f64> = (-49i64..=50)
        .flat_map(|s| {
            let s = s as f64;
            [(-s * s).exp(), -(-(s - 0.5) * (s - 0.5)).exp()]
        })
        .collect();
    terms.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in terms {
        let y = sum + t;
        comp += if sum.abs() >= t.abs() { (sum - y) + t } else { (t - y) + sum };
        sum = y;
    }
    let direct = sum + comp;
    let got = gamma_from_potential(&u, 0.5);
    // the terms are O(1) and cancel to O(1e-4)
    assert!((got - direct).abs() <= 1e-15, "{got} {direct}");
    assert_eq!(gamma_from_potential(&u, 0.0), 0.0);
    assert!(gamma_from_potential(&u, 1.0).abs() < 1e-15);
}

#[test]
fn derivatives_match_spectral_and_finite_differences() {
    for g in surfaces() {
        let n = g.grid_size();
        for k in 1..=4 {
            let scale = (0..n).map(|j| g.derivs[k - 1][j].abs()).fold(0.0, f64::max);
            for j in (0..n).step_by(7) {
                let phi = j as f64 / n as f64;
                let d = gamma_deriv(&g, k, phi).unwrap();
                assert!((d - g.spectral_deriv(k, phi)).abs() <= 1e-8 * scale, "k={k} phi={phi} {d} {} {:?}", g.spectral_deriv(k, phi), g.source);
            }
        }
        assert!(gamma_deriv(&g, 1, 0.0).unwrap().abs() <= 1e-12);
        assert!(gamma_deriv(&g, 1, 0.5).unwrap().abs() <= 1e-12 * g.gamma2_at_0);
    }
    let u = PairPotential::gaussian(1.0, 0.5).unwrap();
    let g = GammaSurface::from_potential(&u, 1.0).unwrap();
    let h = 1e-4;
    let fd = (gamma_from_potential(&u, h) - 2.0 * gamma_from_potential(&u, 0.0)
        + gamma_from_potential(&u, -h))
        / (h * h);
    assert!((fd - g.gamma2_at_0).abs() <= 1e-6 * g.gamma2_at_0);
    assert_eq!(gamma_deriv(&g, 5, 0.1), Err(Error::Order(5)));
}

#[test]
fn epsilon_parameter_identities_and_scaling() {
    assert_eq!(epsilon_parameter(1.0, 1.0, 1.0).unwrap(), 1.0);
    assert_eq!(epsilon_parameter(4.0, 1.0, 1.0).unwrap(), 0.5);
    assert!(matches!(epsilon_parameter(0.0, 1.0, 1.0), Err(Error::Stability(_))));
    assert!(matches!(epsilon_parameter(1.0, -1.0, 1.0), Err(Error::Stability(_))));

    let base = GammaSurface::from_potential(&PairPotential::gaussian(1.0, 0.5).unwrap(), 18.6).unwrap();
    let e0 = epsilon_parameter(18.6, base.gamma2_at_0, 1.0).unwrap();
    for c in [0.5, 2.0, 7.0] {
        let g = GammaSurface::from_potential(&PairPotential::gaussian(c, 0.5).unwrap(), 18.6).unwrap();
        assert!((g.gamma2_at_0 - c * base.gamma2_at_0).abs() <= 1e-12 * g.gamma2_at_0);
        let e = epsilon_parameter(18.6, g.gamma2_at_0, 1.0).unwrap();
        assert!((e - c.sqrt() * e0).abs() <= 1e-12 * e);
    }
}

#[test]
fn trigonometric_fit() {
    let fit = GammaTrigFit::graphene();
    let expect = (21.336 - 3.0 * 6.127 - 3.0 * 1.128 + 3.0 * 0.143) * 1e-3;
    assert!((gamma2d_trig(&fit, 0.0, 0.0) - expect).abs() <= 1e-15);
    let a = fit.a;
    for (phi, psi) in [(0.3, 0.1), (1.1, -0.4), (2.0, 0.7)] {
        let v = gamma2d_trig(&fit, phi, psi);
        assert!((gamma2d_trig(&fit, phi + a, psi) - v).abs() <= 1e-14);
    }
    let h = 1e-3;
    let fd = (gamma2d_trig(&fit, h, 0.0) - 2.0 * gamma2d_trig(&fit, 0.0, 0.0) + gamma2d_trig(&fit, -h, 0.0))
        / (h * h);
    let exact = gamma2d_trig_d2phi(&fit, 0.0, 0.0);
    assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "{fd} {exact}");
    assert!(GammaTrigFit::with_all([1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 1.0).is_err());
}

#[test]
fn calibration_reproduces_the_reference_value() {
    let cal = calibrate_epsilon(&GammaTrigFit::graphene(), 312.67).unwrap();
    assert!((cal.eps - 0.0475).abs() <= 0.0005, "{cal:?}");
    // the slice used by the one-dimensional model has the same curvature
    let fit = GammaTrigFit::graphene();
    let slice = GammaSurface::from_trig_slice(&fit, 1.0).unwrap();
    let per_a2 = cal.d2gamma_dphi2 * fit.a * fit.a;
    assert!((slice.gamma2_at_0 - per_a2).abs() <= 1e-10 * per_a2);
}
