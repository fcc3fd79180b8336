//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use dislocore::analysis::{Continuum, SweepConfig};
use dislocore::lattice::{self, AtomisticModel, Clamp, LatticeState};
use dislocore::pn::PNSolution;
use dislocore::potentials::PairPotential;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SWEEP: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

/// Lennard-Jones(6,12) layers coupled by a Gaussian, the reference model.
pub fn default_model() -> AtomisticModel {
    AtomisticModel::new(
        PairPotential::lennard_jones_calibrated(6.0, 12.0).unwrap(),
        PairPotential::gaussian(1.0, 0.5).unwrap(),
    )
}

pub fn default_config() -> SweepConfig {
    SweepConfig::new(default_model())
}

/// Continuum solution and the sampled lattice state at `eps`.
pub fn sampled(cfg: &SweepConfig, eps: f64) -> (Continuum, PNSolution, LatticeState) {
    let cont = Continuum::new(cfg).unwrap();
    let sol = cont.solve(cfg, eps).unwrap();
    let n = cont.window(cfg, eps);
    let v = lattice::sample_pn(&sol, eps, n).unwrap();
    (cont, sol, v)
}

/// A small deterministic state with the dislocation clamp.
pub fn wobbly_state(eps: f64, n: usize, amp: f64) -> LatticeState {
    let mut st = LatticeState::new(eps, n, Clamp::DISLOCATION).unwrap();
    let m = (2 * n + 1) as f64;
    for k in 0..2 * n + 1 {
        let t = k as f64 / (m - 1.0);
        st.u_plus[k] = 0.5 * t + amp * (7.3 * k as f64).sin();
        st.u_minus[k] = -0.5 * t + amp * (3.1 * k as f64 + 0.4).cos();
    }
    st
}

/// Seeded uniform samples in [-1/2, 1/2).
pub fn pseudo_random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen::<f64>() - 0.5).collect()
}
