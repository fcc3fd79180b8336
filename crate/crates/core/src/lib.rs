//! Atomistic and Peierls–Nabarro models of a straight edge dislocation in a
//! bilayer of one-dimensional atomic chains.
//!
//! Modules, bottom up:
//! - [`potentials`]: pair interactions, lattice calibration, elastic constant.
//! - [`gamma`]: the misfit energy density and the small parameter.
//! - [`pn`]: the continuum solution and its linear stability.
//! - [`lattice`]: the discrete energy, its derivatives and relaxation.
//! - [`analysis`]: stability gap, spectra and convergence studies.
//! - [`config`] and [`cli`]: the `dislocore` command-line front end.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod gamma;
pub mod lattice;
pub mod linalg;
pub mod pn;
pub mod potentials;

pub use error::{Error, Result};
