//! Axial two-body simulation of sympathetic cooling of (anti-)protons by a
//! single ⁹Be⁺ ion in a shaped double-well Penning-trap potential.
//!
//! The crate is organised bottom-up:
//!
//! * [`constants`]: CODATA constants and particle species.
//! * [`electrode`]: per-electrode on-axis basis potentials.
//! * [`potential`]: composed, tabulated and synthetic axial potentials.
//! * [`solver`]: constrained minimum-norm voltage solving and well analysis.
//! * [`dynamics`]: velocity-Verlet two-body integration and coupling analytics.
//! * [`protocols`]: harmonic coupling, frequency sweeps and protocol planning.
//! * [`montecarlo`]: Boltzmann sampling, voltage noise and campaigns.
//! * [`analysis`]: fits, resonance scans and robustness estimates.
//!
//! All quantities are SI internally; user-facing energies are in kelvin.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the formulas.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod analysis;
pub mod constants;
pub mod dynamics;
pub mod electrode;
pub mod error;
pub mod montecarlo;
pub mod numerics;
pub mod plot;
pub mod potential;
pub mod protocols;
pub mod solver;

pub use constants::{Species, SpeciesLabel};
pub use error::{Error, Result};
