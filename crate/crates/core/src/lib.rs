//! Central-spin echo simulator.
//!
//! A central spin couples to N environment spins through heteronuclear
//! dipolar couplings, while the environment spins interact among themselves.
//! The crate computes multi-spin correlation spectra, OTOC echoes, the
//! classical coin-game model and level-spacing statistics.

pub mod analysis;
pub mod coin;
pub mod error;
pub mod geometry;
pub mod mcd;
pub mod otoc;
pub mod quantum;
pub mod reduce;
pub mod runner;

pub use error::{Error, Result};
