//! Quantum predictions, macrorealist bounds, Monte Carlo time-tag simulation
//! and the coincidence analysis pipeline for an interferometric
//! Leggett–Garg test with negative-result measurements.

pub mod analysis;
pub mod error;
pub mod fixtures;
pub mod hv;
pub mod multiphoton;
pub mod optim;
pub mod protocol;
pub mod quantum;
pub mod sim;
pub mod tables;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
