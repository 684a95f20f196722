//! Photon-counting statistics for heralded single-photon sources.

pub mod analyzer;
pub mod classical_oracle;
pub mod error;
pub mod events;
pub mod fock_model;
pub mod pulse_sim;
pub mod rng;
pub mod uncertainty;

pub use error::{Error, Result};
