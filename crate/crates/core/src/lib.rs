//! Causal estimation of racial bias in police use of force from administrative
//! stop records.
//!
//! The crate covers the full pipeline: encounter tables and covariate encoding
//! ([`data`]), the regression and kernel primitives ([`stats`]), mobility
//! adjustment of precinct compositions ([`mobility`]), the precinct causal risk
//! ratio ([`crr`]), the race-and-place ratio Ψ(r, x) and its marginal curve
//! ([`rap`]), sensitivity analysis and covariate-shift bounds
//! ([`sensitivity`]), synthetic-confounder benchmarking ([`benchmark`]) and a
//! seeded simulation harness ([`sim`]).

pub mod benchmark;
pub mod crr;
pub mod data;
pub mod error;
pub mod mobility;
pub mod rap;
pub mod report;
pub mod resample;
pub mod sensitivity;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
