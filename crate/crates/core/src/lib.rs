//! Hall-like transversal stress and dissipative sandpile dynamics on
//! input-output production networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`ingest`]: long-format flow tables and seeded synthetic substrates.
//! - [`operators`]: row-share, leakage-adjusted and max-row propagation
//!   operators with their spectral radii.
//! - [`exposure`]: flow share, redundancy, capacity, structural resistance
//!   and Hall-like stress per node.
//! - [`dynamics`]: the stress accumulation / toppling engine and the
//!   threshold-algebra diagnostics.
//! - [`experiments`]: Monte Carlo scenarios, phase grids, statistics and
//!   regime labels.
//! - [`tail`]: avalanche-size CCDF and power-law tail fits.
//! - [`report`]: CSV writers for every table the CLI emits.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod exposure;
pub mod ingest;
pub mod operators;
pub mod report;
pub mod seeds;
pub mod sparse;
pub mod tail;

pub use error::{Error, Result};
