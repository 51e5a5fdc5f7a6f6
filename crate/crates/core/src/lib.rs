//! Maximum-distance race strategy for battery-electric endurance racing.
//!
//! The library splits the problem in two convex layers. The lower layer
//! solves a space-domain minimum-time stint problem — a second-order cone
//! program over velocity, kinetic energy, battery energy, and the powertrain
//! force chain — for a fixed lap count and initial charge. The upper layer
//! sweeps that solver over a grid of stint lengths and charge times, fits a
//! convex stint-time surface, and embeds it in a small mixed-integer cone
//! program that allocates laps, stops, and charge durations across the whole
//! race.
//!
//! Entry points:
//! - [`track`]: lap geometry (curvature, grade, pit arc) and speed caps.
//! - [`vehicle`]: vehicle and powertrain parameters.
//! - [`powertrain`]: PSD quadratic loss fitting and component models.
//! - [`conic`]: a small conic-program builder and interior-point backend.
//! - [`stint`]: the space-domain minimum-stint-time solver.
//! - [`surface`]: the stint-time sweep and surface fit.
//! - [`race`]: the race-level mixed-integer program and a flat-out baseline.
//! - [`validation`]: independent feasibility and optimality audits.

pub mod baseline;
pub mod cli;
pub mod config;
pub mod conic;
pub mod error;
pub mod powertrain;
pub mod presets;
pub mod race;
pub mod stint;
pub mod surface;
pub mod track;
pub mod validation;
pub mod vehicle;

pub use error::{Error, Result};
