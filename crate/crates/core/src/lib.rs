//! Simulation and verification toolkit for a deterministic nonlinear
//! collapse model.
//!
//! The crate has four layers:
//!
//! * [`operator`] / [`fock`] — dense complex matrix algebra and
//!   truncated-mode operators;
//! * [`dynamics`] — the nonlinear density-matrix flow, integrated on the
//!   full product space (oracle) and as a factored per-detector block
//!   system with weight pumping, plus an equivalent branch-vector engine
//!   for ensembles;
//! * [`ruin`] — the abstract zero-sum weight-pumping game, its exact
//!   absorbing-chain oracle, and residual checks for the stationarity
//!   (difference) equation and its diffusion limit;
//! * [`experiments`] — seeded ensemble drivers and the statistical tests:
//!   outcome frequencies against squared amplitudes, pumping-drift
//!   diagnostics, remote-parameter (non-signaling) comparisons, and the
//!   detector-scale nonlinearity estimate.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod operator;
pub mod ruin;
pub mod scenario;
pub mod verify;

pub use error::{Error, Result};
