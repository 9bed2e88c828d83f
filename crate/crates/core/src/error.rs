//! Crate-wide error type.

use thiserror::Error;

use crate::operator::MAX_DIM;

#[derive(Debug, Error)]
pub enum Error {
    /// A construction (kron, embedding) would exceed the dense-matrix cap.
    #[error("matrix dimension {0} exceeds the configured maximum {MAX_DIM}")]
    DimensionTooLarge(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("hermiticity violation: residual {residual:.3e} exceeds {tol:.3e}")]
    NotHermitian { residual: f64, tol: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// Integration produced non-finite values; carries the simulation time.
    #[error("numerical blowup at t = {time}: state contains non-finite values")]
    Blowup { time: f64 },

    /// Fewer than two active players remain in the ruin game.
    #[error("game over: fewer than two active players")]
    GameOver,

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A non-signaling comparison was asked to vary local-side parameters.
    #[error("invalid comparison: {0}")]
    InvalidComparison(String),
}

pub type Result<T> = std::result::Result<T, Error>;
