//! Privacy accounting and execution for the Gaussian sparse histogram mechanism.
//!
//! The mechanism releases noisy per-group counts (and optional aggregate
//! columns) only for groups that pass a deterministic count threshold and a
//! noisy-count threshold. This crate provides:
//!
//! - exact (epsilon, delta) accounting for that release, together with the
//!   looser "add the deltas" accounting it improves on ([`accounting`]);
//! - the analytic Gaussian mechanism primitives both accountings are built
//!   from ([`gaussian`]);
//! - solvers for the minimal noisy-threshold gap, minimal noise scale, and
//!   epsilon/delta inversions ([`calibrate`]);
//! - a reproducible executor for the mechanism over grouped records
//!   ([`mechanism`]);
//! - an independent Monte-Carlo / quadrature oracle that validates the
//!   accounting on small instances ([`oracle`]);
//! - tail-accurate normal-distribution scalar functions shared by all of the
//!   above ([`normal`]).

pub mod accounting;
pub mod calibrate;
pub mod gaussian;
pub mod mechanism;
pub mod normal;
pub mod oracle;

use thiserror::Error;

/// Errors shared across the crate.
///
/// Infeasibility of a calibration request is not an error; it is a
/// first-class outcome (see [`calibrate::CalibrationOutcome`]). Errors here
/// mean the inputs were outside an operation's domain, an I/O or parse step
/// failed, or an internal numerical invariant was violated.
#[derive(Debug, Error)]
pub enum GshmError {
    /// Input outside the documented domain of an operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A numerical invariant that should hold by construction was violated.
    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),
    /// An iterative routine could not reach its documented tolerance.
    #[error("tolerance not reached: {0}")]
    ToleranceNotReached(String),
    /// Structured data could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, GshmError>;
