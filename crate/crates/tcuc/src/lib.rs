//! Transmission-constrained unit commitment by decomposition.
//!
//! The crate splits a mixed-integer semidefinite program (unit commitment
//! with AC transmission feasibility enforced through an SDP relaxation of
//! the per-period optimal power flow) into
//!
//! * a mixed-integer quadratic *master* problem over commitment decisions,
//!   dispatch levels, reserves and non-revenue-power variables, and
//! * one *sub-problem* SDP per period, solved in its dual form, which either
//!   certifies that a commitment is transmission-feasible (and prices its
//!   losses) or proves that it is not.
//!
//! Infeasible periods come back as no-good cuts, feasible ones as
//! non-revenue-power cuts; both live in a pool keyed by per-period load
//! signatures. [`solver::solve`] runs the full branch-and-bound-and-cut
//! loop, [`oracle::enumerate_solve`] provides a brute-force reference for
//! desk-scale instances.
//!
//! Every major capability has a runnable demo under `examples/`; the `tcuc`
//! binary exposes `solve`, `oracle`, `validate` and `dump-sdp` subcommands.

pub mod artifacts;
pub mod cuts;
pub mod envelope;
pub mod master;
pub mod net;
pub mod oracle;
pub mod qp;
pub mod sdp;
pub mod solver;
pub mod subproblem;
pub mod synth;
pub mod uc;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("oracle guard: {0}")]
    OracleGuard(String),
}

pub type Result<T> = std::result::Result<T, Error>;
