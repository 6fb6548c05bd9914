//! Monte Carlo time-slicing of heat semigroups `e^{-tL}` for Laplace-type
//! operators `L = ∇*∇ + V` on compact model manifolds, with or without
//! boundary.
//!
//! Paths are piecewise reflected geodesics driven by per-segment Gaussian
//! velocities; boundary conditions enter through an involutive operator `B`
//! inserted into the path-ordered transport at every reflection. Exact
//! spectral, image-sum and finite-difference references live in [`oracle`],
//! and [`harness`] drives convergence sweeps, the property suite and the CLI.

// `!(x >= 0.0)` is the NaN-rejecting form of the input guards; the positive
// comparison the lint suggests would accept NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod billiard;
pub mod bundle;
pub mod geometry;
pub mod harness;
pub mod oracle;
pub mod rng;
pub mod semigroup;

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("rejected path: {0} is undefined")]
    RejectedPath(&'static str),
    #[error("no oracle for this problem: {0}")]
    OracleMissing(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }
}
