//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid, spec, or solver configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A time query fell outside the sampled path range.
    #[error("time {t} outside grid range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    /// Unknown named kernel for an iterated stochastic integral.
    #[error("unknown kernel `{0}` (expected `inner_exp` or `wedge`)")]
    UnknownKernel(String),

    /// Vector or matrix dimensions do not match the spec.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A fixed-point sweep stopped contracting.
    #[error(
        "fixed-point iteration diverged after {iterations} sweeps \
         (last delta {delta:.3e}); {margin_hint}"
    )]
    Divergence {
        iterations: usize,
        delta: f64,
        margin_hint: String,
    },

    /// A backward trajectory left the tabulated manifold range.
    #[error("trajectory left the manifold table range: {0}")]
    TableRange(String),

    /// Forward simulation blew up.
    #[error("trajectory blow-up: |state| = {norm:.3e} at t = {t}")]
    Instability { norm: f64, t: f64 },

    /// Generic numerical failure (non-finite values and the like).
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
