//! Error type for the elastic layer. Field-level failures bubble up
//! unchanged so callers can match on the underlying cause.

use fieldbox::FieldError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ElasticError {
    #[error(transparent)]
    Field(#[from] FieldError),

    /// Rejects moduli outside the ellipticity cone mu0 > 0,
    /// 3 lambda0 + 2 mu0 > 0.
    #[error("bad background: {0}")]
    BadBackground(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("bad contraction slots: {0}")]
    BadSlots(String),

    #[error("not a permutation of the three axes: {0:?}")]
    BadPermutation([usize; 3]),

    /// Malformed scattering channel, e.g. a polarization parallel to
    /// the propagation axis.
    #[error("bad channel: {0}")]
    BadChannel(String),

    /// Frequency outside the sampling band or too close to a
    /// coordinate plane for the per-frequency uniqueness analysis.
    #[error("degenerate frequency: {0}")]
    DegenerateFrequency(String),

    /// Data functional whose valid region does not cover the domain
    /// the reconstruction reads (1.2 times Omega).
    #[error("mask too small: {0}")]
    MaskTooSmall(String),

    /// Request outside an operation's documented domain, e.g. too few
    /// stability samples or a degenerate line system.
    #[error("bad argument: {0}")]
    BadArgument(String),
}
