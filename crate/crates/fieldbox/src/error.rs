//! Error type shared by the field calculus operations.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("bad grid: {0}")]
    BadGrid(String),

    /// Spectral backends need a field that is identically zero near the
    /// box faces; only the compact-in-Omega tag guarantees that.
    #[error("non-periodic field: spectral backend requires compact-in-Omega support, got {0}")]
    NonPeriodicField(String),

    #[error("not elliptic: symbol has no inversion certificate")]
    NotElliptic,

    /// The elliptic solve is checked a posteriori on Omega; a large
    /// residual means the right-hand side was incompatible with the
    /// compactness assumptions.
    #[error("residual too large: relative residual {got:.3e} exceeds {limit:.1e} on Omega")]
    ResidualTooLarge { got: f64, limit: f64 },

    #[error("ray directions are axis-aligned: {0}")]
    BadDirection(String),

    #[error("support violation: {0}")]
    SupportViolation(String),
}
