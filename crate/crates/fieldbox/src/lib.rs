//! Scalar and vector fields on a centered cube grid, with the operator
//! toolbox the wave-expansion and inversion crates are built on:
//! spectral and finite-difference derivatives, symbol polynomials and
//! their elliptic inversion, ray antiderivatives (spectral and causal
//! BDF6), banded double antiderivatives, windows and norms.
//!
//! Everything is deterministic by construction: parallel loops write
//! disjoint chunks and all reductions run serially, so results are
//! bitwise reproducible across thread counts.

pub mod anti2;
pub mod elliptic;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod norm;
pub mod ops;
pub mod quad;
pub mod ray;
pub mod stencil;
pub mod symbol;
pub mod window;

pub use anti2::{double_antiderivative, downstream_face_leak, FACE_LEAK_LIMIT};
pub use elliptic::{invert_symbol, INVERSION_RESIDUAL_LIMIT};
pub use error::FieldError;
pub use field::{ScalarField, Support, VectorField};
pub use grid::Grid;
pub use norm::{norm, rel_l2, NormKind, Region};
pub use ops::{apply_symbol, diff, diff_upwind, laplacian, Backend};
pub use ray::{ray_antiderivative, ray_antiderivative_march};
pub use symbol::{golden_sphere, MultiIndex, SymbolPolynomial};
pub use window::{ball_indicator, omega_mask, slab_window, taper_mask};
