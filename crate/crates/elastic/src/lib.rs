//! Linearized elastic scattering off a homogeneous isotropic
//! background: stiffness/density perturbation fields, the progressive
//! expansions of the scattered wave along each of the four
//! mode-conversion channels, the symbol-level injectivity certificate
//! for the resulting coefficient system, and the isotropic
//! reconstruction pipeline built on the longitudinal data functionals.

pub mod error;
pub mod expansion;
pub mod identity;
pub mod tensor;

pub use error::ElasticError;
pub use expansion::{
    pp_expansion, ps_expansion, residual_report, sp_expansion, ss_expansion, Channel,
    ChannelKind, Coefficient, Direction, ExpansionResult, Mode, Singularity, RESIDUAL_TOL,
};
pub use identity::{
    elimination_replay, elimination_targets, evaluate_zero_data_identities, identity_rows,
    kernel_certificate, sphere_samples, symbol_matrix, EliminationReport, EliminationStep,
    FrequencySample, KernelReport, KernelSample, Row, RowId, SymbolMatrix, DEGENERACY_GUARD,
    ELIMINATION_TOL, KERNEL_TOL, RHO_COL,
};
pub use tensor::{
    contract, contract_vec, curl, eps, make_isotropic, permute_axes, permute_field,
    random_isotropic, random_perturbation, voigt, voigt_slot, Background, Perturbation,
    TensorField, VOIGT_PAIRS,
};
