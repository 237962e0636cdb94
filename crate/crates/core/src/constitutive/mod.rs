//! Material models and strain-driven material-point drivers.
//!
//! * [`OgdenMaterial`]: incompressible N-term Ogden rubber in the Abaqus convention
//!   `W = Σ 2μᵢ/αᵢ² (λ₁^αᵢ + λ₂^αᵢ + λ₃^αᵢ − 3)`, for which the initial shear modulus is
//!   `μ₀ = Σ μᵢ`. The classical 1972 form `Σ μᵢ/αᵢ (…)` scales the terms differently; the
//!   bundled rubber parameters are only meaningful in the convention used here.
//! * [`PlasticMaterial`]: small-strain J2 plasticity with piecewise-linear isotropic
//!   hardening, integrated by radial return.

mod card;
mod driver;
mod ogden;
mod plastic;

pub use self::card::{Material, MaterialCard, TABLE1_CARD, TABLE2_CARD};
pub use self::driver::{
    hardening_check_path, matpoint_drive, write_history_csv, HistoryRecord, LoadTarget, PathSegment,
};
pub use self::ogden::{
    isochoric_response, ogden_energy, ogden_principal_kirchhoff, ogden_uniaxial_nominal_stress, IsochoricResponse,
    OgdenMaterial,
};
pub use self::plastic::{
    mandel, radial_return, unmandel, von_mises, PlasticMaterial, PlasticState, StressUpdate,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstitutiveError {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("non-positive stretch {0}")]
    NonPositiveStretch(f64),
    #[error("incompressibility violated: λ₁λ₂λ₃ = {0}")]
    IncompressibilityViolated(f64),
    #[error("return mapping did not converge (hardening table corrupted?)")]
    NonConvergence,
    #[error("load path infeasible at step {step}: residual {residual:e}")]
    PathInfeasible { step: usize, residual: f64 },
    #[error("load target does not apply to this material: {0}")]
    UnsupportedTarget(String),
    #[error("material card: {0}")]
    Card(String),
}
