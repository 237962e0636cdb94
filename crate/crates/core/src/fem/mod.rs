//! Total-Lagrangian finite elements for displacement-controlled compression of a
//! nearly incompressible Ogden block.
//!
//! Trilinear hexahedra with 2×2×2 Gauss integration use a mean-dilatation (F-bar)
//! volumetric term `U(J̄) = K/2 (J̄ − 1)²` per element; with an incompressible material the
//! penalty bulk modulus is `K = 2000 μ₀`. Newton's method runs on a skyline `LDLᵀ`
//! factorization, with step bisection when an increment fails.

mod element;
mod mesh;
mod output;
mod skyline;
mod solver;

pub use self::element::{element_response, ElementGeometry, ElementResponse};
pub use self::mesh::{build_block_mesh, HexMesh, DEFAULT_BLOCK_DIMS, DEFAULT_DIVISIONS};
pub use self::output::{extract_surface_strains, write_force_csv, write_vtk, FaceImageMap};
pub use self::skyline::{SkylineMatrix, ZeroPivot};
pub use self::solver::{
    solve_compression, BlockSystem, ElementState, FemSolution, LoadProgram, NewtonSettings, Platen, StepState,
};

use thiserror::Error;

use crate::constitutive::ConstitutiveError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FemError {
    #[error("degenerate block: {0}")]
    DegenerateDimensions(String),
    #[error("invalid load program: {0}")]
    InvalidProgram(String),
    #[error("Newton iterations diverged at step {step} (residuals {residuals:?})")]
    NewtonDiverged { step: usize, residuals: Vec<f64> },
    #[error("element {element} inverted at step {step}")]
    ElementInverted { element: usize, step: usize },
    #[error("singular stiffness at step {step}, equation {equation}")]
    SingularStiffness { step: usize, equation: usize },
    #[error("grid point ({x}, {y}) lies outside the tracked face")]
    GridOutsideFace { x: f64, y: f64 },
    #[error(transparent)]
    Material(#[from] ConstitutiveError),
}
