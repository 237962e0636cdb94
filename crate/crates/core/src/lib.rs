//! Strain measurement from image sequences and the physics reference solutions it is
//! validated against.
//!
//! The crate covers four layers:
//!
//! * [`field`] and [`speckle`]: images, grids, logarithmic strain, and synthetic speckle
//!   sequences with exactly known deformation;
//! * [`dic`] and [`strain`]: subset-based digital image correlation and the strain fields
//!   derived from it;
//! * [`constitutive`] and [`fem`]: Ogden hyperelasticity, J2 plasticity, material-point
//!   drivers and a small hexahedral finite element solver for block compression;
//! * [`compare`] and [`pipeline`]: field and curve comparison, reports, and config-driven
//!   pipelines used by the `strainlab` command line tool.

pub mod field;
pub mod speckle;
pub mod dic;
pub mod strain;
pub mod constitutive;
pub mod fem;
pub mod io;
pub mod plot;
pub mod compare;
pub mod pipeline;

pub use field::{Axis, FieldError, GrayImage, Grid2D};
