//! Shared numeric foundation: images, regular grids, small tensors and the
//! deformation-gradient to logarithmic-strain kernel.

mod grid;
mod image;
mod interp;
mod tensor;

pub use self::grid::Grid2D;
pub use self::image::GrayImage;
pub use self::interp::{bicubic_gradient, bicubic_sample, cubic_weights, cubic_weight_derivs};
pub use self::tensor::{log_strain_2d, log_strain_3d, polar_decompose_2d, polar_decompose_3d, symmetric_eigen};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("image dimensions {width}x{height} do not match {len} intensities")]
    ShapeMismatch { width: usize, height: usize, len: usize },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    IntensityOutOfRange { index: usize, value: f64 },
    #[error("image must be at least 1x1")]
    EmptyImage,
    #[error("deformation gradient has non-positive Jacobian {det}")]
    NonPositiveJacobian { det: f64 },
    #[error("sample point ({x}, {y}) is outside the interpolation region")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Specimen axis: the image direction along which the load acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    #[default]
    Y,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }

    pub fn transverse(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }
}
