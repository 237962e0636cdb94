use super::{FieldError, GrayImage};
use serde::{Deserialize, Serialize};

/// Regular lattice of measurement points in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2D {
    pub fn new(origin: [f64; 2], spacing: f64, nx: usize, ny: usize) -> Result<Self, FieldError> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(FieldError::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        if nx < 2 || ny < 2 {
            return Err(FieldError::InvalidGrid(format!("need at least 2x2 points, got {nx}x{ny}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(FieldError::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { origin, spacing, nx, ny })
    }

    /// Largest grid with the given step whose points keep `margin` pixels from every
    /// image edge, centered in the image.
    pub fn centered(width: usize, height: usize, step: f64, margin: f64) -> Result<Self, FieldError> {
        let span_x = width as f64 - 1.0 - 2.0 * margin;
        let span_y = height as f64 - 1.0 - 2.0 * margin;
        if span_x < step || span_y < step {
            return Err(FieldError::InvalidGrid(format!(
                "image {width}x{height} too small for margin {margin} and step {step}"
            )));
        }
        let nx = (span_x / step).floor() as usize + 1;
        let ny = (span_y / step).floor() as usize + 1;
        let ox = ((width as f64 - 1.0) - (nx - 1) as f64 * step) / 2.0;
        let oy = ((height as f64 - 1.0) - (ny - 1) as f64 * step) / 2.0;
        Self::new([ox.round(), oy.round()], step, nx, ny)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + self.spacing * i as f64,
            self.origin[1] + self.spacing * j as f64,
        ]
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        let mut pts = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                pts.push(self.point(i, j));
            }
        }
        pts
    }

    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        (self.origin, self.point(self.nx - 1, self.ny - 1))
    }

    /// Whether every point lies inside `img` with at least `margin` pixels to spare.
    pub fn fits_in(&self, img: &GrayImage, margin: f64) -> bool {
        let (lo, hi) = self.extent();
        lo[0] >= margin
            && lo[1] >= margin
            && hi[0] <= img.width() as f64 - 1.0 - margin
            && hi[1] <= img.height() as f64 - 1.0 - margin
    }
}
