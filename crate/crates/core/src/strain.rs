//! Logarithmic strain fields from displacement fields.
//!
//! At every grid point a plane is least-squares fitted to each displacement component
//! over a square window of neighboring valid points. The fitted slopes give the
//! displacement gradient, hence `F = I + ∂u/∂X` and `H = ½ ln(FᵀF)`.

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dic::DisplacementField;
use crate::field::{log_strain_2d, Axis, Grid2D};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrainError {
    #[error("strain window must be odd and >= 3, got {0}")]
    InvalidWindow(usize),
    #[error("region of interest contains no points")]
    EmptyRoi,
    #[error("region of interest {0:?} exceeds the {1}x{2} grid")]
    RoiOutsideGrid(Roi, usize, usize),
}

/// Least-squares fit needs at least this many points for two 3-parameter planes.
pub const MIN_WINDOW_POINTS: usize = 6;

/// Strain component selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Exx,
    Eyy,
    Exy,
    E1,
    E2,
    Axial,
    Transverse,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Exx,
        Component::Eyy,
        Component::Exy,
        Component::E1,
        Component::E2,
        Component::Axial,
        Component::Transverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Exx => "exx",
            Component::Eyy => "eyy",
            Component::Exy => "exy",
            Component::E1 => "e1",
            Component::E2 => "e2",
            Component::Axial => "axial",
            Component::Transverse => "transverse",
        }
    }
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown strain component '{s}'"))
    }
}

/// Per-point 2-D logarithmic strain on a grid. Invalid points hold `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogStrainField {
    pub grid: Grid2D,
    pub axis: Axis,
    /// `(εxx, εyy, εxy)`.
    pub h: Vec<[f64; 3]>,
    /// `(ε1, ε2, angle of ε1 from the x axis in degrees)`, `ε1 ≥ ε2`.
    pub principal: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
    /// Points rejected for having fewer than six valid neighbors.
    pub underdetermined: usize,
    /// Points rejected for a non-positive fitted Jacobian.
    pub inverted: usize,
}

fn principal_of(h: [f64; 3]) -> [f64; 3] {
    let m = 0.5 * (h[0] + h[1]);
    let r = (0.25 * (h[0] - h[1]).powi(2) + h[2] * h[2]).sqrt();
    let angle = 0.5 * (2.0 * h[2]).atan2(h[0] - h[1]);
    [m + r, m - r, angle.to_degrees()]
}

impl LogStrainField {
    fn with_capacity(grid: Grid2D, axis: Axis) -> Self {
        let n = grid.len();
        Self {
            grid,
            axis,
            h: Vec::with_capacity(n),
            principal: Vec::with_capacity(n),
            valid: Vec::with_capacity(n),
            underdetermined: 0,
            inverted: 0,
        }
    }

    fn push(&mut self, h: Option<[f64; 3]>) {
        match h {
            Some(h) => {
                self.h.push(h);
                self.principal.push(principal_of(h));
                self.valid.push(true);
            }
            None => {
                self.h.push([f64::NAN; 3]);
                self.principal.push([f64::NAN; 3]);
                self.valid.push(false);
            }
        }
    }

    /// Builds a field from per-point strain tensors (`None` = invalid).
    pub fn from_tensors(grid: Grid2D, axis: Axis, values: impl IntoIterator<Item = Option<[f64; 3]>>) -> Self {
        let mut f = Self::with_capacity(grid, axis);
        for v in values {
            f.push(v);
        }
        assert_eq!(f.h.len(), grid.len(), "one tensor per grid point");
        f
    }

    /// Exact field of a known deformation gradient map, e.g. an imposed warp.
    pub fn from_gradient_fn(grid: Grid2D, axis: Axis, gradient: impl Fn([f64; 2]) -> Matrix2<f64>) -> Self {
        let values = grid.points().into_iter().map(|p| {
            log_strain_2d(&gradient(p)).ok().map(|h| [h[(0, 0)], h[(1, 1)], h[(0, 1)]])
        });
        Self::from_tensors(grid, axis, values)
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len().max(1) as f64
    }

    pub fn value(&self, c: Component, k: usize) -> f64 {
        let h = self.h[k];
        match c {
            Component::Exx => h[0],
            Component::Eyy => h[1],
            Component::Exy => h[2],
            Component::E1 => self.principal[k][0],
            Component::E2 => self.principal[k][1],
            Component::Axial => h[self.axis.index()],
            Component::Transverse => h[self.axis.transverse().index()],
        }
    }

    pub fn values(&self, c: Component) -> Vec<f64> {
        (0..self.len()).map(|k| self.value(c, k)).collect()
    }
}

/// Fits the displacement gradient at every grid point over a `window x window` neighborhood.
pub fn strain_from_displacement(
    field: &DisplacementField,
    window: usize,
    axis: Axis,
) -> Result<LogStrainField, StrainError> {
    if window < 3 || window % 2 == 0 {
        return Err(StrainError::InvalidWindow(window));
    }
    let grid = field.grid;
    let half = (window / 2) as isize;
    let mut out = LogStrainField::with_capacity(grid, axis);
    for j in 0..grid.ny as isize {
        for i in 0..grid.nx as isize {
            let k = grid.index(i as usize, j as usize);
            if !field.valid[k] {
                out.push(None);
                continue;
            }
            let mut normal = Matrix3::zeros();
            let mut rhs_u = Vector3::zeros();
            let mut rhs_v = Vector3::zeros();
            let mut count = 0;
            for dj in -half..=half {
                for di in -half..=half {
                    let (ii, jj) = (i + di, j + dj);
                    if ii < 0 || jj < 0 || ii >= grid.nx as isize || jj >= grid.ny as isize {
                        continue;
                    }
                    let m = grid.index(ii as usize, jj as usize);
                    if !field.valid[m] {
                        continue;
                    }
                    let row = Vector3::new(1.0, di as f64 * grid.spacing, dj as f64 * grid.spacing);
                    normal += row * row.transpose();
                    rhs_u += row * field.u[m][0];
                    rhs_v += row * field.u[m][1];
                    count += 1;
                }
            }
            if count < MIN_WINDOW_POINTS {
                out.underdetermined += 1;
                out.push(None);
                continue;
            }
            let Some(chol) = normal.cholesky() else {
                // Collinear neighbors: the plane is not determined.
                out.underdetermined += 1;
                out.push(None);
                continue;
            };
            let cu = chol.solve(&rhs_u);
            let cv = chol.solve(&rhs_v);
            let f = Matrix2::new(1.0 + cu[1], cu[2], cv[1], 1.0 + cv[2]);
            match log_strain_2d(&f) {
                Ok(h) => out.push(Some([h[(0, 0)], h[(1, 1)], h[(0, 1)]])),
                Err(_) => {
                    out.inverted += 1;
                    out.push(None);
                }
            }
        }
    }
    Ok(out)
}

/// Index-range sub-block of a grid (`i0..i1` by `j0..j1`, exclusive ends).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Roi {
    pub fn full(grid: &Grid2D) -> Self {
        Self { i0: 0, i1: grid.nx, j0: 0, j1: grid.ny }
    }

    /// Row band `j0..j1` across the full width.
    pub fn rows(grid: &Grid2D, j0: usize, j1: usize) -> Self {
        Self { i0: 0, i1: grid.nx, j0, j1 }
    }

    /// Column band `i0..i1` across the full height.
    pub fn columns(grid: &Grid2D, i0: usize, i1: usize) -> Self {
        Self { i0, i1, j0: 0, j1: grid.ny }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub points: usize,
    pub valid_fraction: f64,
    /// One entry per [`Component::ALL`] member, in that order; `None` if no valid point.
    pub components: Vec<(Component, Option<ComponentStats>)>,
}

impl FieldStats {
    pub fn get(&self, c: Component) -> Option<ComponentStats> {
        self.components.iter().find(|(k, _)| *k == c).and_then(|(_, s)| *s)
    }
}

/// Statistics over the valid points of `roi`.
pub fn field_stats(f: &LogStrainField, roi: Roi) -> Result<FieldStats, StrainError> {
    if roi.i1 > f.grid.nx || roi.j1 > f.grid.ny {
        return Err(StrainError::RoiOutsideGrid(roi, f.grid.nx, f.grid.ny));
    }
    if roi.i0 >= roi.i1 || roi.j0 >= roi.j1 {
        return Err(StrainError::EmptyRoi);
    }
    let idx: Vec<usize> = (roi.j0..roi.j1)
        .flat_map(|j| (roi.i0..roi.i1).map(move |i| (i, j)))
        .map(|(i, j)| f.grid.index(i, j))
        .collect();
    let valid: Vec<usize> = idx.iter().copied().filter(|&k| f.valid[k]).collect();
    let components = Component::ALL
        .into_iter()
        .map(|c| {
            if valid.is_empty() {
                return (c, None);
            }
            let vals: Vec<f64> = valid.iter().map(|&k| f.value(c, k)).collect();
            // Shifted by the first value so that uniform fields give exact results.
            let n = vals.len() as f64;
            let shift = vals[0];
            let dev_mean = vals.iter().map(|v| v - shift).sum::<f64>() / n;
            let mean = shift + dev_mean;
            let sd = (vals.iter().map(|v| (v - shift - dev_mean).powi(2)).sum::<f64>() / n).sqrt();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (c, Some(ComponentStats { mean, sd, min, max }))
        })
        .collect();
    Ok(FieldStats { points: idx.len(), valid_fraction: valid.len() as f64 / idx.len() as f64, components })
}
