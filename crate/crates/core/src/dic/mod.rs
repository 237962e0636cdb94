//! Subset-based digital image correlation.
//!
//! Each grid point is matched independently: an integer-pixel ZNCC search (or a seed from
//! a converged neighbor) provides the starting point, and inverse-compositional
//! Gauss–Newton on an affine subset warp refines it by minimizing ZNSSD. Points whose
//! final ZNCC falls below the acceptance threshold, or which do not converge, are marked
//! invalid and carry `NaN` displacements: tracking failure stays visible downstream.

mod sequence;
mod subset;

pub use self::sequence::{correlate_sequence, FrameReport, SequenceResult};
pub use self::subset::{AffineParams, SubsetResult};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use self::subset::{integer_search, refine, ReferenceSubset};
use crate::field::{FieldError, GrayImage, Grid2D};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DicError {
    #[error("invalid DIC configuration: {0}")]
    InvalidConfig(String),
    #[error("image sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("subset around grid point ({x}, {y}) leaves the reference image")]
    GridOutsideImage { x: f64, y: f64 },
    #[error("no grid point could be correlated")]
    AllPointsInvalid,
    #[error("a sequence needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {frame}: {source}")]
    Frame { frame: usize, source: Box<DicError> },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DicConfig {
    pub subset_size: usize,
    pub step: usize,
    pub search_radius: usize,
    pub zncc_accept: f64,
    pub gn_tol: f64,
    pub gn_max_iter: u32,
    pub reference_update_zncc: f64,
}

impl Default for DicConfig {
    fn default() -> Self {
        Self {
            subset_size: 31,
            step: 10,
            search_radius: 20,
            zncc_accept: 0.7,
            gn_tol: 1e-4,
            gn_max_iter: 50,
            reference_update_zncc: 0.9,
        }
    }
}

impl DicConfig {
    pub fn validate(&self) -> Result<(), DicError> {
        let bad = |m: String| Err(DicError::InvalidConfig(m));
        if self.subset_size % 2 == 0 || self.subset_size < 11 {
            return bad(format!("subset_size must be odd and >= 11, got {}", self.subset_size));
        }
        if self.step < 1 {
            return bad("step must be >= 1".into());
        }
        if !(self.zncc_accept > 0.0 && self.zncc_accept < 1.0) {
            return bad(format!("zncc_accept must lie in (0, 1), got {}", self.zncc_accept));
        }
        if !(self.gn_tol > 0.0) {
            return bad(format!("gn_tol must be positive, got {}", self.gn_tol));
        }
        if self.gn_max_iter == 0 {
            return bad("gn_max_iter must be >= 1".into());
        }
        if !(self.reference_update_zncc > -1.0 && self.reference_update_zncc <= 1.0) {
            return bad(format!("reference_update_zncc must lie in (-1, 1], got {}", self.reference_update_zncc));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        (self.subset_size - 1) / 2
    }

    /// Largest centered grid at this config's step whose subsets fit in a `width x height` image.
    pub fn default_grid(&self, width: usize, height: usize) -> Result<Grid2D, DicError> {
        Ok(Grid2D::centered(width, height, self.step as f64, self.half() as f64 + 1.0)?)
    }
}

/// Displacements from a reference to a deformed image, sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub grid: Grid2D,
    /// Pixels; `NaN` where `valid` is false.
    pub u: Vec<[f64; 2]>,
    pub zncc: Vec<f64>,
    pub valid: Vec<bool>,
    pub iterations: Vec<u32>,
}

impl DisplacementField {
    /// Field of zero displacement with every point valid.
    pub fn zero(grid: Grid2D) -> Self {
        let n = grid.len();
        Self { grid, u: vec![[0.0; 2]; n], zncc: vec![1.0; n], valid: vec![true; n], iterations: vec![0; n] }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.valid.len().max(1) as f64
    }

    /// Mean ZNCC over valid points (`NaN` if there are none).
    pub fn mean_zncc(&self) -> f64 {
        let (s, n) = self
            .zncc
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .fold((0.0, 0usize), |(s, n), (z, _)| (s + z, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            s / n as f64
        }
    }

    /// Whether two fields hold bit-identical numbers.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.valid == other.valid
            && self.iterations == other.iterations
            && self.zncc.iter().zip(&other.zncc).all(|(a, b)| a.to_bits() == b.to_bits())
            && self
                .u
                .iter()
                .zip(&other.u)
                .all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PointOutcome {
    pub params: AffineParams,
    pub zncc: f64,
    pub valid: bool,
    pub iterations: u32,
}

impl PointOutcome {
    fn lost() -> Self {
        Self { params: AffineParams::default(), zncc: f64::NAN, valid: false, iterations: 0 }
    }
}

/// Correlates subsets centered at `centers` (row-major, `nx` per row; `None` = not
/// tracked). Rows run in parallel; along a row each point seeds from its left neighbor.
pub(crate) fn correlate_points(
    reference: &GrayImage,
    deformed: &GrayImage,
    centers: &[Option<[f64; 2]>],
    nx: usize,
    guesses: &[Option<AffineParams>],
    cfg: &DicConfig,
) -> Vec<PointOutcome> {
    debug_assert_eq!(centers.len() % nx, 0);
    debug_assert_eq!(centers.len(), guesses.len());
    let half = cfg.half();
    centers
        .par_chunks(nx)
        .zip(guesses.par_chunks(nx))
        .flat_map_iter(|(row_centers, row_guesses)| {
            let mut out = Vec::with_capacity(nx);
            let mut neighbor: Option<([f64; 2], AffineParams)> = None;
            for (center, guess) in row_centers.iter().zip(row_guesses) {
                let outcome = match center {
                    Some(c) => correlate_one(reference, deformed, *c, *guess, neighbor, half, cfg),
                    None => PointOutcome::lost(),
                };
                neighbor = match (center, outcome.valid) {
                    (Some(c), true) => Some((*c, outcome.params)),
                    _ => None,
                };
                out.push(outcome);
            }
            out
        })
        .collect()
}

fn correlate_one(
    reference: &GrayImage,
    deformed: &GrayImage,
    center: [f64; 2],
    guess: Option<AffineParams>,
    neighbor: Option<([f64; 2], AffineParams)>,
    half: usize,
    cfg: &DicConfig,
) -> PointOutcome {
    let Some(subset) = ReferenceSubset::new(reference, center, half) else {
        return PointOutcome::lost();
    };
    let mut best: Option<SubsetResult> = None;
    let mut consider = |res: SubsetResult| -> bool {
        let ok = res.is_valid(cfg);
        let better = match &best {
            None => true,
            Some(b) => ok || (!b.is_valid(cfg) && res.zncc > b.zncc),
        };
        if better {
            best = Some(res);
        }
        ok
    };

    let mut done = false;
    if let Some(g) = guess {
        done = consider(refine(&subset, deformed, g, cfg));
    }
    if !done {
        if let Some((nc, np)) = neighbor {
            let seed = np.shifted(center[0] - nc[0], center[1] - nc[1]);
            done = consider(refine(&subset, deformed, seed, cfg));
        }
    }
    if !done {
        let around = guess.map_or([0, 0], |g| [g.u().round() as i64, g.v().round() as i64]);
        if let Some((u, v, _)) = integer_search(reference, deformed, subset.center(), half, around, cfg.search_radius) {
            consider(refine(&subset, deformed, AffineParams::translation(u as f64, v as f64), cfg));
        }
    }
    match best {
        Some(res) => PointOutcome {
            valid: res.is_valid(cfg),
            zncc: res.zncc,
            params: res.params,
            iterations: res.iterations,
        },
        None => PointOutcome::lost(),
    }
}

fn check_pair(reference: &GrayImage, deformed: &GrayImage) -> Result<(), DicError> {
    let a = (reference.width(), reference.height());
    let b = (deformed.width(), deformed.height());
    if a != b {
        return Err(DicError::SizeMismatch(a, b));
    }
    Ok(())
}

fn check_grid(reference: &GrayImage, grid: &Grid2D, cfg: &DicConfig) -> Result<(), DicError> {
    let margin = cfg.half() as f64 + 1.0;
    if !grid.fits_in(reference, margin) {
        let (lo, hi) = grid.extent();
        let (x, y) = if lo[0] < margin || lo[1] < margin { (lo[0], lo[1]) } else { (hi[0], hi[1]) };
        return Err(DicError::GridOutsideImage { x, y });
    }
    Ok(())
}

pub(crate) fn outcomes_to_field(grid: Grid2D, outcomes: &[PointOutcome], base: Option<&[[f64; 2]]>) -> DisplacementField {
    let n = grid.len();
    let mut field = DisplacementField {
        grid,
        u: vec![[f64::NAN; 2]; n],
        zncc: vec![f64::NAN; n],
        valid: vec![false; n],
        iterations: vec![0; n],
    };
    for (k, o) in outcomes.iter().enumerate() {
        field.zncc[k] = o.zncc;
        field.iterations[k] = o.iterations;
        if o.valid {
            let b = base.map_or([0.0; 2], |b| b[k]);
            field.u[k] = [b[0] + o.params.u(), b[1] + o.params.v()];
            field.valid[k] = true;
        }
    }
    field
}

/// Displacement field from `reference` to `deformed` on `grid`.
pub fn correlate_pair(
    reference: &GrayImage,
    deformed: &GrayImage,
    grid: &Grid2D,
    cfg: &DicConfig,
) -> Result<DisplacementField, DicError> {
    cfg.validate()?;
    check_pair(reference, deformed)?;
    check_grid(reference, grid, cfg)?;
    let centers: Vec<Option<[f64; 2]>> = grid.points().into_iter().map(Some).collect();
    let guesses = vec![None; centers.len()];
    let outcomes = correlate_points(reference, deformed, &centers, grid.nx, &guesses, cfg);
    let field = outcomes_to_field(*grid, &outcomes, None);
    if field.valid_count() == 0 {
        return Err(DicError::AllPointsInvalid);
    }
    Ok(field)
}
