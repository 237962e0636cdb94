use serde::{Deserialize, Serialize};

use super::{
    check_grid, check_pair, correlate_points, outcomes_to_field, AffineParams, DicConfig, DicError,
    DisplacementField, PointOutcome,
};
use crate::field::{GrayImage, Grid2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    /// Frame the subsets were taken from when correlating this frame.
    pub reference_frame: usize,
    /// Mean ZNCC over the points that were still tracked (`NaN` if none).
    pub mean_zncc: f64,
    pub valid_fraction: f64,
    pub reference_updated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    /// Cumulative displacement of each grid point relative to frame 0.
    pub fields: Vec<DisplacementField>,
    pub frames: Vec<FrameReport>,
    /// First frame in which no point could be correlated.
    pub first_failed_frame: Option<usize>,
}

impl SequenceResult {
    /// Frames whose valid fraction is below `threshold`.
    pub fn degraded_frames(&self, threshold: f64) -> Vec<usize> {
        self.frames.iter().filter(|f| f.valid_fraction < threshold).map(|f| f.frame).collect()
    }
}

fn mean_attempted_zncc(outcomes: &[PointOutcome], centers: &[Option<[f64; 2]>]) -> f64 {
    let (s, n) = outcomes
        .iter()
        .zip(centers)
        .filter(|(o, c)| c.is_some() && o.zncc.is_finite())
        .fold((0.0, 0usize), |(s, n), (o, _)| (s + o.zncc, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Tracks `grid` (defined on frame 0) through `frames`.
///
/// Subsets are taken from the current reference frame. When a frame's mean ZNCC falls
/// below `reference_update_zncc`, the reference moves to the previous frame, subsets are
/// re-centered on the tracked positions there, and displacements are chained. Points
/// lost at a reference update stay invalid for the rest of the sequence.
pub fn correlate_sequence(
    frames: &[GrayImage],
    grid: &Grid2D,
    cfg: &DicConfig,
) -> Result<SequenceResult, DicError> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(DicError::TooFewFrames(frames.len()));
    }
    for (k, f) in frames.iter().enumerate().skip(1) {
        check_pair(&frames[0], f).map_err(|e| DicError::Frame { frame: k, source: Box::new(e) })?;
    }
    check_grid(&frames[0], grid, cfg)?;

    let origins = grid.points();
    let n = origins.len();
    let mut reference = 0usize;
    let mut base = vec![[0.0f64; 2]; n];
    let mut centers: Vec<Option<[f64; 2]>> = origins.iter().copied().map(Some).collect();
    let mut guesses: Vec<Option<AffineParams>> = vec![None; n];

    let mut fields = vec![DisplacementField::zero(*grid)];
    let mut reports = vec![FrameReport {
        frame: 0,
        reference_frame: 0,
        mean_zncc: 1.0,
        valid_fraction: 1.0,
        reference_updated: false,
    }];
    let mut first_failed_frame = None;

    for k in 1..frames.len() {
        let mut outcomes = correlate_points(&frames[reference], &frames[k], &centers, grid.nx, &guesses, cfg);
        let mut mean = mean_attempted_zncc(&outcomes, &centers);
        let mut updated = false;
        if !(mean >= cfg.reference_update_zncc) && reference + 1 < k {
            reference = k - 1;
            updated = true;
            let last = &fields[k - 1];
            let before = (k >= 2).then(|| &fields[k - 2]);
            for i in 0..n {
                if last.valid[i] {
                    base[i] = last.u[i];
                    centers[i] = Some([origins[i][0] + base[i][0], origins[i][1] + base[i][1]]);
                    // Predict the next increment from the last one.
                    guesses[i] = before.filter(|b| b.valid[i]).map(|b| {
                        AffineParams::translation(last.u[i][0] - b.u[i][0], last.u[i][1] - b.u[i][1])
                    });
                } else {
                    base[i] = [f64::NAN; 2];
                    centers[i] = None;
                    guesses[i] = None;
                }
            }
            outcomes = correlate_points(&frames[reference], &frames[k], &centers, grid.nx, &guesses, cfg);
            mean = mean_attempted_zncc(&outcomes, &centers);
        }

        let field = outcomes_to_field(*grid, &outcomes, Some(&base));
        for (g, o) in guesses.iter_mut().zip(&outcomes) {
            if o.valid {
                *g = Some(o.params);
            }
        }
        if field.valid_count() == 0 && first_failed_frame.is_none() {
            first_failed_frame = Some(k);
        }
        reports.push(FrameReport {
            frame: k,
            reference_frame: reference,
            mean_zncc: mean,
            valid_fraction: field.valid_fraction(),
            reference_updated: updated,
        });
        fields.push(field);
    }
    Ok(SequenceResult { fields, frames: reports, first_failed_frame })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speckle::{ramp_sequence, render_speckle, rerandomized_sequence, SpecklePattern, WarpSpec};

    #[test]
    fn identical_frames() {
        let img = render_speckle(&SpecklePattern::default(), 160, 160).unwrap();
        let frames = vec![img; 5];
        let cfg = DicConfig::default();
        let grid = cfg.default_grid(160, 160).unwrap();
        let res = correlate_sequence(&frames, &grid, &cfg).unwrap();
        assert_eq!(res.fields.len(), 5);
        assert!(res.frames.iter().all(|f| !f.reference_updated && f.valid_fraction == 1.0));
        assert!(res.fields.iter().all(|f| f.u.iter().all(|u| u[0].abs() < 1e-9 && u[1].abs() < 1e-9)));
        assert_eq!(res.first_failed_frame, None);
    }

    #[test]
    fn too_few_frames() {
        let img = render_speckle(&SpecklePattern::default(), 128, 128).unwrap();
        let cfg = DicConfig::default();
        let grid = cfg.default_grid(128, 128).unwrap();
        assert!(matches!(correlate_sequence(&[img], &grid, &cfg), Err(DicError::TooFewFrames(1))));
    }

    #[test]
    fn compression_ramp_tracks_imposed_warp() {
        let img = render_speckle(&SpecklePattern::with_seed(8), 200, 200).unwrap();
        let g = (-0.1f64).exp();
        let warp = WarpSpec::Homogeneous { gradient: [[1.0, 0.0], [0.0, g]], center: None };
        let (frames, maps) = ramp_sequence(&img, &warp, 10).unwrap();
        let cfg = DicConfig::default();
        let grid = cfg.default_grid(200, 200).unwrap();
        let res = correlate_sequence(&frames, &grid, &cfg).unwrap();
        let last = res.fields.last().unwrap();
        let pts = grid.points();
        let (mut s, mut n) = (0.0, 0.0);
        for (k, p) in pts.iter().enumerate() {
            if last.valid[k] {
                let t = maps[9].displacement(*p);
                s += (last.u[k][0] - t[0]).powi(2) + (last.u[k][1] - t[1]).powi(2);
                n += 1.0;
            }
        }
        assert!(n > 0.0);
        assert!((s / n).sqrt() < 0.05, "rms {}", (s / n).sqrt());
    }

    #[test]
    fn forced_reference_update_chains_displacements() {
        let img = render_speckle(&SpecklePattern::with_seed(9), 200, 200).unwrap();
        let warp = WarpSpec::Translation { shift: [6.0, -4.5] };
        let (frames, maps) = ramp_sequence(&img, &warp, 4).unwrap();
        // A threshold above any attainable ZNCC forces an update at every frame.
        let cfg = DicConfig { reference_update_zncc: 1.0, ..Default::default() };
        let grid = cfg.default_grid(200, 200).unwrap();
        let res = correlate_sequence(&frames, &grid, &cfg).unwrap();
        assert!(res.frames[2].reference_updated && res.frames[3].reference_updated);
        assert_eq!(res.frames[3].reference_frame, 2);
        let last = res.fields.last().unwrap();
        let t = maps[3].displacement([0.0, 0.0]);
        for (k, u) in last.u.iter().enumerate() {
            if last.valid[k] {
                assert!((u[0] - t[0]).abs() < 0.05 && (u[1] - t[1]).abs() < 0.05);
            }
        }
        assert!(last.valid_fraction() > 0.8);
    }

    #[test]
    fn texture_break_is_reported() {
        let pattern = SpecklePattern::with_seed(10);
        let warp = WarpSpec::Homogeneous { gradient: [[1.0, 0.0], [0.0, 0.95]], center: None };
        let (frames, _) = rerandomized_sequence(&pattern, 160, 160, &warp, 6, 3).unwrap();
        let cfg = DicConfig::default();
        let grid = cfg.default_grid(160, 160).unwrap();
        let res = correlate_sequence(&frames, &grid, &cfg).unwrap();
        assert!(res.frames[2].valid_fraction > 0.9);
        assert!(res.frames[3].valid_fraction < 0.5);
        assert!(res.degraded_frames(0.5).contains(&3));
        let broken = &res.fields[3];
        for (u, v) in broken.u.iter().zip(&broken.valid) {
            assert!(*v || (u[0].is_nan() && u[1].is_nan()));
        }
    }
}
