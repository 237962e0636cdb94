//! Synthetic speckle images and exactly known warps.
//!
//! A speckle image is a mid-gray background with superposed Gaussian dots of random
//! polarity. Warps are applied by pull-back: each output pixel samples the source image
//! at the pre-image of its position, so the displacement of every material point is
//! known in closed form and serves as ground truth for correlation.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{bicubic_sample, Axis, FieldError, GrayImage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpeckleError {
    #[error("degenerate speckle parameters: {0}")]
    DegenerateParameters(String),
    #[error("invalid warp: {0}")]
    InvalidWarp(String),
    #[error("inverse map leaves the sampleable region at ({x}, {y})")]
    OutOfBounds { x: f64, y: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecklePattern {
    pub seed: u64,
    pub dots_per_kilopixel: f64,
    pub dot_radius_mean: f64,
    pub dot_radius_sd: f64,
    pub contrast: f64,
}

impl Default for SpecklePattern {
    fn default() -> Self {
        Self {
            seed: 1,
            dots_per_kilopixel: 60.0,
            dot_radius_mean: 2.5,
            dot_radius_sd: 0.5,
            contrast: 0.8,
        }
    }
}

impl SpecklePattern {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

const MIN_RADIUS: f64 = 0.5;
const BACKGROUND: f64 = 0.5;

/// Renders a deterministic speckle image of `width x height` pixels.
pub fn render_speckle(
    pattern: &SpecklePattern,
    width: usize,
    height: usize,
) -> Result<GrayImage, SpeckleError> {
    if width < 64 || height < 64 {
        return Err(SpeckleError::DegenerateParameters(format!(
            "image must be at least 64x64, got {width}x{height}"
        )));
    }
    if !(pattern.contrast > 0.0 && pattern.contrast <= 1.0) {
        return Err(SpeckleError::DegenerateParameters(format!(
            "contrast must lie in (0, 1], got {}",
            pattern.contrast
        )));
    }
    if !(pattern.dots_per_kilopixel > 0.0 && pattern.dot_radius_mean > MIN_RADIUS && pattern.dot_radius_sd >= 0.0)
    {
        return Err(SpeckleError::DegenerateParameters(
            "density and mean radius must be positive (radius > 0.5 px)".into(),
        ));
    }

    // Dots are scattered over a padded canvas so that the border is as dense as the interior.
    let pad = (pattern.dot_radius_mean + 3.0 * pattern.dot_radius_sd) * 3.0;
    let area = (width as f64 + 2.0 * pad) * (height as f64 + 2.0 * pad);
    let count = (pattern.dots_per_kilopixel * area / 1000.0).round() as usize;
    if count < 10 {
        return Err(SpeckleError::DegenerateParameters(format!("only {count} dots would be drawn")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(pattern.seed);
    let radius = Normal::new(pattern.dot_radius_mean, pattern.dot_radius_sd)
        .map_err(|e| SpeckleError::DegenerateParameters(e.to_string()))?;
    // Overlapping dots add up; scale each so the field's standard deviation is a quarter
    // of the contrast and clipping stays rare.
    let second_moment = pattern.dot_radius_mean.powi(2) + pattern.dot_radius_sd.powi(2);
    let overlap = pattern.dots_per_kilopixel / 1000.0 * std::f64::consts::PI * second_moment;
    let amplitude = 0.25 * pattern.contrast / overlap.sqrt();

    let mut canvas = vec![BACKGROUND; width * height];
    for _ in 0..count {
        let cx = rng.gen_range(-pad..width as f64 + pad);
        let cy = rng.gen_range(-pad..height as f64 + pad);
        let r = radius.sample(&mut rng).max(MIN_RADIUS + 0.01);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let reach = 4.0 * r;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as isize).min(width as isize - 1);
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as isize).min(height as isize - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        let inv = 0.5 / (r * r);
        for y in y0..=y1 as usize {
            let dy = y as f64 - cy;
            for x in x0..=x1 as usize {
                let dx = x as f64 - cx;
                canvas[y * width + x] += sign * amplitude * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    for v in canvas.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(GrayImage::new(width, height, canvas)?)
}

/// Declarative warp description, resolved against an image size by [`WarpSpec::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WarpSpec {
    Translation {
        shift: [f64; 2],
    },
    Rotation {
        angle_deg: f64,
        #[serde(default)]
        center: Option<[f64; 2]>,
    },
    Homogeneous {
        /// Row-major deformation gradient.
        gradient: [[f64; 2]; 2],
        #[serde(default)]
        center: Option<[f64; 2]>,
    },
    BarreledCompression {
        axial_log_strain: f64,
        barrel: f64,
        #[serde(default)]
        center: Option<[f64; 2]>,
        #[serde(default)]
        axial_length: Option<f64>,
        #[serde(default)]
        axis: Axis,
    },
}

impl WarpSpec {
    pub fn identity() -> Self {
        WarpSpec::Translation { shift: [0.0, 0.0] }
    }

    /// Same warp kind with its magnitude scaled by `s` (for load ramps).
    pub fn scaled(&self, s: f64) -> Self {
        match self.clone() {
            WarpSpec::Translation { shift } => WarpSpec::Translation { shift: [shift[0] * s, shift[1] * s] },
            WarpSpec::Rotation { angle_deg, center } => WarpSpec::Rotation { angle_deg: angle_deg * s, center },
            WarpSpec::Homogeneous { gradient, center } => {
                let g = gradient;
                WarpSpec::Homogeneous {
                    gradient: [
                        [1.0 + s * (g[0][0] - 1.0), s * g[0][1]],
                        [s * g[1][0], 1.0 + s * (g[1][1] - 1.0)],
                    ],
                    center,
                }
            }
            WarpSpec::BarreledCompression { axial_log_strain, barrel, center, axial_length, axis } => {
                WarpSpec::BarreledCompression { axial_log_strain: axial_log_strain * s, barrel, center, axial_length, axis }
            }
        }
    }

    /// Fixes image-dependent defaults (center = image center, axial length = image extent
    /// along the axis) and validates parameters.
    pub fn resolve(&self, width: usize, height: usize) -> Result<WarpMap, SpeckleError> {
        let image_center = [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0];
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match *self {
            WarpSpec::Translation { shift } => {
                if !finite(&shift) {
                    return Err(SpeckleError::InvalidWarp("non-finite shift".into()));
                }
                Ok(WarpMap::Affine { center: [0.0, 0.0], gradient: Matrix2::identity(), shift })
            }
            WarpSpec::Rotation { angle_deg, center } => {
                if !angle_deg.is_finite() {
                    return Err(SpeckleError::InvalidWarp("non-finite angle".into()));
                }
                let (s, c) = angle_deg.to_radians().sin_cos();
                Ok(WarpMap::Affine {
                    center: center.unwrap_or(image_center),
                    gradient: Matrix2::new(c, -s, s, c),
                    shift: [0.0, 0.0],
                })
            }
            WarpSpec::Homogeneous { gradient, center } => {
                let g = Matrix2::new(gradient[0][0], gradient[0][1], gradient[1][0], gradient[1][1]);
                if !finite(g.as_slice()) || !(g.determinant() > 0.0) {
                    return Err(SpeckleError::InvalidWarp(format!(
                        "gradient must be finite with positive determinant, got det = {}",
                        g.determinant()
                    )));
                }
                Ok(WarpMap::Affine { center: center.unwrap_or(image_center), gradient: g, shift: [0.0, 0.0] })
            }
            WarpSpec::BarreledCompression { axial_log_strain, barrel, center, axial_length, axis } => {
                if !(axial_log_strain > -1.0 && axial_log_strain <= 0.0) {
                    return Err(SpeckleError::InvalidWarp(format!(
                        "axial log strain must lie in (-1, 0], got {axial_log_strain}"
                    )));
                }
                if !(barrel >= 0.0 && barrel.is_finite()) {
                    return Err(SpeckleError::InvalidWarp(format!("barrel amplitude must be >= 0, got {barrel}")));
                }
                let length = axial_length.unwrap_or(match axis {
                    Axis::X => width as f64,
                    Axis::Y => height as f64,
                });
                if !(length > 0.0) {
                    return Err(SpeckleError::InvalidWarp("axial length must be positive".into()));
                }
                let eff = axial_log_strain.exp() - 1.0;
                // The transverse stretch must stay positive everywhere for the map to be invertible.
                if 1.0 - 0.5 * eff * (1.0 + barrel) <= 0.0 {
                    return Err(SpeckleError::InvalidWarp("transverse stretch not positive".into()));
                }
                Ok(WarpMap::Barrel { eff, barrel, center: center.unwrap_or(image_center), length, axis })
            }
        }
    }
}

/// Resolved warp `x = φ(X)` with closed-form displacement, gradient and inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarpMap {
    /// `φ(X) = c + G (X − c) + shift`.
    Affine { center: [f64; 2], gradient: Matrix2<f64>, shift: [f64; 2] },
    /// Axial compression with a cosine barrel profile of the transverse expansion.
    Barrel { eff: f64, barrel: f64, center: [f64; 2], length: f64, axis: Axis },
}

impl WarpMap {
    pub fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        let u = self.displacement(p);
        [p[0] + u[0], p[1] + u[1]]
    }

    /// Ground-truth displacement `u(X) = φ(X) − X`.
    pub fn displacement(&self, p: [f64; 2]) -> [f64; 2] {
        match *self {
            WarpMap::Affine { center, gradient: g, shift } => {
                let d = [p[0] - center[0], p[1] - center[1]];
                [
                    (g[(0, 0)] - 1.0) * d[0] + g[(0, 1)] * d[1] + shift[0],
                    g[(1, 0)] * d[0] + (g[(1, 1)] - 1.0) * d[1] + shift[1],
                ]
            }
            WarpMap::Barrel { eff, barrel, center, length, axis } => {
                let (a, t) = (axis.index(), axis.transverse().index());
                let s = p[a] - center[a];
                let profile = 1.0 + barrel * (std::f64::consts::PI * s / length).cos();
                let mut u = [0.0; 2];
                u[a] = eff * s;
                u[t] = -0.5 * eff * profile * (p[t] - center[t]);
                u
            }
        }
    }

    /// Deformation gradient `F = ∂φ/∂X` at reference point `p`.
    pub fn gradient(&self, p: [f64; 2]) -> Matrix2<f64> {
        match *self {
            WarpMap::Affine { gradient, .. } => gradient,
            WarpMap::Barrel { eff, barrel, center, length, axis } => {
                let (a, t) = (axis.index(), axis.transverse().index());
                let s = p[a] - center[a];
                let k = std::f64::consts::PI / length;
                let mut f = Matrix2::identity();
                f[(a, a)] = 1.0 + eff;
                f[(t, t)] = 1.0 - 0.5 * eff * (1.0 + barrel * (k * s).cos());
                f[(t, a)] = 0.5 * eff * barrel * k * (k * s).sin() * (p[t] - center[t]);
                f
            }
        }
    }

    /// Pre-image `X = φ⁻¹(x)`.
    pub fn inverse(&self, x: [f64; 2]) -> [f64; 2] {
        match *self {
            WarpMap::Affine { center, gradient, shift } => {
                let inv = gradient.try_inverse().expect("validated positive determinant");
                let d = nalgebra::Vector2::new(x[0] - shift[0] - center[0], x[1] - shift[1] - center[1]);
                let r = inv * d;
                [center[0] + r[0], center[1] + r[1]]
            }
            WarpMap::Barrel { eff, barrel, center, length, axis } => {
                // The axial motion is independent of the transverse coordinate and the
                // transverse motion is linear in it, so both solve exactly.
                let (a, t) = (axis.index(), axis.transverse().index());
                let s = (x[a] - center[a]) / (1.0 + eff);
                let stretch = 1.0 - 0.5 * eff * (1.0 + barrel * (std::f64::consts::PI * s / length).cos());
                let mut p = [0.0; 2];
                p[a] = center[a] + s;
                p[t] = center[t] + (x[t] - center[t]) / stretch;
                p
            }
        }
    }
}

/// Warps `img` by pull-back through `warp`; returns the warped image and the resolved map.
///
/// Pre-images falling outside the bicubic-sampleable rectangle `[1, w-2] x [1, h-2]` are
/// clamped onto it, which only affects border pixels the correlation grid never uses.
pub fn warp_image(img: &GrayImage, warp: &WarpSpec) -> Result<(GrayImage, WarpMap), SpeckleError> {
    let map = warp.resolve(img.width(), img.height())?;
    let out = warp_with_map(img, &map)?;
    Ok((out, map))
}

pub fn warp_with_map(img: &GrayImage, map: &WarpMap) -> Result<GrayImage, SpeckleError> {
    let (w, h) = (img.width(), img.height());
    if w < 4 || h < 4 {
        return Err(SpeckleError::DegenerateParameters("image too small to interpolate".into()));
    }
    let (xmax, ymax) = (w as f64 - 2.0, h as f64 - 2.0);
    let rows: Result<Vec<Vec<f64>>, SpeckleError> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let p = map.inverse([x as f64, y as f64]);
                if !(p[0].is_finite() && p[1].is_finite()) {
                    return Err(SpeckleError::OutOfBounds { x: p[0], y: p[1] });
                }
                let v = bicubic_sample(img, p[0].clamp(1.0, xmax), p[1].clamp(1.0, ymax))?;
                row.push(v.clamp(0.0, 1.0));
            }
            Ok(row)
        })
        .collect();
    let data: Vec<f64> = rows?.into_iter().flatten().collect();
    Ok(GrayImage::from_raw_unchecked(w, h, data))
}

/// Frames `0..frames` with the warp magnitude ramped linearly from zero to `warp`.
pub fn ramp_sequence(
    reference: &GrayImage,
    warp: &WarpSpec,
    frames: usize,
) -> Result<(Vec<GrayImage>, Vec<WarpMap>), SpeckleError> {
    if frames < 2 {
        return Err(SpeckleError::InvalidWarp("a sequence needs at least 2 frames".into()));
    }
    let mut images = Vec::with_capacity(frames);
    let mut maps = Vec::with_capacity(frames);
    for k in 0..frames {
        let s = k as f64 / (frames - 1) as f64;
        let (img, map) = warp_image(reference, &warp.scaled(s))?;
        images.push(img);
        maps.push(map);
    }
    Ok((images, maps))
}

/// Like [`ramp_sequence`] but from frame `break_frame` on the texture is replaced by an
/// unrelated pattern (seed + 1), so feature correspondence is lost at that frame.
pub fn rerandomized_sequence(
    pattern: &SpecklePattern,
    width: usize,
    height: usize,
    warp: &WarpSpec,
    frames: usize,
    break_frame: usize,
) -> Result<(Vec<GrayImage>, Vec<WarpMap>), SpeckleError> {
    if break_frame == 0 || break_frame >= frames {
        return Err(SpeckleError::InvalidWarp(format!("break frame {break_frame} outside 1..{frames}")));
    }
    let before = render_speckle(pattern, width, height)?;
    let after = render_speckle(&SpecklePattern { seed: pattern.seed.wrapping_add(1), ..*pattern }, width, height)?;
    let (mut images, maps) = ramp_sequence(&before, warp, frames)?;
    for (k, img) in images.iter_mut().enumerate().skip(break_frame) {
        *img = warp_with_map(&after, &maps[k])?;
    }
    Ok((images, maps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = render_speckle(&SpecklePattern::with_seed(1), 256, 256).unwrap();
        let b = render_speckle(&SpecklePattern::with_seed(1), 256, 256).unwrap();
        assert_eq!(a, b);
        let c = render_speckle(&SpecklePattern::with_seed(2), 256, 256).unwrap();
        let differing = a.intensities().iter().zip(c.intensities()).filter(|(x, y)| x != y).count();
        assert!(differing as f64 >= 0.01 * 256.0 * 256.0);
    }

    #[test]
    fn intensity_statistics() {
        for seed in [1, 7, 42] {
            let img = render_speckle(&SpecklePattern::with_seed(seed), 200, 160).unwrap();
            let m = img.mean();
            assert!((0.3..=0.7).contains(&m), "mean {m}");
            assert!(img.std_dev() > 0.05, "sd {}", img.std_dev());
        }
    }

    #[test]
    fn degenerate_parameters() {
        let zero = SpecklePattern { contrast: 0.0, ..Default::default() };
        assert!(matches!(render_speckle(&zero, 128, 128), Err(SpeckleError::DegenerateParameters(_))));
        let sparse = SpecklePattern { dots_per_kilopixel: 0.1, ..Default::default() };
        assert!(matches!(render_speckle(&sparse, 64, 64), Err(SpeckleError::DegenerateParameters(_))));
        assert!(render_speckle(&SpecklePattern::default(), 32, 128).is_err());
    }

    #[test]
    fn identity_warp_is_identity_inside() {
        let img = render_speckle(&SpecklePattern::default(), 96, 80).unwrap();
        let (out, _) = warp_image(&img, &WarpSpec::identity()).unwrap();
        for y in 1..79 {
            for x in 1..95 {
                assert!((out.get(x, y) - img.get(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_ground_truth_is_constant() {
        let map = WarpSpec::Translation { shift: [0.5, 0.25] }.resolve(128, 128).unwrap();
        for p in [[10.0, 20.0], [64.3, 100.9]] {
            assert_eq!(map.displacement(p), [0.5, 0.25]);
        }
    }

    #[test]
    fn homogeneous_ground_truth_strain() {
        let map = WarpSpec::Homogeneous { gradient: [[0.98, 0.0], [0.0, 1.0101]], center: None }
            .resolve(128, 128)
            .unwrap();
        let h = crate::field::log_strain_2d(&map.gradient([30.0, 90.0])).unwrap();
        assert!((h[(0, 0)] - 0.98f64.ln()).abs() < 1e-12);
        assert!((h[(0, 0)] + 0.020203).abs() < 1e-6);
    }

    #[test]
    fn inverse_roundtrips() {
        let specs = [
            WarpSpec::Rotation { angle_deg: 5.0, center: None },
            WarpSpec::Homogeneous { gradient: [[0.95, 0.02], [-0.01, 1.04]], center: Some([40.0, 50.0]) },
            WarpSpec::BarreledCompression { axial_log_strain: -0.1, barrel: 0.3, center: None, axial_length: Some(180.0), axis: Axis::Y },
            WarpSpec::BarreledCompression { axial_log_strain: -0.3, barrel: 0.5, center: None, axial_length: None, axis: Axis::X },
        ];
        for spec in &specs {
            let map = spec.resolve(200, 200).unwrap();
            for p in [[13.0, 171.5], [100.0, 100.0], [150.2, 33.3]] {
                let back = map.inverse(map.forward(p));
                assert!((back[0] - p[0]).abs() < 1e-10 && (back[1] - p[1]).abs() < 1e-10, "{spec:?}");
            }
        }
    }

    #[test]
    fn barrel_gradient_matches_finite_difference() {
        let map = WarpSpec::BarreledCompression { axial_log_strain: -0.2, barrel: 0.4, center: None, axial_length: Some(150.0), axis: Axis::Y }
            .resolve(200, 200)
            .unwrap();
        let p = [60.0, 41.0];
        let f = map.gradient(p);
        let h = 1e-5;
        for j in 0..2 {
            let mut a = p;
            let mut b = p;
            a[j] += h;
            b[j] -= h;
            let (fa, fb) = (map.forward(a), map.forward(b));
            for i in 0..2 {
                assert!(((fa[i] - fb[i]) / (2.0 * h) - f[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_warps() {
        let bad = WarpSpec::Homogeneous { gradient: [[1.0, 0.0], [0.0, -1.0]], center: None };
        assert!(matches!(bad.resolve(64, 64), Err(SpeckleError::InvalidWarp(_))));
        let tensile = WarpSpec::BarreledCompression { axial_log_strain: 0.1, barrel: 0.0, center: None, axial_length: None, axis: Axis::Y };
        assert!(tensile.resolve(64, 64).is_err());
        let neg_barrel = WarpSpec::BarreledCompression { axial_log_strain: -0.1, barrel: -0.1, center: None, axial_length: None, axis: Axis::Y };
        assert!(neg_barrel.resolve(64, 64).is_err());
    }

    #[test]
    fn translations_compose() {
        let img = render_speckle(&SpecklePattern::with_seed(3), 128, 128).unwrap();
        let (ab, _) = warp_image(&img, &WarpSpec::Translation { shift: [0.3, -0.2] }).unwrap();
        let (ab, _) = warp_image(&ab, &WarpSpec::Translation { shift: [0.4, 0.5] }).unwrap();
        let (direct, _) = warp_image(&img, &WarpSpec::Translation { shift: [0.7, 0.3] }).unwrap();
        let mut worst = 0.0f64;
        for y in 8..120 {
            for x in 8..120 {
                worst = worst.max((ab.get(x, y) - direct.get(x, y)).abs());
            }
        }
        // Two interpolation passes versus one; the bound is on the mean, not the worst pixel.
        let mean: f64 = (8..120)
            .flat_map(|y| (8..120).map(move |x| (x, y)))
            .map(|(x, y)| (ab.get(x, y) - direct.get(x, y)).abs())
            .sum::<f64>()
            / (112.0 * 112.0);
        assert!(mean < 1e-3, "mean {mean}, worst {worst}");
    }

    #[test]
    fn warp_then_unwarp_recovers_original() {
        let img = render_speckle(&SpecklePattern::with_seed(5), 160, 160).unwrap();
        let spec = WarpSpec::BarreledCompression { axial_log_strain: -0.05, barrel: 0.3, center: None, axial_length: None, axis: Axis::Y };
        let (warped, map) = warp_image(&img, &spec).unwrap();
        let mut err = 0.0;
        let mut n = 0.0;
        for y in 20..140 {
            for x in 20..140 {
                let q = map.forward([x as f64, y as f64]);
                err += (bicubic_sample(&warped, q[0], q[1]).unwrap() - img.get(x, y)).abs();
                n += 1.0;
            }
        }
        assert!(err / n < 5e-3, "mean abs error {}", err / n);
    }
}
