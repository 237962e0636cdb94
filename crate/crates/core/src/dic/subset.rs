//! Single-subset matching: integer ZNCC search and inverse-compositional Gauss–Newton
//! refinement of a six-parameter affine subset warp.

use nalgebra::{Matrix3, Matrix6, Vector6};

use super::DicConfig;
use crate::field::{bicubic_gradient, bicubic_sample, GrayImage};

/// Affine subset warp `(u, ∂u/∂x, ∂u/∂y, v, ∂v/∂x, ∂v/∂y)` relative to the subset center.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineParams(pub [f64; 6]);

impl AffineParams {
    pub fn translation(u: f64, v: f64) -> Self {
        Self([u, 0.0, 0.0, v, 0.0, 0.0])
    }

    pub fn u(&self) -> f64 {
        self.0[0]
    }

    pub fn v(&self) -> f64 {
        self.0[3]
    }

    fn matrix(&self) -> Matrix3<f64> {
        let p = &self.0;
        Matrix3::new(1.0 + p[1], p[2], p[0], p[4], 1.0 + p[5], p[3], 0.0, 0.0, 1.0)
    }

    fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self([m[(0, 2)], m[(0, 0)] - 1.0, m[(0, 1)], m[(1, 2)], m[(1, 0)], m[(1, 1)] - 1.0])
    }

    #[inline]
    fn apply(&self, dx: f64, dy: f64) -> (f64, f64) {
        let p = &self.0;
        ((1.0 + p[1]) * dx + p[2] * dy + p[0], p[4] * dx + (1.0 + p[5]) * dy + p[3])
    }

    /// The same local warp re-expressed about a center shifted by `(dx, dy)`.
    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        let p = self.0;
        Self([p[0] + p[1] * dx + p[2] * dy, p[1], p[2], p[3] + p[4] * dx + p[5] * dy, p[4], p[5]])
    }

    /// `self ∘ delta⁻¹`, the inverse-compositional update.
    fn compose_inverse(&self, delta: &AffineParams) -> Option<Self> {
        let inv = delta.matrix().try_inverse()?;
        Some(Self::from_matrix(&(self.matrix() * inv)))
    }
}

/// Reference subset with precomputed steepest-descent images and inverse Hessian.
pub(crate) struct ReferenceSubset {
    center: [f64; 2],
    offsets: Vec<(f64, f64)>,
    /// Zero-mean reference intensities.
    f: Vec<f64>,
    /// Root of the sum of squares of `f`.
    norm: f64,
    sd_images: Vec<[f64; 6]>,
    hessian_inv: Matrix6<f64>,
}

/// Minimum `sqrt(Σ (f - f̄)²)` per pixel for a subset to count as textured.
const MIN_TEXTURE: f64 = 1e-4;

impl ReferenceSubset {
    /// Returns `None` if the subset leaves the sampleable region or has no texture.
    pub(crate) fn new(img: &GrayImage, center: [f64; 2], half: usize) -> Option<Self> {
        let n = (2 * half + 1) * (2 * half + 1);
        let mut offsets = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        let h = half as isize;
        for dy in -h..=h {
            for dx in -h..=h {
                let (dx, dy) = (dx as f64, dy as f64);
                let (v, g) = bicubic_gradient(img, center[0] + dx, center[1] + dy).ok()?;
                offsets.push((dx, dy));
                values.push(v);
                grads.push(g);
            }
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let f: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < MIN_TEXTURE * (n as f64).sqrt() {
            return None;
        }
        let mut hessian = Matrix6::zeros();
        let sd_images: Vec<[f64; 6]> = offsets
            .iter()
            .zip(&grads)
            .map(|(&(dx, dy), g)| {
                let j = [g[0], g[0] * dx, g[0] * dy, g[1], g[1] * dx, g[1] * dy];
                let jv = Vector6::from_row_slice(&j);
                hessian += jv * jv.transpose();
                j
            })
            .collect();
        let hessian_inv = hessian.try_inverse()?;
        Some(Self { center, offsets, f, norm, sd_images, hessian_inv })
    }

    pub(crate) fn center(&self) -> [f64; 2] {
        self.center
    }

    /// Zero-mean deformed intensities under `p`, with their norm; `None` if any sample
    /// leaves the image.
    fn sample(&self, img: &GrayImage, p: &AffineParams, buf: &mut Vec<f64>) -> Option<f64> {
        buf.clear();
        let mut sum = 0.0;
        for &(dx, dy) in &self.offsets {
            let (wx, wy) = p.apply(dx, dy);
            let g = bicubic_sample(img, self.center[0] + wx, self.center[1] + wy).ok()?;
            sum += g;
            buf.push(g);
        }
        let mean = sum / buf.len() as f64;
        let mut ss = 0.0;
        for g in buf.iter_mut() {
            *g -= mean;
            ss += *g * *g;
        }
        Some(ss.sqrt())
    }

    /// Zero-normalized sum of squared differences; `ZNCC = 1 - ZNSSD / 2`.
    fn znssd(&self, g: &[f64], g_norm: f64) -> f64 {
        if g_norm <= 0.0 {
            return 4.0;
        }
        self.f
            .iter()
            .zip(g)
            .map(|(f, g)| {
                let d = f / self.norm - g / g_norm;
                d * d
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetResult {
    pub params: AffineParams,
    pub zncc: f64,
    pub iterations: u32,
    pub converged: bool,
    /// ZNSSD after the initial guess and after every accepted update.
    pub history: Vec<f64>,
}

impl SubsetResult {
    pub fn is_valid(&self, cfg: &DicConfig) -> bool {
        self.converged && self.zncc >= cfg.zncc_accept
    }

    fn failed(params: AffineParams, iterations: u32) -> Self {
        Self { params, zncc: -1.0, iterations, converged: false, history: Vec::new() }
    }
}

const MAX_HALVINGS: u32 = 10;

/// Inverse-compositional Gauss–Newton refinement starting from `initial`.
pub(crate) fn refine(
    reference: &ReferenceSubset,
    deformed: &GrayImage,
    initial: AffineParams,
    cfg: &DicConfig,
) -> SubsetResult {
    let half = ((cfg.subset_size - 1) / 2) as f64;
    let mut buf = Vec::with_capacity(reference.offsets.len());
    let mut p = initial;
    let Some(mut g_norm) = reference.sample(deformed, &p, &mut buf) else {
        return SubsetResult::failed(p, 0);
    };
    let mut g = buf.clone();
    let mut cost = reference.znssd(&g, g_norm);
    let mut history = vec![cost];
    let mut iterations = 0u32;
    let mut converged = false;

    while iterations < cfg.gn_max_iter {
        iterations += 1;
        if g_norm <= 0.0 {
            break;
        }
        let scale = reference.norm / g_norm;
        let mut rhs = Vector6::zeros();
        for (j, (f, gv)) in reference.sd_images.iter().zip(reference.f.iter().zip(&g)) {
            let r = f - scale * gv;
            for k in 0..6 {
                rhs[k] += j[k] * r;
            }
        }
        let step = -(reference.hessian_inv * rhs);

        // Halve the step until the cost does not increase.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let delta = AffineParams([
                alpha * step[0],
                alpha * step[1],
                alpha * step[2],
                alpha * step[3],
                alpha * step[4],
                alpha * step[5],
            ]);
            if let Some(candidate) = p.compose_inverse(&delta) {
                if let Some(norm) = reference.sample(deformed, &candidate, &mut buf) {
                    let c = reference.znssd(&buf, norm);
                    if c <= cost {
                        accepted = Some((candidate, norm, c));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let full_norm = (step[0].powi(2)
            + step[3].powi(2)
            + half * half * (step[1].powi(2) + step[2].powi(2) + step[4].powi(2) + step[5].powi(2)))
        .sqrt();
        match accepted {
            Some((candidate, norm, c)) => {
                p = candidate;
                g_norm = norm;
                std::mem::swap(&mut g, &mut buf);
                cost = c;
                history.push(c);
                if alpha * full_norm < cfg.gn_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                // No descent anywhere along the step: the cost minimum along this
                // direction lies closer than the smallest trial step.
                converged = full_norm * 0.5f64.powi(MAX_HALVINGS as i32) < cfg.gn_tol;
                break;
            }
        }
    }
    SubsetResult { params: p, zncc: 1.0 - 0.5 * cost, iterations, converged, history }
}

/// Exhaustive integer-displacement search maximizing ZNCC within `radius` of `around`.
///
/// Ties resolve to the smallest displacement magnitude, then smallest `v`, then smallest `u`.
pub(crate) fn integer_search(
    reference: &GrayImage,
    deformed: &GrayImage,
    center: [f64; 2],
    half: usize,
    around: [i64; 2],
    radius: usize,
) -> Option<(i64, i64, f64)> {
    let cx = center[0].round() as i64;
    let cy = center[1].round() as i64;
    let h = half as i64;
    let (w, ht) = (reference.width() as i64, reference.height() as i64);
    if cx - h < 0 || cy - h < 0 || cx + h >= w || cy + h >= ht {
        return None;
    }
    let n = ((2 * h + 1) * (2 * h + 1)) as f64;
    let mut f = Vec::with_capacity(n as usize);
    for y in cy - h..=cy + h {
        for x in cx - h..=cx + h {
            f.push(reference.get(x as usize, y as usize));
        }
    }
    let fm = f.iter().sum::<f64>() / n;
    f.iter_mut().for_each(|v| *v -= fm);
    let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if fnorm <= 0.0 {
        return None;
    }

    let r = radius as i64;
    let mut best: Option<(i64, i64, f64)> = None;
    let (dw, dh) = (deformed.width() as i64, deformed.height() as i64);
    for v in around[1] - r..=around[1] + r {
        for u in around[0] - r..=around[0] + r {
            let (x0, y0) = (cx + u - h, cy + v - h);
            if x0 < 1 || y0 < 1 || x0 + 2 * h > dw - 2 || y0 + 2 * h > dh - 2 {
                continue;
            }
            let (mut sg, mut sgg, mut sfg) = (0.0, 0.0, 0.0);
            let mut k = 0;
            for y in y0..=y0 + 2 * h {
                let row = &deformed.intensities()[(y * dw + x0) as usize..(y * dw + x0 + 2 * h + 1) as usize];
                for &gv in row {
                    sg += gv;
                    sgg += gv * gv;
                    sfg += f[k] * gv;
                    k += 1;
                }
            }
            let var = sgg - sg * sg / n;
            if var <= 0.0 {
                continue;
            }
            // Σ f (g - ḡ) = Σ f g because f is zero-mean.
            let zncc = sfg / (fnorm * var.sqrt());
            let better = match best {
                None => true,
                Some((bu, bv, bz)) => {
                    zncc > bz
                        || (zncc == bz && (u * u + v * v, v, u) < (bu * bu + bv * bv, bv, bu))
                }
            };
            if better {
                best = Some((u, v, zncc));
            }
        }
    }
    best
}
