//! Cubic-convolution interpolation (Keys kernel, `a = -0.5`).

use super::{FieldError, GrayImage};

/// Tap weights for offsets `-1, 0, 1, 2` at fractional position `t` in `[0, 1]`.
#[inline]
pub fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Derivatives of [`cubic_weights`] with respect to `t`.
#[inline]
pub fn cubic_weight_derivs(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ]
}

#[inline]
fn locate(v: f64, n: usize) -> Option<(usize, f64)> {
    if !(v >= 1.0 && v <= n as f64 - 2.0) {
        return None;
    }
    // Clamp so the four-tap stencil stays inside; at the upper edge t = 1 and the last tap has zero weight.
    let i = (v.floor() as usize).min(n - 3);
    Some((i, v - i as f64))
}

#[inline]
fn stencil(img: &GrayImage, x: f64, y: f64) -> Result<(usize, f64, usize, f64), FieldError> {
    let w = img.width();
    let h = img.height();
    if w < 4 || h < 4 {
        return Err(FieldError::OutOfBounds { x, y });
    }
    match (locate(x, w), locate(y, h)) {
        (Some((ix, tx)), Some((iy, ty))) => Ok((ix, tx, iy, ty)),
        _ => Err(FieldError::OutOfBounds { x, y }),
    }
}

/// Interpolated intensity at subpixel position `(x, y)`; valid on `[1, w-2] x [1, h-2]`.
pub fn bicubic_sample(img: &GrayImage, x: f64, y: f64) -> Result<f64, FieldError> {
    let (ix, tx, iy, ty) = stencil(img, x, y)?;
    let wx = cubic_weights(tx);
    let wy = cubic_weights(ty);
    Ok(accumulate(img, ix, iy, &wx, &wy))
}

/// Intensity together with its spatial gradient `(dI/dx, dI/dy)`.
pub fn bicubic_gradient(img: &GrayImage, x: f64, y: f64) -> Result<(f64, [f64; 2]), FieldError> {
    let (ix, tx, iy, ty) = stencil(img, x, y)?;
    let wx = cubic_weights(tx);
    let wy = cubic_weights(ty);
    let dx = cubic_weight_derivs(tx);
    let dy = cubic_weight_derivs(ty);
    Ok((
        accumulate(img, ix, iy, &wx, &wy),
        [accumulate(img, ix, iy, &dx, &wy), accumulate(img, ix, iy, &wx, &dy)],
    ))
}

#[inline]
fn accumulate(img: &GrayImage, ix: usize, iy: usize, wx: &[f64; 4], wy: &[f64; 4]) -> f64 {
    let width = img.width();
    let data = img.intensities();
    let mut acc = 0.0;
    for (r, wyr) in wy.iter().enumerate() {
        let row = &data[(iy + r - 1) * width + ix - 1..(iy + r - 1) * width + ix + 3];
        let s = row[0] * wx[0] + row[1] * wx[1] + row[2] * wx[2] + row[3] * wx[3];
        acc += wyr * s;
    }
    acc
}
