//! Heatmap rasterization of grid fields with a blue–white–red diverging colormap
//! (blue compressive, red tensile).

use image::{Rgb, RgbImage};

/// Color of invalid points.
pub const INVALID_COLOR: [u8; 3] = [128, 128, 128];
const BACKGROUND: [u8; 3] = [255, 255, 255];
const BLUE: [f64; 3] = [33.0, 102.0, 172.0];
const RED: [f64; 3] = [178.0, 24.0, 43.0];

/// Maps `v` in `[-limit, limit]` to blue (negative) through white to red (positive).
pub fn diverging_color(v: f64, limit: f64) -> [u8; 3] {
    if !v.is_finite() {
        return INVALID_COLOR;
    }
    let t = if limit > 0.0 { (v / limit).clamp(-1.0, 1.0) } else { 0.0 };
    let end = if t < 0.0 { BLUE } else { RED };
    let a = t.abs();
    [0, 1, 2].map(|c| (255.0 + a * (end[c] - 255.0)).round() as u8)
}

/// Largest finite absolute value, or 1 when there is none.
pub fn symmetric_limit<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    let m = values.into_iter().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Row-major `nx × ny` field drawn with `cell × cell` pixels per grid point.
pub fn heatmap(values: &[f64], nx: usize, ny: usize, limit: f64, cell: u32) -> RgbImage {
    assert_eq!(values.len(), nx * ny, "one value per grid point");
    let cell = cell.max(1);
    RgbImage::from_fn(nx as u32 * cell, ny as u32 * cell, |x, y| {
        let k = (y / cell) as usize * nx + (x / cell) as usize;
        Rgb(diverging_color(values[k], limit))
    })
}

/// Panels side by side separated by `gap` background pixels, plus a color bar strip below.
pub fn panel_row(panels: &[RgbImage], gap: u32, limit_bar: bool) -> RgbImage {
    let width = panels.iter().map(|p| p.width()).sum::<u32>() + gap * (panels.len().saturating_sub(1) as u32);
    let height = panels.iter().map(|p| p.height()).max().unwrap_or(0);
    let bar = if limit_bar { 12 } else { 0 };
    let mut out = RgbImage::from_pixel(width.max(1), (height + bar + if limit_bar { gap } else { 0 }).max(1), Rgb(BACKGROUND));
    let mut x0 = 0;
    for p in panels {
        image::imageops::replace(&mut out, p, x0 as i64, 0);
        x0 += p.width() + gap;
    }
    if limit_bar {
        for x in 0..width {
            let v = 2.0 * (x as f64 + 0.5) / width as f64 - 1.0;
            let c = diverging_color(v, 1.0);
            for y in height + gap..height + gap + bar {
                out.put_pixel(x, y, Rgb(c));
            }
        }
    }
    out
}

/// Measured | simulated | difference heatmaps; the first two share `limit`, the difference
/// panel uses `diff_limit`.
pub fn triptych(
    measured: &[f64],
    simulated: &[f64],
    difference: &[f64],
    nx: usize,
    ny: usize,
    limit: f64,
    diff_limit: f64,
) -> RgbImage {
    let cell = (240 / ny.max(1)).clamp(2, 16) as u32;
    let panels = [
        heatmap(measured, nx, ny, limit, cell),
        heatmap(simulated, nx, ny, limit, cell),
        heatmap(difference, nx, ny, diff_limit, cell),
    ];
    panel_row(&panels, 8, true)
}
