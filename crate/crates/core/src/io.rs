//! Image, CSV and hashing helpers for files exchanged between pipeline stages.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dic::DisplacementField;
use crate::field::{Axis, GrayImage, Grid2D};
use crate::strain::LogStrainField;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    pub fn path(&self) -> &Path {
        match self {
            IoError::File { path, .. } | IoError::Format { path, .. } => path,
        }
    }
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl ToString) -> IoError {
    IoError::Format { path: path.to_path_buf(), message: message.to_string() }
}

/// Reads an 8- or 16-bit grayscale PNG or binary PGM; color images are reduced to
/// luminance `0.2126 R + 0.7152 G + 0.0722 B`.
pub fn read_image(path: &Path) -> Result<GrayImage, IoError> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => IoError::File { path: path.to_path_buf(), source },
        other => format_err(path, other),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| (0.2126 * p.0[0] as f64 + 0.7152 * p.0[1] as f64 + 0.0722 * p.0[2] as f64).clamp(0.0, 1.0))
            .collect(),
    };
    GrayImage::new(w, h, data).map_err(|e| format_err(path, e))
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Rounds intensities to the 16-bit levels [`write_png16`] stores, so an image held in
/// memory equals the one read back from disk.
pub fn quantize16(img: &GrayImage) -> GrayImage {
    let data = img.intensities().iter().map(|v| to_u16(*v) as f64 / 65535.0).collect();
    GrayImage::new(img.width(), img.height(), data).expect("same dimensions")
}

/// Writes a 16-bit grayscale PNG.
pub fn write_png16(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.intensities().iter().map(|v| to_u16(*v)).collect(),
    )
    .expect("buffer size matches dimensions");
    buf.save(path).map_err(|e| format_err(path, e))
}

pub fn write_rgb_png(path: &Path, img: &image::RgbImage) -> Result<(), IoError> {
    img.save(path).map_err(|e| format_err(path, e))
}

/// Frame file name for index `k`: `frame_0000.png`, …
pub fn frame_name(k: usize) -> String {
    format!("frame_{k:04}.png")
}

/// Image files (`.png`, `.pgm`) in `dir`, sorted by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(file_err(dir))? {
        let path = entry.map_err(file_err(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Files in `dir` named `{prefix}*.{ext}`, sorted by name.
pub fn list_prefixed(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>, IoError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(file_err(dir))? {
        let path = entry.map_err(file_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with(prefix) && path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_frames(dir: &Path) -> Result<Vec<GrayImage>, IoError> {
    list_frames(dir)?.iter().map(|p| read_image(p)).collect()
}

pub fn create_file(path: &Path) -> Result<BufWriter<fs::File>, IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(file_err(parent))?;
        }
    }
    fs::File::create(path).map(BufWriter::new).map_err(file_err(path))
}

/// Creates `path` and fills it through `write`, mapping failures to [`IoError`].
pub fn write_with(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), IoError> {
    let mut f = create_file(path)?;
    write(&mut f).and_then(|_| f.flush()).map_err(file_err(path))
}

/// Pretty-printed JSON of `value`.
pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    write_with(path, |w| writeln!(w, "{text}"))
}

/// `x_px,y_px,ux_px,uy_px,zncc,valid`.
pub fn write_displacement_csv(w: &mut dyn Write, field: &DisplacementField) -> std::io::Result<()> {
    writeln!(w, "x_px,y_px,ux_px,uy_px,zncc,valid")?;
    for (k, p) in field.grid.points().iter().enumerate() {
        let u = field.u[k];
        writeln!(w, "{},{},{},{},{},{}", p[0], p[1], u[0], u[1], field.zncc[k], field.valid[k] as u8)?;
    }
    Ok(())
}

/// `x_px,y_px,ux_px,uy_px` of a known displacement function on grid points.
pub fn write_truth_csv(w: &mut dyn Write, grid: &Grid2D, u: impl Fn([f64; 2]) -> [f64; 2]) -> std::io::Result<()> {
    writeln!(w, "x_px,y_px,ux_px,uy_px")?;
    for p in grid.points() {
        let d = u(p);
        writeln!(w, "{},{},{},{}", p[0], p[1], d[0], d[1])?;
    }
    Ok(())
}

/// `x,y,exx,eyy,exy,e1,e2,valid`.
pub fn write_strain_csv(w: &mut dyn Write, field: &LogStrainField) -> std::io::Result<()> {
    writeln!(w, "x,y,exx,eyy,exy,e1,e2,valid")?;
    for (k, p) in field.grid.points().iter().enumerate() {
        let h = field.h[k];
        let pr = field.principal[k];
        writeln!(w, "{},{},{},{},{},{},{},{}", p[0], p[1], h[0], h[1], h[2], pr[0], pr[1], field.valid[k] as u8)?;
    }
    Ok(())
}

/// Reads a numeric CSV with the given header, returning one row of values per line.
fn read_numeric_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>, IoError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    let found: Vec<String> = reader.headers().map_err(|e| format_err(path, e))?.iter().map(str::to_string).collect();
    if found != header {
        return Err(format_err(path, format!("expected columns {header:?}, found {found:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, e))?;
        let row: Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| format_err(path, format!("row {}: {e}", line + 2)))?);
    }
    Ok(rows)
}

/// Recovers the regular grid from row-major point coordinates.
fn grid_from_points(path: &Path, pts: &[[f64; 2]]) -> Result<Grid2D, IoError> {
    let bad = || format_err(path, "points do not form a row-major regular grid");
    if pts.len() < 4 {
        return Err(bad());
    }
    let nx = pts.iter().take_while(|p| p[1] == pts[0][1]).count();
    if nx < 2 || pts.len() % nx != 0 {
        return Err(bad());
    }
    let ny = pts.len() / nx;
    let spacing = pts[1][0] - pts[0][0];
    let grid = Grid2D::new(pts[0], spacing, nx, ny).map_err(|_| bad())?;
    let tol = 1e-9 * spacing.abs().max(1.0);
    for (p, q) in pts.iter().zip(grid.points()) {
        if (p[0] - q[0]).abs() > tol || (p[1] - q[1]).abs() > tol {
            return Err(bad());
        }
    }
    Ok(grid)
}

pub fn read_displacement_csv(path: &Path) -> Result<DisplacementField, IoError> {
    let rows = read_numeric_csv(path, &["x_px", "y_px", "ux_px", "uy_px", "zncc", "valid"])?;
    let pts: Vec<[f64; 2]> = rows.iter().map(|r| [r[0], r[1]]).collect();
    let grid = grid_from_points(path, &pts)?;
    let valid: Vec<bool> = rows.iter().map(|r| r[5] != 0.0).collect();
    Ok(DisplacementField {
        grid,
        u: rows.iter().zip(&valid).map(|(r, &v)| if v { [r[2], r[3]] } else { [f64::NAN; 2] }).collect(),
        zncc: rows.iter().map(|r| r[4]).collect(),
        valid,
        iterations: vec![0; rows.len()],
    })
}

pub fn read_strain_csv(path: &Path, axis: Axis) -> Result<LogStrainField, IoError> {
    let rows = read_numeric_csv(path, &["x", "y", "exx", "eyy", "exy", "e1", "e2", "valid"])?;
    let pts: Vec<[f64; 2]> = rows.iter().map(|r| [r[0], r[1]]).collect();
    let grid = grid_from_points(path, &pts)?;
    let values = rows.iter().map(|r| (r[7] != 0.0).then_some([r[2], r[3], r[4]]));
    Ok(LogStrainField::from_tensors(grid, axis, values))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(file_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| x as f64 * 0.1 + y as f64 * 0.05).unwrap();
        let p = dir.path().join("a.png");
        write_png16(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!((back.width(), back.height()), (7, 5));
        for (a, b) in img.intensities().iter().zip(back.intensities()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
        assert_eq!(quantize16(&img), back);
    }

    #[test]
    fn color_and_pgm_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = image::RgbImage::from_pixel(3, 2, image::Rgb([255, 0, 0]));
        let p = dir.path().join("c.png");
        rgb.save(&p).unwrap();
        let g = read_image(&p).unwrap();
        assert!(g.intensities().iter().all(|v| (v - 0.2126).abs() < 1e-6));

        let pgm = dir.path().join("g.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 51, 102]);
        fs::write(&pgm, bytes).unwrap();
        let g = read_image(&pgm).unwrap();
        assert_eq!(g.intensities(), &[0.0, 1.0, 0.2, 0.4]);
        assert!(matches!(read_image(&dir.path().join("missing.png")), Err(IoError::File { .. })));
    }

    #[test]
    fn displacement_csv_round_trip() {
        let grid = Grid2D::new([10.0, 20.0], 5.0, 3, 2).unwrap();
        let mut f = DisplacementField::zero(grid);
        f.u[1] = [0.25, -1.5];
        f.valid[4] = false;
        f.u[4] = [f64::NAN; 2];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_with(&p, |w| write_displacement_csv(w, &f)).unwrap();
        let back = read_displacement_csv(&p).unwrap();
        assert_eq!(back.grid, grid);
        assert_eq!(back.u[1], [0.25, -1.5]);
        assert!(!back.valid[4] && back.u[4][0].is_nan());
    }

    #[test]
    fn strain_csv_round_trip() {
        let grid = Grid2D::new([0.0, 0.0], 2.0, 2, 3).unwrap();
        let f = LogStrainField::from_tensors(grid, Axis::Y, (0..6).map(|k| (k != 2).then_some([0.01 * k as f64, -0.02, 0.003])));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_with(&p, |w| write_strain_csv(w, &f)).unwrap();
        let back = read_strain_csv(&p, Axis::Y).unwrap();
        assert_eq!(back.valid, f.valid);
        assert_eq!(back.h[5], f.h[5]);
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_strain_csv(&p, Axis::Y), Err(IoError::Format { .. })));
    }

    #[test]
    fn hashing() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
