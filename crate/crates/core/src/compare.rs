//! Agreement metrics between strain fields and between force curves, and the report
//! bundle that records them together with the inputs that produced them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dic::FrameReport;
use crate::io::{self, IoError};
use crate::plot;
use crate::strain::{Component, LogStrainField};

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("fields are defined on different grids")]
    GridMismatch,
    #[error("no grid point is valid in both fields")]
    NoOverlap,
    #[error("curve needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("curve abscissa must be strictly increasing (sample {0})")]
    NotIncreasing(usize),
    #[error("curve abscissa ranges do not overlap")]
    DisjointRanges,
    #[error("report needs at least one comparison")]
    EmptyReport,
    #[error(transparent)]
    Io(#[from] IoError),
}

impl CompareError {
    pub fn path(&self) -> Option<&Path> {
        match self {
            CompareError::Io(e) => Some(e.path()),
            _ => None,
        }
    }
}

/// Difference statistics `a − b` of one strain component over the mutually valid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldComparison {
    pub component: Component,
    pub rms: f64,
    pub mae: f64,
    pub bias: f64,
    pub max_abs: f64,
    /// Mutually valid points over all grid points.
    pub valid_overlap_fraction: f64,
    pub points: usize,
    /// Per-point `a − b`, `NaN` outside the mutual mask.
    #[serde(skip)]
    pub differences: Vec<f64>,
}

pub fn compare_fields(a: &LogStrainField, b: &LogStrainField, component: Component) -> Result<FieldComparison, CompareError> {
    if a.grid != b.grid || a.axis != b.axis {
        return Err(CompareError::GridMismatch);
    }
    let (va, vb) = (a.values(component), b.values(component));
    let mut differences = vec![f64::NAN; va.len()];
    let (mut n, mut sum, mut sum_abs, mut sum_sq, mut max_abs) = (0usize, 0.0, 0.0, 0.0, 0.0f64);
    for k in 0..va.len() {
        if a.valid[k] && b.valid[k] && va[k].is_finite() && vb[k].is_finite() {
            let d = va[k] - vb[k];
            differences[k] = d;
            n += 1;
            sum += d;
            sum_abs += d.abs();
            sum_sq += d * d;
            max_abs = max_abs.max(d.abs());
        }
    }
    if n == 0 {
        return Err(CompareError::NoOverlap);
    }
    let nf = n as f64;
    Ok(FieldComparison {
        component,
        rms: (sum_sq / nf).sqrt(),
        mae: sum_abs / nf,
        bias: sum / nf,
        max_abs,
        valid_overlap_fraction: nf / va.len() as f64,
        points: n,
        differences,
    })
}

/// Two curves resampled on a common abscissa, differences `a − b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub abscissa: Vec<f64>,
    pub differences: Vec<f64>,
    pub rms: f64,
    pub max_deviation: f64,
    /// `rms / max|a|` over the common range.
    pub relative_rms: f64,
    /// `(t, F)` of the largest `|F|` of each input curve.
    pub peak_a: (f64, f64),
    pub peak_b: (f64, f64),
}

fn check_curve(c: &[(f64, f64)]) -> Result<(), CompareError> {
    if c.len() < 2 {
        return Err(CompareError::TooFewSamples(c.len()));
    }
    match c.windows(2).position(|w| !(w[1].0 > w[0].0)) {
        Some(k) => Err(CompareError::NotIncreasing(k + 1)),
        None => Ok(()),
    }
}

fn interpolate(c: &[(f64, f64)], t: f64) -> f64 {
    let k = c.partition_point(|p| p.0 <= t).clamp(1, c.len() - 1);
    let (a, b) = (c[k - 1], c[k]);
    a.1 + (t - a.0) / (b.0 - a.0) * (b.1 - a.1)
}

fn peak(c: &[(f64, f64)]) -> (f64, f64) {
    c.iter().copied().fold(c[0], |best, p| if p.1.abs() > best.1.abs() { p } else { best })
}

/// Compares two sampled curves on the union of their abscissae inside the common range;
/// no extrapolation.
pub fn compare_curves(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<CurveComparison, CompareError> {
    check_curve(a)?;
    check_curve(b)?;
    let lo = a[0].0.max(b[0].0);
    let hi = a[a.len() - 1].0.min(b[b.len() - 1].0);
    if !(hi > lo) {
        return Err(CompareError::DisjointRanges);
    }
    let mut abscissa: Vec<f64> = a.iter().chain(b).map(|p| p.0).filter(|t| *t >= lo && *t <= hi).collect();
    abscissa.sort_by(f64::total_cmp);
    abscissa.dedup();
    let ia: Vec<f64> = abscissa.iter().map(|&t| interpolate(a, t)).collect();
    let differences: Vec<f64> = abscissa.iter().zip(&ia).map(|(&t, fa)| fa - interpolate(b, t)).collect();
    let rms = (differences.iter().map(|d| d * d).sum::<f64>() / differences.len() as f64).sqrt();
    let max_deviation = differences.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let scale = ia.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(CurveComparison {
        abscissa,
        differences,
        rms,
        max_deviation,
        relative_rms: if scale > 0.0 { rms / scale } else { rms },
        peak_a: peak(a),
        peak_b: peak(b),
    })
}

pub const REPORT_SCHEMA: &str = "strainlab-report/1";

/// A named field comparison together with the fields it was computed from.
#[derive(Debug, Clone)]
pub struct NamedFieldComparison {
    pub name: String,
    pub measured: LogStrainField,
    pub reference: LogStrainField,
    pub comparison: FieldComparison,
    /// Optional acceptance threshold on `rms`.
    pub rms_limit: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NamedCurveComparison {
    pub name: String,
    pub comparison: CurveComparison,
    pub relative_rms_limit: Option<f64>,
}

/// Everything a report is built from.
#[derive(Debug, Clone, Default)]
pub struct ReportInput {
    pub fields: Vec<NamedFieldComparison>,
    pub curves: Vec<NamedCurveComparison>,
    /// Per-frame tracking quality of the measured sequence, if any.
    pub tracking: Option<Vec<FrameReport>>,
    /// Valid fraction below which a frame is flagged.
    pub degraded_below: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub component: Component,
    pub rms: f64,
    pub mae: f64,
    pub bias: f64,
    pub valid_overlap_fraction: f64,
    pub points: usize,
    pub rms_limit: Option<f64>,
    pub pass: Option<bool>,
    pub differences_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub name: String,
    pub rms: f64,
    pub max_deviation: f64,
    pub relative_rms: f64,
    pub peak_a: (f64, f64),
    pub peak_b: (f64, f64),
    pub relative_rms_limit: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingEntry {
    pub frames: Vec<FrameReport>,
    /// Frames whose valid fraction fell below `degraded_below`.
    pub flagged_frames: Vec<usize>,
    pub degraded_below: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub tool_version: String,
    pub timestamp: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub fields: Vec<FieldEntry>,
    pub curves: Vec<CurveEntry>,
    pub tracking: Option<TrackingEntry>,
    /// All attached limits satisfied and no flagged frames.
    pub pass: bool,
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub csv: Vec<PathBuf>,
    pub png: Vec<PathBuf>,
}

fn safe_name(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Builds the report document. `inputs` are hashed in the given order.
pub fn build_report(input: &ReportInput, config: &serde_json::Value, inputs: &[PathBuf]) -> Result<Report, CompareError> {
    if input.fields.is_empty() && input.curves.is_empty() {
        return Err(CompareError::EmptyReport);
    }
    let config_text = serde_json::to_string(config).expect("JSON values serialize");
    let mut hashes = Vec::with_capacity(inputs.len());
    for p in inputs {
        hashes.push(InputHash { path: p.display().to_string(), sha256: io::sha256_file(p)? });
    }
    let fields: Vec<FieldEntry> = input
        .fields
        .iter()
        .map(|f| {
            let c = &f.comparison;
            FieldEntry {
                name: f.name.clone(),
                component: c.component,
                rms: c.rms,
                mae: c.mae,
                bias: c.bias,
                valid_overlap_fraction: c.valid_overlap_fraction,
                points: c.points,
                rms_limit: f.rms_limit,
                pass: f.rms_limit.map(|l| c.rms < l),
                differences_csv: format!("{}_differences.csv", safe_name(&f.name)),
            }
        })
        .collect();
    let curves: Vec<CurveEntry> = input
        .curves
        .iter()
        .map(|c| CurveEntry {
            name: c.name.clone(),
            rms: c.comparison.rms,
            max_deviation: c.comparison.max_deviation,
            relative_rms: c.comparison.relative_rms,
            peak_a: c.comparison.peak_a,
            peak_b: c.comparison.peak_b,
            relative_rms_limit: c.relative_rms_limit,
            pass: c.relative_rms_limit.map(|l| c.comparison.relative_rms < l),
        })
        .collect();
    let tracking = input.tracking.as_ref().map(|frames| TrackingEntry {
        flagged_frames: frames.iter().filter(|f| f.valid_fraction < input.degraded_below).map(|f| f.frame).collect(),
        frames: frames.clone(),
        degraded_below: input.degraded_below,
    });
    let pass = fields.iter().all(|f| f.pass != Some(false))
        && curves.iter().all(|c| c.pass != Some(false))
        && tracking.as_ref().map_or(true, |t| t.flagged_frames.is_empty());
    Ok(Report {
        schema: REPORT_SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config_sha256: io::sha256_hex(config_text.as_bytes()),
        config: config.clone(),
        inputs: hashes,
        fields,
        curves,
        tracking,
        pass,
    })
}

/// Writes `report.json`, one difference CSV per field comparison and a
/// measured | reference | difference heatmap triptych per field comparison into `dir`.
pub fn emit_report(
    dir: &Path,
    input: &ReportInput,
    config: &serde_json::Value,
    inputs: &[PathBuf],
) -> Result<(Report, ReportFiles), CompareError> {
    let report = build_report(input, config, inputs)?;
    let mut files = ReportFiles { json: dir.join("report.json"), csv: Vec::new(), png: Vec::new() };
    for (f, entry) in input.fields.iter().zip(&report.fields) {
        let path = dir.join(&entry.differences_csv);
        let c = &f.comparison;
        let (ma, rb) = (f.measured.values(c.component), f.reference.values(c.component));
        io::write_with(&path, |w| {
            writeln!(w, "x,y,measured,reference,difference")?;
            for (k, p) in f.measured.grid.points().iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", p[0], p[1], ma[k], rb[k], c.differences[k])?;
            }
            Ok(())
        })?;
        files.csv.push(path);

        let mask = |v: &[f64], other: &LogStrainField, own: &LogStrainField| -> Vec<f64> {
            v.iter().enumerate().map(|(k, x)| if own.valid[k] && other.valid[k] { *x } else { f64::NAN }).collect()
        };
        let shown_a = mask(&ma, &f.reference, &f.measured);
        let shown_b = mask(&rb, &f.measured, &f.reference);
        let limit = plot::symmetric_limit(shown_a.iter().chain(&shown_b));
        let diff_limit = plot::symmetric_limit(&c.differences);
        let g = &f.measured.grid;
        let img = plot::triptych(&shown_a, &shown_b, &c.differences, g.nx, g.ny, limit, diff_limit);
        let png = dir.join(format!("{}_triptych.png", safe_name(&f.name)));
        io::write_rgb_png(&png, &img)?;
        files.png.push(png);
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    io::write_with(&files.json, |w| w.write_all(json.as_bytes()))?;
    Ok((report, files))
}



#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Axis, Grid2D};

    fn field(shift: f64, invalid: &[usize]) -> LogStrainField {
        let grid = Grid2D::new([0.0, 0.0], 1.0, 4, 3).unwrap();
        LogStrainField::from_tensors(
            grid,
            Axis::Y,
            (0..12).map(|k| (!invalid.contains(&k)).then_some([0.01 * k as f64 + shift, -0.02 + shift, 0.001])),
        )
    }

    #[test]
    fn self_comparison_is_zero() {
        let a = field(0.0, &[3]);
        let c = compare_fields(&a, &a, Component::Exx).unwrap();
        assert_eq!((c.rms, c.mae, c.bias), (0.0, 0.0, 0.0));
        assert_eq!(c.valid_overlap_fraction, a.valid_fraction());
        assert!(c.differences[3].is_nan());
    }

    #[test]
    fn constant_shift() {
        let (a, b) = (field(0.01, &[]), field(0.0, &[]));
        let c = compare_fields(&a, &b, Component::Eyy).unwrap();
        assert!((c.bias - 0.01).abs() < 1e-15 && (c.rms - 0.01).abs() < 1e-15);
        let r = compare_fields(&b, &a, Component::Eyy).unwrap();
        assert_eq!(r.rms, c.rms);
        assert_eq!(r.bias, -c.bias);
    }

    #[test]
    fn masks_and_errors() {
        let a = field(0.0, &[0, 1]);
        let b = field(0.0, &[2]);
        let c = compare_fields(&a, &b, Component::E1).unwrap();
        assert_eq!(c.points, 9);
        assert!(c.differences.iter().enumerate().all(|(k, d)| d.is_finite() == ![0, 1, 2].contains(&k)));
        let none = field(0.0, &(0..12).collect::<Vec<_>>());
        assert!(matches!(compare_fields(&a, &none, Component::Exx), Err(CompareError::NoOverlap)));
        let mut other = field(0.0, &[]);
        other.grid.spacing = 2.0;
        assert!(matches!(compare_fields(&a, &other, Component::Exx), Err(CompareError::GridMismatch)));
    }

    #[test]
    fn curves() {
        let a: Vec<(f64, f64)> = (0..11).map(|k| (k as f64, (k as f64 * 0.3).sin() * 5.0)).collect();
        let c = compare_curves(&a, &a).unwrap();
        assert_eq!(c.max_deviation, 0.0);
        let scaled: Vec<_> = a.iter().map(|p| (p.0, 1.1 * p.1)).collect();
        let c = compare_curves(&scaled, &a).unwrap();
        let max_f = a.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
        assert!((c.max_deviation - 0.1 * max_f).abs() < 1e-12);
        assert_eq!(c.peak_a.0, c.peak_b.0);
        let far: Vec<_> = a.iter().map(|p| (p.0 + 20.0, p.1)).collect();
        assert!(matches!(compare_curves(&a, &far), Err(CompareError::DisjointRanges)));
        assert!(matches!(compare_curves(&a[..1], &a), Err(CompareError::TooFewSamples(1))));
        let back = vec![(1.0, 0.0), (0.0, 1.0)];
        assert!(matches!(compare_curves(&back, &a), Err(CompareError::NotIncreasing(1))));
        // Partial overlap only uses the shared range.
        let shifted: Vec<_> = a.iter().map(|p| (p.0 + 2.5, p.1)).collect();
        let c = compare_curves(&a, &shifted).unwrap();
        assert!(c.abscissa[0] >= 2.5 && *c.abscissa.last().unwrap() <= 10.0);
    }

    #[test]
    fn report_bundle() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(dir.path(), &ReportInput::default(), &serde_json::Value::Null, &[]),
            Err(CompareError::EmptyReport)
        ));
        let (a, b) = (field(0.001, &[5]), field(0.0, &[]));
        let input = ReportInput {
            fields: vec![NamedFieldComparison {
                name: "dic vs truth".into(),
                comparison: compare_fields(&a, &b, Component::Axial).unwrap(),
                measured: a,
                reference: b,
                rms_limit: Some(2e-3),
            }],
            ..Default::default()
        };
        let config = serde_json::json!({"seed": 1});
        let (report, files) = emit_report(dir.path(), &input, &config, &[]).unwrap();
        assert!(report.pass);
        assert_eq!(files.csv.len(), 1);
        assert_eq!(files.png.len(), 1);
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files.json).unwrap()).unwrap();
        assert_eq!(json["schema"], REPORT_SCHEMA);
        let entries = json["fields"].as_array().unwrap();
        assert_eq!(entries.len(), 1);
        for key in ["rms", "mae", "bias", "valid_overlap_fraction"] {
            assert!(entries[0][key].is_number(), "{key}");
        }
        let first = std::fs::read_to_string(&files.json).unwrap();
        emit_report(dir.path(), &input, &config, &[]).unwrap();
        let second = std::fs::read_to_string(&files.json).unwrap();
        let strip = |s: &str| s.lines().filter(|l| !l.contains("\"timestamp\"")).collect::<Vec<_>>().join("\n");
        assert_eq!(strip(&first), strip(&second));
    }
}
