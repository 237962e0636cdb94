//! Config-driven pipelines: speckle generation, warping, correlation, strain, block
//! simulation, material-point driving and comparison, run in order with one output
//! directory and one manifest per stage.
//!
//! Configs are strict JSON: unknown keys are rejected and stage dependencies are checked
//! before anything runs. Each stage writes `manifest.json` (parameters, seed, input and
//! output hashes, timing) next to its outputs; a failing run leaves `error.json` in the
//! output root.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compare::{
    compare_curves, compare_fields, emit_report, CompareError, InputHash, NamedCurveComparison,
    NamedFieldComparison, Report, ReportInput,
};
use crate::constitutive::{
    hardening_check_path, matpoint_drive, ogden_uniaxial_nominal_stress, von_mises, write_history_csv,
    ConstitutiveError, HistoryRecord, LoadTarget, Material, MaterialCard, OgdenMaterial, PathSegment,
};
use crate::dic::{correlate_sequence, DicConfig, DicError, DisplacementField, SequenceResult};
use crate::fem::{
    build_block_mesh, extract_surface_strains, solve_compression, write_force_csv, write_vtk, FaceImageMap,
    FemError, FemSolution, HexMesh, LoadProgram, NewtonSettings, DEFAULT_BLOCK_DIMS, DEFAULT_DIVISIONS,
};
use crate::field::{Axis, GrayImage, Grid2D};
use crate::io::{self, IoError};
use crate::plot;
use crate::speckle::{ramp_sequence, render_speckle, warp_with_map, SpeckleError, SpecklePattern, WarpMap, WarpSpec};
use crate::strain::{strain_from_displacement, Component, LogStrainField, StrainError};

/// Names of the bundled pipeline presets.
pub const PRESET_NAMES: [&str; 3] = ["rubber-demo", "table2-check", "dic-accuracy"];

const PRESETS: [&str; 3] = [
    include_str!("../data/presets/rubber-demo.json"),
    include_str!("../data/presets/table2-check.json"),
    include_str!("../data/presets/dic-accuracy.json"),
];

/// Bundled preset config text by name.
pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESET_NAMES.iter().position(|n| *n == name).map(|k| PRESETS[k])
}

// ---------------------------------------------------------------------------------------
// Configuration

fn default_seed() -> u64 {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("strainlab-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub io: IoConfig,
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    /// Directory consulted for inputs no earlier stage produced.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { input: None, output: default_output() }
    }
}

/// Output file format of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Vtk,
    Png,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown format '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Speckle(SpeckleStage),
    Warp(WarpStage),
    Dic(DicStage),
    Strain(StrainStage),
    Simulate(SimulateStage),
    Matpoint(MatpointStage),
    Compare(CompareStage),
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Speckle(_) => "speckle",
            Stage::Warp(_) => "warp",
            Stage::Dic(_) => "dic",
            Stage::Strain(_) => "strain",
            Stage::Simulate(_) => "simulate",
            Stage::Matpoint(_) => "matpoint",
            Stage::Compare(_) => "compare",
        }
    }
}

/// Reference speckle image; the pattern seed is the pipeline seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeckleStage {
    pub width: usize,
    pub height: usize,
    pub dots_per_kilopixel: f64,
    pub dot_radius_mean: f64,
    pub dot_radius_sd: f64,
    pub contrast: f64,
}

impl Default for SpeckleStage {
    fn default() -> Self {
        let p = SpecklePattern::default();
        Self {
            width: 256,
            height: 256,
            dots_per_kilopixel: p.dots_per_kilopixel,
            dot_radius_mean: p.dot_radius_mean,
            dot_radius_sd: p.dot_radius_sd,
            contrast: p.contrast,
        }
    }
}

impl SpeckleStage {
    pub fn pattern(&self, seed: u64) -> SpecklePattern {
        SpecklePattern {
            seed,
            dots_per_kilopixel: self.dots_per_kilopixel,
            dot_radius_mean: self.dot_radius_mean,
            dot_radius_sd: self.dot_radius_sd,
            contrast: self.contrast,
        }
    }
}

fn default_frames() -> usize {
    11
}

/// Frame sequence ramping `warp` linearly from identity over `frames` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpStage {
    pub warp: WarpSpec,
    #[serde(default = "default_frames")]
    pub frames: usize,
    /// From this frame on the texture is replaced by an unrelated pattern (seed + 1).
    #[serde(default)]
    pub rerandomize_at: Option<usize>,
}

fn default_degraded() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DicStage {
    #[serde(default)]
    pub settings: DicConfig,
    /// Measurement grid; by default the largest centered grid at `settings.step`.
    #[serde(default)]
    pub grid: Option<Grid2D>,
    /// Frames whose valid fraction falls below this are reported as degraded.
    #[serde(default = "default_degraded")]
    pub degraded_below: f64,
    #[serde(default = "Format::csv")]
    pub format: Format,
}

impl Default for DicStage {
    fn default() -> Self {
        Self { settings: DicConfig::default(), grid: None, degraded_below: default_degraded(), format: Format::Csv }
    }
}

impl Format {
    fn csv() -> Self {
        Format::Csv
    }

    fn vtk() -> Self {
        Format::Vtk
    }
}

fn default_window() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrainStage {
    /// Plane-fit window in grid points (odd).
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub axis: Axis,
    #[serde(default = "Format::csv")]
    pub format: Format,
}

impl Default for StrainStage {
    fn default() -> Self {
        Self { window: default_window(), axis: Axis::Y, format: Format::Csv }
    }
}

/// Where simulated surface strains are sampled: an image of `image` pixels showing the
/// front face scaled to fit inside `margin`, sampled at `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub grid: Grid2D,
    pub image: [usize; 2],
    #[serde(default)]
    pub margin: f64,
}

fn default_rubber() -> String {
    "rubber-ogden3".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateStage {
    /// Bundled card name or path to a card file.
    #[serde(default = "default_rubber")]
    pub material: String,
    #[serde(default = "default_dims")]
    pub dims: [f64; 3],
    #[serde(default = "default_divisions")]
    pub divisions: [usize; 3],
    #[serde(default)]
    pub program: LoadProgram,
    #[serde(default)]
    pub newton: NewtonSettings,
    /// Explicit surface sampling; otherwise the grid and image size of an earlier
    /// correlation are used when available.
    #[serde(default)]
    pub surface: Option<SurfaceSpec>,
    #[serde(default)]
    pub axis: Axis,
    /// `vtk` writes a VTK file per step besides the force CSV; `csv` only the CSV.
    #[serde(default = "Format::vtk")]
    pub format: Format,
}

fn default_dims() -> [f64; 3] {
    DEFAULT_BLOCK_DIMS
}

fn default_divisions() -> [usize; 3] {
    DEFAULT_DIVISIONS
}

impl Default for SimulateStage {
    fn default() -> Self {
        Self {
            material: default_rubber(),
            dims: DEFAULT_BLOCK_DIMS,
            divisions: DEFAULT_DIVISIONS,
            program: LoadProgram::default(),
            newton: NewtonSettings::default(),
            surface: None,
            axis: Axis::Y,
            format: Format::Vtk,
        }
    }
}

/// Named load paths for the material-point driver.
pub const MATPOINT_PRESETS: [&str; 1] = ["uniaxial-ramp"];

fn default_aluminum() -> String {
    "aluminum-j2".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatpointStage {
    #[serde(default = "default_aluminum")]
    pub material: String,
    /// `uniaxial-ramp`: through every hardening point (elastoplastic) or to stretch 0.7
    /// (Ogden). Used when no explicit `path` is given.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub path: Option<Vec<PathSegment>>,
    #[serde(default = "Format::csv")]
    pub format: Format,
}

impl Default for MatpointStage {
    fn default() -> Self {
        Self { material: default_aluminum(), preset: None, path: None, format: Format::Csv }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldSource {
    /// Strain measured by correlation.
    Dic,
    /// Exact strain of the imposed warp.
    Truth,
    /// Simulated surface strain.
    Fem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSource {
    /// Simulated platen force against compression.
    FemForce,
    /// Homogeneous uniaxial Ogden force at the same compressions.
    ClosedFormForce,
}

fn default_component() -> Component {
    Component::Axial
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldPairSpec {
    pub name: String,
    pub measured: FieldSource,
    pub reference: FieldSource,
    #[serde(default = "default_component")]
    pub component: Component,
    /// Frame of the sequence to compare; the last one by default.
    #[serde(default)]
    pub frame: Option<usize>,
    #[serde(default)]
    pub rms_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePairSpec {
    pub name: String,
    pub a: CurveSource,
    pub b: CurveSource,
    #[serde(default)]
    pub relative_rms_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareStage {
    #[serde(default)]
    pub fields: Vec<FieldPairSpec>,
    #[serde(default)]
    pub curves: Vec<CurvePairSpec>,
    #[serde(default = "default_degraded")]
    pub degraded_below: f64,
}

// ---------------------------------------------------------------------------------------
// Errors

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Speckle(#[from] SpeckleError),
    #[error(transparent)]
    Dic(#[from] DicError),
    #[error(transparent)]
    Strain(#[from] StrainError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Material(#[from] ConstitutiveError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Missing(String),
}

impl StageError {
    fn is_io(&self) -> bool {
        matches!(self, StageError::Io(_) | StageError::Compare(CompareError::Io(_)))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config{}: {message}", .key.as_ref().map(|k| format!(" at '{k}'")).unwrap_or_default())]
    ConfigInvalid { key: Option<String>, line: Option<usize>, message: String },
    #[error("stage '{stage}' failed: {source}")]
    StageFailed { stage: String, source: StageError },
    #[error(transparent)]
    Io(#[from] IoError),
}

impl PipelineError {
    fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        PipelineError::ConfigInvalid { key: Some(key.into()), line: None, message: message.into() }
    }

    /// Process exit status: 2 config error, 3 stage failure, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::ConfigInvalid { .. } => 2,
            PipelineError::StageFailed { source, .. } if source.is_io() => 4,
            PipelineError::StageFailed { .. } => 3,
            PipelineError::Io(_) => 4,
        }
    }

    /// Machine-readable error description.
    pub fn record(&self) -> serde_json::Value {
        let (kind, stage, key, line) = match self {
            PipelineError::ConfigInvalid { key, line, .. } => ("config_invalid", None, key.clone(), *line),
            PipelineError::StageFailed { stage, .. } => ("stage_failed", Some(stage.clone()), None, None),
            PipelineError::Io(_) => ("io", None, None, None),
        };
        serde_json::json!({
            "error": kind,
            "stage": stage,
            "key": key,
            "line": line,
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
    }
}

/// Writes `error.json` describing `err` into `dir`, ignoring failures to do so.
pub fn write_error_record(dir: &Path, err: &PipelineError) {
    let _ = io::write_json(&dir.join("error.json"), &err.record());
}

fn from_serde(e: serde_json::Error) -> PipelineError {
    let text = e.to_string();
    let key = ["unknown field `", "missing field `", "unknown variant `"].iter().find_map(|pat| {
        let start = text.find(pat)? + pat.len();
        text[start..].find('`').map(|end| text[start..start + end].to_string())
    });
    let line = (e.line() > 0).then_some(e.line());
    PipelineError::ConfigInvalid { key, line, message: text }
}

// ---------------------------------------------------------------------------------------
// Parsing and validation

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(from_serde)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn preset(name: &str) -> Result<Self, PipelineError> {
        let text = preset_text(name).ok_or_else(|| {
            PipelineError::config("preset", format!("unknown preset '{name}', expected one of {PRESET_NAMES:?}"))
        })?;
        Self::from_json(text)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Checks parameters and that every stage's inputs are produced by an earlier stage
    /// or can be read from `io.input`.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.stages.is_empty() {
            return Err(PipelineError::config("stages", "at least one stage is required"));
        }
        let from_disk = self.io.input.is_some();
        let mut names = BTreeSet::new();
        // Artifacts available so far.
        let mut have: BTreeSet<&str> = BTreeSet::new();
        for (i, stage) in self.stages.iter().enumerate() {
            let at = |k: &str| format!("stages[{i}]{k}");
            if !names.insert(stage.name()) {
                return Err(PipelineError::config(at(""), format!("stage '{}' appears more than once", stage.name())));
            }
            let need = |have: &BTreeSet<&str>, what: &str, producer: &str, key: String| {
                if have.contains(what) || (from_disk && what != "pattern" && what != "warp" && what != "surface") {
                    Ok(())
                } else {
                    Err(PipelineError::config(key, format!("requires a preceding {producer} stage")))
                }
            };
            match stage {
                Stage::Speckle(s) => {
                    if s.width < 64 || s.height < 64 {
                        return Err(PipelineError::config(at(".width"), "image must be at least 64x64"));
                    }
                    have.extend(["reference", "pattern"]);
                }
                Stage::Warp(w) => {
                    need(&have, "reference", "speckle", at(""))?;
                    if w.frames < 2 {
                        return Err(PipelineError::config(at(".frames"), "a sequence needs at least 2 frames"));
                    }
                    if let Some(b) = w.rerandomize_at {
                        if b == 0 || b >= w.frames {
                            return Err(PipelineError::config(
                                at(".rerandomize_at"),
                                format!("must lie in 1..{}", w.frames),
                            ));
                        }
                        need(&have, "pattern", "speckle", at(".rerandomize_at"))?;
                    }
                    have.extend(["frames", "warp"]);
                }
                Stage::Dic(d) => {
                    need(&have, "frames", "warp", at(""))?;
                    d.settings.validate().map_err(|e| PipelineError::config(at(".settings"), e.to_string()))?;
                    if !matches!(d.format, Format::Csv | Format::Json) {
                        return Err(PipelineError::config(at(".format"), "dic writes csv or json"));
                    }
                    have.insert("dic");
                }
                Stage::Strain(s) => {
                    need(&have, "dic", "dic", at(""))?;
                    if s.window < 3 || s.window % 2 == 0 {
                        return Err(PipelineError::config(at(".window"), "window must be odd and >= 3"));
                    }
                    if s.format == Format::Vtk {
                        return Err(PipelineError::config(at(".format"), "strain writes csv, json or png"));
                    }
                    have.insert("strain");
                }
                Stage::Simulate(s) => {
                    if s.program.steps == 0 {
                        return Err(PipelineError::config(at(".program.steps"), "at least one load step is required"));
                    }
                    if !matches!(s.format, Format::Csv | Format::Vtk) {
                        return Err(PipelineError::config(at(".format"), "simulate writes vtk or csv"));
                    }
                    if s.surface.is_some() || have.contains("dic") {
                        have.insert("surface");
                    }
                    have.insert("fem");
                }
                Stage::Matpoint(m) => {
                    if m.path.is_some() && m.preset.is_some() {
                        return Err(PipelineError::config(at(""), "give either 'path' or 'preset', not both"));
                    }
                    if let Some(p) = &m.preset {
                        if !MATPOINT_PRESETS.contains(&p.as_str()) {
                            return Err(PipelineError::config(
                                at(".preset"),
                                format!("unknown preset '{p}', expected one of {MATPOINT_PRESETS:?}"),
                            ));
                        }
                    }
                    if !matches!(m.format, Format::Csv | Format::Json) {
                        return Err(PipelineError::config(at(".format"), "matpoint writes csv or json"));
                    }
                }
                Stage::Compare(c) => {
                    if c.fields.is_empty() && c.curves.is_empty() {
                        return Err(PipelineError::config(at(""), "compare needs at least one field or curve pair"));
                    }
                    for (j, f) in c.fields.iter().enumerate() {
                        for (role, src) in [("measured", f.measured), ("reference", f.reference)] {
                            let key = at(&format!(".fields[{j}].{role}"));
                            match src {
                                FieldSource::Dic => need(&have, "strain", "strain", key)?,
                                FieldSource::Truth => {
                                    need(&have, "warp", "warp", key.clone())?;
                                    need(&have, "strain", "strain", key)?;
                                }
                                FieldSource::Fem => need(&have, "surface", "simulate (after dic)", key)?,
                            }
                        }
                        if let Some(l) = f.rms_limit {
                            if !(l > 0.0) {
                                return Err(PipelineError::config(at(&format!(".fields[{j}].rms_limit")), "must be positive"));
                            }
                        }
                    }
                    for (j, _) in c.curves.iter().enumerate() {
                        if !have.contains("fem") {
                            return Err(PipelineError::config(
                                at(&format!(".curves[{j}]")),
                                "requires a preceding simulate stage",
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------------------
// Execution

/// Per-stage record of what ran on which inputs, sufficient to re-run the stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub parameters: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<InputHash>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub output: PathBuf,
    pub manifests: Vec<StageManifest>,
    pub report: Option<Report>,
}

struct FemArtifacts {
    mesh: HexMesh,
    material: OgdenMaterial,
    solution: FemSolution,
    surface: Option<(LogStrainField, PathBuf)>,
    force_csv: PathBuf,
}

#[derive(Default)]
struct Context {
    pattern: Option<SpecklePattern>,
    reference: Option<GrayImage>,
    frames: Option<Vec<GrayImage>>,
    maps: Option<(Vec<WarpMap>, PathBuf)>,
    dic: Option<SequenceResult>,
    strain: Option<(Vec<LogStrainField>, Vec<PathBuf>)>,
    fem: Option<FemArtifacts>,
    report: Option<Report>,
}

struct Runner {
    seed: u64,
    input: Option<PathBuf>,
    config: serde_json::Value,
    config_sha256: String,
    ctx: Context,
}

/// Files a stage read and wrote.
#[derive(Default)]
struct Files {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<InputHash>, IoError> {
    paths
        .iter()
        .map(|p| Ok(InputHash { path: p.display().to_string(), sha256: io::sha256_file(p)? }))
        .collect()
}

fn frame_file(prefix: &str, k: usize, ext: &str) -> String {
    format!("{prefix}_{k:04}.{ext}")
}

/// Bundled card by name, or a card file.
pub fn resolve_material(name: &str) -> Result<MaterialCard, StageError> {
    if let Some(card) = MaterialCard::builtin(name) {
        return Ok(card);
    }
    let path = Path::new(name);
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
    Ok(MaterialCard::from_json(&text)?)
}

/// Load path of the `uniaxial-ramp` preset for `material`.
pub fn uniaxial_ramp(material: &Material) -> Vec<PathSegment> {
    match material {
        Material::Elastoplastic(m) => hardening_check_path(m),
        Material::Ogden(_) => vec![PathSegment::new(LoadTarget::Stretch { value: 0.7 }, 30)],
    }
}

/// One hardening-table point compared with the driven state at the end of its segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablePointCheck {
    pub table_stress: f64,
    pub table_plastic_strain: f64,
    pub model_stress: f64,
    pub model_plastic_strain: f64,
    pub relative_stress_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardeningCheck {
    pub points: Vec<TablePointCheck>,
    pub max_relative_stress_error: f64,
    /// Largest `|σ_vm − σ_y(ε̄ᵖ)|` over all plastic records, MPa.
    pub max_consistency_error: f64,
}

/// Compares the end state of each segment of a hardening-check history with the table.
pub fn hardening_check(material: &Material, path: &[PathSegment], history: &[HistoryRecord]) -> Option<HardeningCheck> {
    let Material::Elastoplastic(m) = material else { return None };
    if path != hardening_check_path(m).as_slice() {
        return None;
    }
    let mut end = 0;
    let mut points = Vec::new();
    for (seg, &(s, ep)) in path.iter().zip(&m.hardening) {
        end += seg.steps;
        let r = history.get(end)?;
        let model = von_mises(&r.stress);
        points.push(TablePointCheck {
            table_stress: s,
            table_plastic_strain: ep,
            model_stress: model,
            model_plastic_strain: r.ebar_p,
            relative_stress_error: (model - s).abs() / s,
        });
    }
    let max_consistency_error = history
        .iter()
        .filter(|r| r.ebar_p > 0.0)
        .map(|r| (von_mises(&r.stress) - m.yield_stress(r.ebar_p)).abs())
        .fold(0.0, f64::max);
    Some(HardeningCheck {
        max_relative_stress_error: points.iter().map(|p| p.relative_stress_error).fold(0.0, f64::max),
        points,
        max_consistency_error,
    })
}

fn history_json(history: &[HistoryRecord]) -> serde_json::Value {
    let rows = |m: &nalgebra::Matrix3<f64>| -> Vec<[f64; 3]> { (0..3).map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]).collect() };
    history
        .iter()
        .map(|r| {
            serde_json::json!({
                "step": r.step,
                "strain": rows(&r.strain),
                "stress": rows(&r.stress),
                "ebar_p": r.ebar_p,
                "nominal": r.nominal,
            })
        })
        .collect()
}

/// Platen force against compression magnitude (increasing abscissa).
fn fem_force_curve(sol: &FemSolution) -> Vec<(f64, f64)> {
    sol.force_curve().into_iter().map(|(u, f)| (-u, f)).collect()
}

fn closed_form_curve(fem: &FemArtifacts) -> Result<Vec<(f64, f64)>, StageError> {
    let [lx, ly, lz] = fem.mesh.dims;
    fem.solution
        .steps
        .iter()
        .map(|s| {
            let p = ogden_uniaxial_nominal_stress(&fem.material, 1.0 + s.top_displacement / lz)?;
            Ok((-s.top_displacement, p * lx * ly))
        })
        .collect()
}

impl Runner {
    fn new(seed: u64, input: Option<PathBuf>, config: serde_json::Value) -> Self {
        let text = serde_json::to_string(&config).expect("JSON values serialize");
        Self { seed, input, config_sha256: io::sha256_hex(text.as_bytes()), config, ctx: Context::default() }
    }

    fn input_dir(&self, what: &str) -> Result<&Path, StageError> {
        self.input
            .as_deref()
            .ok_or_else(|| StageError::Missing(format!("no {what} from an earlier stage and no input directory")))
    }

    fn run(&mut self, stage: &Stage, dir: &Path) -> Result<StageManifest, PipelineError> {
        let fail = |source: StageError| PipelineError::StageFailed { stage: stage.name().into(), source };
        std::fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.to_path_buf(), source })?;
        let start = Instant::now();
        let files = self.execute(stage, dir).map_err(fail)?;
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        let manifest = StageManifest {
            stage: stage.name().into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: self.seed,
            config_sha256: self.config_sha256.clone(),
            parameters: serde_json::to_value(stage).expect("stage serializes"),
            inputs: hashes(&files.inputs)?,
            outputs: hashes(&files.outputs)?,
            elapsed_ms,
        };
        io::write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }

    fn execute(&mut self, stage: &Stage, dir: &Path) -> Result<Files, StageError> {
        match stage {
            Stage::Speckle(s) => self.speckle(s, dir),
            Stage::Warp(w) => self.warp(w, dir),
            Stage::Dic(d) => self.dic(d, dir),
            Stage::Strain(s) => self.strain(s, dir),
            Stage::Simulate(s) => self.simulate(s, dir),
            Stage::Matpoint(m) => self.matpoint(m, dir),
            Stage::Compare(c) => self.compare(c, dir),
        }
    }

    fn speckle(&mut self, s: &SpeckleStage, dir: &Path) -> Result<Files, StageError> {
        let pattern = s.pattern(self.seed);
        let img = io::quantize16(&render_speckle(&pattern, s.width, s.height)?);
        let path = dir.join(io::frame_name(0));
        io::write_png16(&path, &img)?;
        self.ctx.pattern = Some(pattern);
        self.ctx.reference = Some(img);
        Ok(Files { inputs: vec![], outputs: vec![path] })
    }

    fn warp(&mut self, w: &WarpStage, dir: &Path) -> Result<Files, StageError> {
        let mut files = Files::default();
        let reference = match &self.ctx.reference {
            Some(img) => img.clone(),
            None => {
                let frames = io::list_frames(self.input_dir("reference image")?)?;
                let first = frames.first().ok_or_else(|| StageError::Missing("input directory has no frames".into()))?;
                files.inputs.push(first.clone());
                io::read_image(first)?
            }
        };
        let (mut frames, maps) = ramp_sequence(&reference, &w.warp, w.frames)?;
        if let Some(b) = w.rerandomize_at {
            let pattern = self
                .ctx
                .pattern
                .ok_or_else(|| StageError::Missing("texture rerandomization needs the speckle stage's pattern".into()))?;
            let other = SpecklePattern { seed: pattern.seed.wrapping_add(1), ..pattern };
            let after = io::quantize16(&render_speckle(&other, reference.width(), reference.height())?);
            for k in b..frames.len() {
                frames[k] = warp_with_map(&after, &maps[k])?;
            }
        }
        let frames: Vec<GrayImage> = frames.iter().map(io::quantize16).collect();
        let truth_grid = DicConfig::default()
            .default_grid(reference.width(), reference.height())
            .map_err(StageError::Dic)?;
        for (k, (img, map)) in frames.iter().zip(&maps).enumerate() {
            let p = dir.join(io::frame_name(k));
            io::write_png16(&p, img)?;
            files.outputs.push(p);
            let t = dir.join(frame_file("truth", k, "csv"));
            io::write_with(&t, |out| io::write_truth_csv(out, &truth_grid, |x| map.displacement(x)))?;
            files.outputs.push(t);
        }
        let spec = dir.join("warp.json");
        io::write_json(
            &spec,
            &serde_json::json!({
                "warp": w.warp,
                "frames": w.frames,
                "rerandomize_at": w.rerandomize_at,
                "width": reference.width(),
                "height": reference.height(),
            }),
        )?;
        files.outputs.push(spec.clone());
        self.ctx.frames = Some(frames);
        self.ctx.maps = Some((maps, spec));
        Ok(files)
    }

    fn dic(&mut self, d: &DicStage, dir: &Path) -> Result<Files, StageError> {
        let mut files = Files::default();
        if self.ctx.frames.is_none() {
            let input = self.input_dir("frames")?;
            files.inputs = io::list_frames(input)?;
            self.ctx.frames = Some(files.inputs.iter().map(|p| io::read_image(p)).collect::<Result<_, _>>()?);
        }
        let frames = self.ctx.frames.as_ref().expect("frames loaded above");
        let first = frames.first().ok_or_else(|| StageError::Missing("no frames to correlate".into()))?;
        let grid = match d.grid {
            Some(g) => g,
            None => d.settings.default_grid(first.width(), first.height())?,
        };
        let result = correlate_sequence(frames, &grid, &d.settings)?;
        match d.format {
            Format::Json => {
                let p = dir.join("displacements.json");
                io::write_json(&p, &result.fields)?;
                files.outputs.push(p);
            }
            _ => {
                for (k, f) in result.fields.iter().enumerate() {
                    let p = dir.join(frame_file("displacement", k, "csv"));
                    io::write_with(&p, |w| io::write_displacement_csv(w, f))?;
                    files.outputs.push(p);
                }
            }
        }
        let tracking = dir.join("tracking.json");
        io::write_json(
            &tracking,
            &serde_json::json!({
                "grid": grid,
                "frames": result.frames,
                "first_failed_frame": result.first_failed_frame,
                "degraded_below": d.degraded_below,
                "degraded_frames": result.degraded_frames(d.degraded_below),
            }),
        )?;
        files.outputs.push(tracking);
        self.ctx.dic = Some(result);
        Ok(files)
    }

    fn strain(&mut self, s: &StrainStage, dir: &Path) -> Result<Files, StageError> {
        let mut files = Files::default();
        let loaded: Vec<DisplacementField>;
        let fields: &[DisplacementField] = match &self.ctx.dic {
            Some(r) => &r.fields,
            None => {
                let input = self.input_dir("displacement fields")?;
                files.inputs = io::list_prefixed(input, "displacement_", "csv")?;
                if files.inputs.is_empty() {
                    return Err(StageError::Missing("input directory has no displacement_*.csv files".into()));
                }
                loaded = files.inputs.iter().map(|p| io::read_displacement_csv(p)).collect::<Result<_, _>>()?;
                &loaded
            }
        };
        let strains: Vec<LogStrainField> =
            fields.iter().map(|f| strain_from_displacement(f, s.window, s.axis)).collect::<Result<_, _>>()?;
        for (k, f) in strains.iter().enumerate() {
            let p = match s.format {
                Format::Json => {
                    let p = dir.join(frame_file("strain", k, "json"));
                    io::write_json(&p, f)?;
                    p
                }
                Format::Png => {
                    let p = dir.join(format!("strain_{k:04}_axial.png"));
                    let v = f.values(Component::Axial);
                    let img = plot::heatmap(&v, f.grid.nx, f.grid.ny, plot::symmetric_limit(&v), 8);
                    io::write_rgb_png(&p, &img)?;
                    p
                }
                _ => {
                    let p = dir.join(frame_file("strain", k, "csv"));
                    io::write_with(&p, |w| io::write_strain_csv(w, f))?;
                    p
                }
            };
            files.outputs.push(p);
        }
        self.ctx.strain = Some((strains, files.outputs.clone()));
        Ok(files)
    }

    fn simulate(&mut self, s: &SimulateStage, dir: &Path) -> Result<Files, StageError> {
        let mut files = Files::default();
        let card = resolve_material(&s.material)?;
        if Path::new(&s.material).is_file() {
            files.inputs.push(PathBuf::from(&s.material));
        }
        let Material::Ogden(material) = card.material else {
            return Err(ConstitutiveError::InvalidMaterial(format!(
                "block simulation needs an Ogden material, '{}' is elastoplastic",
                card.name
            ))
            .into());
        };
        let mesh = build_block_mesh(s.dims, s.divisions)?;
        let solution = solve_compression(&mesh, &material, &s.program, &s.newton)?;

        let force_csv = dir.join("force.csv");
        io::write_with(&force_csv, |w| write_force_csv(w, &solution))?;
        files.outputs.push(force_csv.clone());
        if s.format == Format::Vtk {
            for step in &solution.steps {
                let p = dir.join(frame_file("step", step.step, "vtk"));
                io::write_with(&p, |w| write_vtk(w, &mesh, step))?;
                files.outputs.push(p);
            }
        }
        let sampling = match (&s.surface, &self.ctx.dic, &self.ctx.frames) {
            (Some(spec), _, _) => Some((spec.grid, spec.image, spec.margin)),
            (None, Some(dic), Some(frames)) => {
                let grid = dic.fields[0].grid;
                Some((grid, [frames[0].width(), frames[0].height()], 0.0))
            }
            _ => None,
        };
        let surface = match sampling {
            Some((grid, [w, h], margin)) => {
                let map = FaceImageMap::fit(&mesh, w, h, margin);
                let field = extract_surface_strains(&mesh, solution.last(), &grid, &map, s.axis)?;
                let p = dir.join("surface_strain.csv");
                io::write_with(&p, |out| io::write_strain_csv(out, &field))?;
                files.outputs.push(p.clone());
                Some((field, p))
            }
            None => None,
        };
        let last = solution.last();
        let summary = dir.join("summary.json");
        io::write_json(
            &summary,
            &serde_json::json!({
                "material": card.name,
                "nodes": mesh.node_count(),
                "elements": mesh.element_count(),
                "final_displacement": last.top_displacement,
                "final_reaction": last.reaction,
                "max_equilibrium_error": solution.steps.iter().map(|st| st.equilibrium_error).fold(0.0, f64::max),
                "max_jbar_deviation": solution
                    .steps
                    .iter()
                    .flat_map(|st| st.elements.iter().map(|e| (e.jbar - 1.0).abs()))
                    .fold(0.0, f64::max),
                "iterations": solution.steps.iter().map(|st| st.iterations).collect::<Vec<_>>(),
            }),
        )?;
        files.outputs.push(summary);
        self.ctx.fem = Some(FemArtifacts { mesh, material, solution, surface, force_csv });
        Ok(files)
    }

    fn matpoint(&mut self, m: &MatpointStage, dir: &Path) -> Result<Files, StageError> {
        let mut files = Files::default();
        let card = resolve_material(&m.material)?;
        if Path::new(&m.material).is_file() {
            files.inputs.push(PathBuf::from(&m.material));
        }
        let path = match &m.path {
            Some(p) => p.clone(),
            None => uniaxial_ramp(&card.material),
        };
        let history = matpoint_drive(&card.material, &path)?;
        let out = match m.format {
            Format::Json => {
                let p = dir.join("history.json");
                io::write_json(&p, &history_json(&history))?;
                p
            }
            _ => {
                let p = dir.join("history.csv");
                io::write_with(&p, |w| write_history_csv(w, &history))?;
                p
            }
        };
        files.outputs.push(out);
        let summary = dir.join("summary.json");
        io::write_json(
            &summary,
            &serde_json::json!({
                "material": card.name,
                "records": history.len(),
                "hardening_check": hardening_check(&card.material, &path, &history),
            }),
        )?;
        files.outputs.push(summary);
        Ok(files)
    }

    fn field_source(&self, src: FieldSource, frame: usize, inputs: &mut Vec<PathBuf>) -> Result<LogStrainField, StageError> {
        let missing = |what: &str| StageError::Missing(format!("{what} not available"));
        let (strains, paths) = self.ctx.strain.as_ref().ok_or_else(|| missing("measured strain"))?;
        if frame >= strains.len() {
            return Err(StageError::Missing(format!("frame {frame} out of range (0..{})", strains.len())));
        }
        match src {
            FieldSource::Dic => {
                inputs.push(paths[frame].clone());
                Ok(strains[frame].clone())
            }
            FieldSource::Truth => {
                let (maps, spec) = self.ctx.maps.as_ref().ok_or_else(|| missing("imposed warp"))?;
                inputs.push(spec.clone());
                let map = maps.get(frame).ok_or_else(|| missing("warp of this frame"))?;
                let f = &strains[frame];
                Ok(LogStrainField::from_gradient_fn(f.grid, f.axis, |p| map.gradient(p)))
            }
            FieldSource::Fem => {
                let (field, path) =
                    self.ctx.fem.as_ref().and_then(|f| f.surface.as_ref()).ok_or_else(|| missing("simulated surface strain"))?;
                inputs.push(path.clone());
                Ok(field.clone())
            }
        }
    }

    fn curve_source(&self, src: CurveSource, inputs: &mut Vec<PathBuf>) -> Result<Vec<(f64, f64)>, StageError> {
        let fem = self.ctx.fem.as_ref().ok_or_else(|| StageError::Missing("simulation not available".into()))?;
        inputs.push(fem.force_csv.clone());
        match src {
            CurveSource::FemForce => Ok(fem_force_curve(&fem.solution)),
            CurveSource::ClosedFormForce => closed_form_curve(fem),
        }
    }

    fn compare(&mut self, c: &CompareStage, dir: &Path) -> Result<Files, StageError> {
        let mut inputs = Vec::new();
        let mut report_input = ReportInput { degraded_below: c.degraded_below, ..Default::default() };
        for f in &c.fields {
            let frames = self.ctx.strain.as_ref().map_or(0, |s| s.0.len());
            let frame = f.frame.unwrap_or(frames.saturating_sub(1));
            let measured = self.field_source(f.measured, frame, &mut inputs)?;
            let reference = self.field_source(f.reference, frame, &mut inputs)?;
            let comparison = compare_fields(&measured, &reference, f.component)?;
            report_input.fields.push(NamedFieldComparison {
                name: f.name.clone(),
                measured,
                reference,
                comparison,
                rms_limit: f.rms_limit,
            });
        }
        for cv in &c.curves {
            let a = self.curve_source(cv.a, &mut inputs)?;
            let b = self.curve_source(cv.b, &mut inputs)?;
            report_input.curves.push(NamedCurveComparison {
                name: cv.name.clone(),
                comparison: compare_curves(&a, &b)?,
                relative_rms_limit: cv.relative_rms_limit,
            });
        }
        if let Some(dic) = &self.ctx.dic {
            report_input.tracking = Some(dic.frames.clone());
        }
        inputs.sort();
        inputs.dedup();
        let (report, written) = emit_report(dir, &report_input, &self.config, &inputs)?;
        self.ctx.report = Some(report);
        let mut outputs = vec![written.json];
        outputs.extend(written.csv);
        outputs.extend(written.png);
        Ok(Files { inputs, outputs })
    }
}

/// Runs every stage of `config` in order, each into `io.output/<stage name>/`.
///
/// The resolved config is saved as `io.output/config.json`. On failure `error.json` is
/// written into `io.output` and the error returned.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    let out = config.io.output.clone();
    let result = (|| {
        std::fs::create_dir_all(&out).map_err(|source| IoError::File { path: out.clone(), source })?;
        let _ = std::fs::remove_file(out.join("error.json"));
        let value = config.to_value();
        io::write_json(&out.join("config.json"), &value)?;
        let mut runner = Runner::new(config.seed, config.io.input.clone(), value);
        let mut manifests = Vec::with_capacity(config.stages.len());
        for stage in &config.stages {
            manifests.push(runner.run(stage, &out.join(stage.name()))?);
        }
        Ok(PipelineOutcome { output: out.clone(), manifests, report: runner.ctx.report })
    })();
    if let Err(e) = &result {
        write_error_record(&out, e);
    }
    result
}

/// Runs a single stage writing directly into `out`; inputs come from `input`.
pub fn run_stage(stage: &Stage, seed: u64, input: Option<&Path>, out: &Path) -> Result<StageManifest, PipelineError> {
    let config = PipelineConfig {
        seed,
        io: IoConfig { input: input.map(Path::to_path_buf), output: out.to_path_buf() },
        stages: vec![stage.clone()],
    };
    config.validate()?;
    let mut runner = Runner::new(seed, config.io.input.clone(), config.to_value());
    let result = runner.run(stage, out);
    if let Err(e) = &result {
        if out.is_dir() {
            write_error_record(out, e);
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESET_NAMES {
            let cfg = PipelineConfig::preset(name).unwrap();
            assert!(!cfg.stages.is_empty(), "{name}");
        }
        assert!(matches!(PipelineConfig::preset("nope"), Err(PipelineError::ConfigInvalid { .. })));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = PipelineConfig::from_json(r#"{"stages": [{"stage": "speckle", "widht": 100}]}"#).unwrap_err();
        match &err {
            PipelineError::ConfigInvalid { key, line, .. } => {
                assert_eq!(key.as_deref(), Some("widht"));
                assert_eq!(*line, Some(1));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("widht"));
        let err = PipelineConfig::from_json(r#"{"stages": [], "sede": 3}"#).unwrap_err();
        assert!(err.to_string().contains("sede"));
        let err = PipelineConfig::from_json(r#"{"stages": [{"stage": "dic", "settings": {"subset": 31}}]}"#).unwrap_err();
        assert!(err.to_string().contains("subset"));
    }

    #[test]
    fn dependencies_are_checked() {
        let cases = [
            (r#"{"stages": [{"stage": "dic"}]}"#, "stages[0]"),
            (r#"{"stages": [{"stage": "speckle"}, {"stage": "speckle"}]}"#, "stages[1]"),
            (
                r#"{"stages": [{"stage": "speckle"}, {"stage": "warp", "warp": {"kind": "translation", "shift": [1, 0]}},
                   {"stage": "dic"}, {"stage": "strain"},
                   {"stage": "compare", "fields": [{"name": "a", "measured": "dic", "reference": "fem"}]}]}"#,
                "stages[4].fields[0].reference",
            ),
            (r#"{"stages": [{"stage": "compare"}]}"#, "stages[0]"),
            (r#"{"stages": [{"stage": "strain", "window": 4}]}"#, "stages[0]"),
            (r#"{"stages": []}"#, "stages"),
        ];
        for (text, key) in cases {
            match PipelineConfig::from_json(text) {
                Err(PipelineError::ConfigInvalid { key: Some(k), .. }) => assert!(k.starts_with(key), "{k} vs {key}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        // With an input directory the correlation can read frames from disk.
        let cfg = PipelineConfig::from_json(r#"{"io": {"input": "frames"}, "stages": [{"stage": "dic"}]}"#);
        assert!(cfg.is_ok());
    }

    #[test]
    fn stage_failure_writes_error_record() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let text = format!(
            r#"{{"io": {{"output": {:?}}}, "stages": [{{"stage": "matpoint", "material": "missing-card.json"}}]}}"#,
            out
        );
        let cfg = PipelineConfig::from_json(&text).unwrap();
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let record: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
        assert_eq!(record["stage"], "matpoint");
        assert_eq!(record["exit_code"], 4);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("vtk".parse::<Format>().unwrap(), Format::Vtk);
        assert!("xml".parse::<Format>().is_err());
    }
}
