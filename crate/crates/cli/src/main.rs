//! `strainlab` command line tool: one subcommand per pipeline stage plus `pipeline`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use strainlab::compare::{compare_fields, emit_report, NamedFieldComparison, ReportInput};
use strainlab::io;
use strainlab::pipeline::{
    run_pipeline, run_stage, write_error_record, DicStage, Format, MatpointStage, PipelineConfig, PipelineError,
    SimulateStage, SpeckleStage, Stage, StageError, StageManifest, StrainStage, WarpStage,
};
use strainlab::speckle::WarpSpec;
use strainlab::strain::Component;
use strainlab::{Axis, Grid2D};

#[derive(Debug, Parser)]
#[command(name = "strainlab", version, about = "Synthetic speckle, DIC, strain fields, block simulation and comparison")]
struct Cli {
    /// Worker threads; output is identical for any value.
    #[arg(long, global = true, env = "STRAINLAB_JOBS")]
    jobs: Option<usize>,
    /// Print per-stage manifests.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON file with the stage's parameter block.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a reference speckle image (frame_0000.png).
    Speckle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Warp the first image of --in into a frame sequence with known displacements.
    Warp {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Number of frames in the sequence.
        #[arg(long)]
        frames: Option<usize>,
        /// Axial log strain of a barreled compression along image y.
        #[arg(long, allow_hyphen_values = true)]
        axial_strain: Option<f64>,
        /// Barrel amplitude of the transverse expansion.
        #[arg(long, default_value_t = 0.0)]
        barrel: f64,
    },
    /// Correlate the frames in --in against the first one.
    Dic {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Subset size in pixels (odd).
        #[arg(long)]
        subset: Option<usize>,
        /// Grid spacing in pixels.
        #[arg(long)]
        step: Option<usize>,
        /// Explicit grid as `x0,y0,spacing,nx,ny`.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<Grid2D>,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Logarithmic strain from the displacement CSVs in --in.
    Strain {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Plane-fit window in grid points (odd).
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Compress the rubber block between platens.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Bundled card name or card file.
        #[arg(long)]
        material: Option<String>,
        /// `block-compression`: default mesh, bonded platens, 70 mm in 20 steps.
        #[arg(long)]
        preset: Option<String>,
        /// Number of load steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Drive a single material point along a load path.
    Matpoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        material: Option<String>,
        /// `uniaxial-ramp`.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Compare two strain CSV files (measured first) and write a report.
    Compare {
        /// Measured then reference strain CSV (`--in a.csv --in b.csv` or `--in a.csv b.csv`).
        #[arg(long = "in", num_args = 1..=2, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "axial")]
        component: Component,
        #[arg(long, default_value = "y")]
        axis: String,
        #[arg(long)]
        rms_limit: Option<f64>,
    },
    /// Run a pipeline config or a bundled preset.
    Pipeline {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// `rubber-demo`, `table2-check` or `dic-accuracy`.
        #[arg(long)]
        preset: Option<String>,
        /// Overrides `io.output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `io.input`.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_grid(s: &str) -> Result<Grid2D, String> {
    let v: Vec<&str> = s.split(',').map(str::trim).collect();
    if v.len() != 5 {
        return Err("expected x0,y0,spacing,nx,ny".into());
    }
    let f = |k: usize| v[k].parse::<f64>().map_err(|e| format!("{}: {e}", v[k]));
    let n = |k: usize| v[k].parse::<usize>().map_err(|e| format!("{}: {e}", v[k]));
    Grid2D::new([f(0)?, f(1)?], f(2)?, n(3)?, n(4)?).map_err(|e| e.to_string())
}

/// Reads a stage parameter block, adding the stage tag when the file omits it.
fn load_stage(path: &Path, name: &str) -> Result<Stage, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| io::IoError::File { path: path.into(), source })?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| PipelineError::ConfigInvalid {
        key: None,
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    if let Some(map) = value.as_object_mut() {
        map.entry("stage").or_insert_with(|| name.into());
    }
    let stage: Stage = serde_json::from_value(value).map_err(|e| PipelineError::ConfigInvalid {
        key: None,
        line: None,
        message: e.to_string(),
    })?;
    if stage.name() != name {
        return Err(PipelineError::ConfigInvalid {
            key: Some("stage".into()),
            line: None,
            message: format!("config describes a '{}' stage, expected '{name}'", stage.name()),
        });
    }
    Ok(stage)
}

fn stage_or<T>(config: &Option<PathBuf>, name: &str, pick: impl Fn(Stage) -> Option<T>, default: T) -> Result<T, PipelineError> {
    match config {
        Some(p) => Ok(pick(load_stage(p, name)?).expect("stage kind checked")),
        None => Ok(default),
    }
}

fn print_manifest(m: &StageManifest, verbose: bool) {
    println!("{}: {} output file(s) in {:.0} ms", m.stage, m.outputs.len(), m.elapsed_ms);
    if verbose {
        println!("{}", serde_json::to_string_pretty(m).expect("manifest serializes"));
    }
}

fn run_single(stage: Stage, common: &Common, input: Option<&Path>, verbose: bool) -> Result<(), PipelineError> {
    let m = run_stage(&stage, common.seed, input, &common.out)?;
    print_manifest(&m, verbose);
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Speckle { common, width, height } => {
            let mut s = stage_or(&common.config, "speckle", |s| if let Stage::Speckle(s) = s { Some(s) } else { None }, SpeckleStage::default())?;
            s.width = width.unwrap_or(s.width);
            s.height = height.unwrap_or(s.height);
            run_single(Stage::Speckle(s), &common, None, verbose)
        }
        Command::Warp { common, input, frames, axial_strain, barrel } => {
            let default = WarpStage { warp: WarpSpec::identity(), frames: 11, rerandomize_at: None };
            let mut w = stage_or(&common.config, "warp", |s| if let Stage::Warp(w) = s { Some(w) } else { None }, default)?;
            if let Some(e) = axial_strain {
                w.warp = WarpSpec::BarreledCompression { axial_log_strain: e, barrel, center: None, axial_length: None, axis: Axis::Y };
            }
            w.frames = frames.unwrap_or(w.frames);
            run_single(Stage::Warp(w), &common, Some(&input), verbose)
        }
        Command::Dic { common, input, subset, step, grid, format } => {
            let mut d = stage_or(&common.config, "dic", |s| if let Stage::Dic(d) = s { Some(d) } else { None }, DicStage::default())?;
            d.settings.subset_size = subset.unwrap_or(d.settings.subset_size);
            d.settings.step = step.unwrap_or(d.settings.step);
            d.grid = grid.or(d.grid);
            d.format = format.unwrap_or(d.format);
            run_single(Stage::Dic(d), &common, Some(&input), verbose)
        }
        Command::Strain { common, input, window, format } => {
            let mut s = stage_or(&common.config, "strain", |s| if let Stage::Strain(s) = s { Some(s) } else { None }, StrainStage::default())?;
            s.window = window.unwrap_or(s.window);
            s.format = format.unwrap_or(s.format);
            run_single(Stage::Strain(s), &common, Some(&input), verbose)
        }
        Command::Simulate { common, material, preset, steps, format } => {
            let mut s = stage_or(&common.config, "simulate", |s| if let Stage::Simulate(s) = s { Some(s) } else { None }, SimulateStage::default())?;
            match preset.as_deref() {
                None | Some("block-compression") => {}
                Some(other) => {
                    return Err(PipelineError::ConfigInvalid {
                        key: Some("preset".into()),
                        line: None,
                        message: format!("unknown simulate preset '{other}', expected 'block-compression'"),
                    })
                }
            }
            s.material = material.unwrap_or(s.material);
            s.program.steps = steps.unwrap_or(s.program.steps);
            s.format = format.unwrap_or(s.format);
            run_single(Stage::Simulate(s), &common, None, verbose)
        }
        Command::Matpoint { common, material, preset, format } => {
            let mut m = stage_or(&common.config, "matpoint", |s| if let Stage::Matpoint(m) = s { Some(m) } else { None }, MatpointStage::default())?;
            m.material = material.unwrap_or(m.material);
            if preset.is_some() {
                m.preset = preset;
                m.path = None;
            }
            m.format = format.unwrap_or(m.format);
            run_single(Stage::Matpoint(m), &common, None, verbose)
        }
        Command::Compare { input, out, component, axis, rms_limit } => {
            let axis: Axis = serde_json::from_value(serde_json::Value::String(axis.clone())).map_err(|_| {
                PipelineError::ConfigInvalid { key: Some("axis".into()), line: None, message: format!("unknown axis '{axis}'") }
            })?;
            if input.len() != 2 {
                return Err(PipelineError::ConfigInvalid {
                    key: Some("in".into()),
                    line: None,
                    message: format!("compare needs exactly two strain files, got {}", input.len()),
                });
            }
            let fail = |source: StageError| PipelineError::StageFailed { stage: "compare".into(), source };
            let measured = io::read_strain_csv(&input[0], axis).map_err(|e| fail(e.into()))?;
            let reference = io::read_strain_csv(&input[1], axis).map_err(|e| fail(e.into()))?;
            let comparison = compare_fields(&measured, &reference, component).map_err(|e| fail(e.into()))?;
            let report_input = ReportInput {
                fields: vec![NamedFieldComparison { name: "measured_vs_reference".into(), measured, reference, comparison, rms_limit }],
                ..Default::default()
            };
            let config = serde_json::json!({ "component": component, "axis": axis, "rms_limit": rms_limit });
            let (report, _) = emit_report(&out, &report_input, &config, &input).map_err(|e| fail(e.into()))?;
            for f in &report.fields {
                println!("{}: rms {:.3e}, mae {:.3e}, bias {:.3e}, overlap {:.3}", f.name, f.rms, f.mae, f.bias, f.valid_overlap_fraction);
            }
            Ok(())
        }
        Command::Pipeline { config, preset, out, input, seed } => {
            let mut cfg = match (config, preset) {
                (Some(path), _) => PipelineConfig::from_path(&path)?,
                (None, Some(name)) => PipelineConfig::preset(&name)?,
                (None, None) => unreachable!("clap requires one of --config and --preset"),
            };
            if let Some(out) = out {
                cfg.io.output = out;
            }
            if input.is_some() {
                cfg.io.input = input;
            }
            cfg.seed = seed.unwrap_or(cfg.seed);
            let outcome = run_pipeline(&cfg)?;
            for m in &outcome.manifests {
                print_manifest(m, verbose);
            }
            if let Some(report) = &outcome.report {
                for f in &report.fields {
                    let verdict = f.pass.map_or("", |p| if p { " PASS" } else { " FAIL" });
                    println!("{}: {} rms {:.3e} (overlap {:.3}){verdict}", f.name, f.component, f.rms, f.valid_overlap_fraction);
                }
                for c in &report.curves {
                    let verdict = c.pass.map_or("", |p| if p { " PASS" } else { " FAIL" });
                    println!("{}: relative rms {:.3e}{verdict}", c.name, c.relative_rms);
                }
                if let Some(t) = &report.tracking {
                    if !t.flagged_frames.is_empty() {
                        println!("degraded tracking in frames {:?}", t.flagged_frames);
                    }
                }
            }
            println!("outputs in {}", outcome.output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match cli.jobs {
        Some(0) => Err(anyhow::anyhow!("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().context("building worker pool"),
        None => rayon::ThreadPoolBuilder::new().build().context("building worker pool"),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let out_dir = match &cli.command {
        Command::Pipeline { .. } => None,
        Command::Compare { out, .. } => Some(out.clone()),
        Command::Speckle { common, .. }
        | Command::Warp { common, .. }
        | Command::Dic { common, .. }
        | Command::Strain { common, .. }
        | Command::Simulate { common, .. }
        | Command::Matpoint { common, .. } => Some(common.out.clone()),
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(dir) = out_dir.filter(|d| d.is_dir()) {
                write_error_record(&dir, &e);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
