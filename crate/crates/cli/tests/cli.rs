use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn strainlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strainlab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("STRAINLAB_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ext))
        .collect();
    v.sort();
    v
}

#[test]
fn unknown_config_key_fails_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"stages": [{"stage": "speckle", "colour": 3}]}"#).unwrap();
    let out = strainlab(&["pipeline", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn table2_preset_reproduces_hardening_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = strainlab(&["pipeline", "--preset", "table2-check", "--out", "run"], dir.path());
    ok(&out);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/matpoint/summary.json")).unwrap()).unwrap();
    let check = &summary["hardening_check"];
    assert_eq!(check["points"].as_array().unwrap().len(), 7);
    assert!(check["max_relative_stress_error"].as_f64().unwrap() < 1e-8);
    assert!(dir.path().join("run/matpoint/manifest.json").is_file());
    assert!(dir.path().join("run/config.json").is_file());
}

#[test]
fn matpoint_subcommand_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    let card = data("table2.json");
    let out = strainlab(
        &["matpoint", "--material", card.to_str().unwrap(), "--preset", "uniaxial-ramp", "--out", "mp"],
        dir.path(),
    );
    ok(&out);
    let csv = std::fs::read_to_string(dir.path().join("mp/history.csv")).unwrap();
    assert!(csv.starts_with("step,e11,e22,e33,e12,e23,e13,s11,s22,s33,s12,s23,s13,ebar_p,nominal\n"));
    assert_eq!(csv.lines().count(), 1 + 1 + 70);
    let bad = strainlab(&["matpoint", "--preset", "zigzag", "--out", "mp2"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn simulate_subcommand_writes_vtk_series_and_forces() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("block.json"),
        r#"{"dims": [10, 10, 20], "divisions": [1, 1, 2], "program": {"total_displacement": -4, "steps": 2}}"#,
    )
    .unwrap();
    let card = data("table1.json");
    let out = strainlab(
        &["simulate", "--config", "block.json", "--material", card.to_str().unwrap(), "--preset", "block-compression", "--out", "sim"],
        dir.path(),
    );
    ok(&out);
    assert_eq!(files(&dir.path().join("sim"), "vtk").len(), 3);
    let forces = std::fs::read_to_string(dir.path().join("sim/force.csv")).unwrap();
    assert_eq!(forces.lines().count(), 4);
    let elastoplastic = strainlab(&["simulate", "--material", "aluminum-j2", "--out", "sim2"], dir.path());
    assert_eq!(elastoplastic.status.code(), Some(3));
}

#[test]
fn missing_input_is_an_io_failure_with_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = strainlab(&["dic", "--in", "nowhere", "--out", "dic"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dic/error.json")).unwrap()).unwrap();
    assert_eq!(record["stage"], "dic");
}

#[test]
fn stage_chain_is_identical_for_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |jobs: &str, root: &str| {
        let p = |s: &str| format!("{root}/{s}");
        ok(&strainlab(&["--jobs", jobs, "speckle", "--out", &p("ref"), "--width", "160", "--height", "160", "--seed", "5"], dir.path()));
        ok(&strainlab(
            &["--jobs", jobs, "warp", "--in", &p("ref"), "--out", &p("frames"), "--frames", "3", "--axial-strain", "-0.04", "--barrel", "0.3"],
            dir.path(),
        ));
        ok(&strainlab(&["--jobs", jobs, "dic", "--in", &p("frames"), "--out", &p("dic"), "--subset", "31", "--step", "10"], dir.path()));
        ok(&strainlab(&["--jobs", jobs, "strain", "--in", &p("dic"), "--out", &p("strain")], dir.path()));
    };
    run("1", "a");
    run("3", "b");
    for sub in ["frames", "dic", "strain"] {
        let ext = if sub == "frames" { "png" } else { "csv" };
        let a = files(&dir.path().join("a").join(sub), ext);
        let b = files(&dir.path().join("b").join(sub), ext);
        assert!(!a.is_empty());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
        }
        assert!(dir.path().join("a").join(sub).join("manifest.json").is_file());
    }
    let out = strainlab(
        &["compare", "--in", "a/strain/strain_0002.csv", "--in", "b/strain/strain_0002.csv", "--out", "cmp"],
        dir.path(),
    );
    ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmp/report.json")).unwrap()).unwrap();
    assert_eq!(report["fields"][0]["rms"], 0.0);
    assert_eq!(report["schema"], "strainlab-report/1");
}
