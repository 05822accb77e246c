//! End-to-end tests of the `terraplan` binary: exit codes, file
//! outputs, error JSON, and deterministic reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use terraplan_core::gridmap::{GridMap, InterpolationMethod};
use terraplan_core::roadmap::LimbRoadmap;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_terraplan"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: stdout={} stderr={}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.trim_start().starts_with('{'))
        .unwrap_or_else(|| panic!("no JSON line on stderr: {text}"));
    serde_json::from_str(line).expect("stderr JSON parses")
}

#[test]
fn gen_terrain_gap_records_feature_width() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "gen-terrain",
            "--family",
            "gap",
            "--difficulty",
            "1.0",
            "--out",
            "gap.map",
        ],
    );
    assert_success(&out);
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gap.truth.json")).unwrap())
            .unwrap();
    let width = truth["feature_size"].as_f64().unwrap();
    assert!((width - 3.5).abs() < 1e-9, "gap width {width}");
    assert!(dir.path().join("gap.manifest.json").exists());
}

#[test]
fn gen_terrain_flat_is_fully_traversable() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "gen-terrain",
            "--family",
            "flat",
            "--extent-x",
            "6",
            "--extent-y",
            "6",
            "--out",
            "flat.map",
        ],
    );
    assert_success(&out);
    let map = GridMap::load(&dir.path().join("flat.map")).unwrap();
    let trav = map.layer("traversability").unwrap();
    assert!(trav.iter().all(|&v| v == 1.0));
    assert!(map.has_layer("sdf"));
}

#[test]
fn invalid_family_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen-terrain", "--family", "volcano"]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr);
    for family in ["flat", "rough", "gap", "step", "hole"] {
        assert!(text.contains(family), "stderr should list '{family}': {text}");
    }
    let err = stderr_error_json(&out);
    assert_eq!(err["error"]["code"], 2);
}

#[test]
fn build_roadmap_writes_per_limb_files_and_honors_arm_vertices() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "build-roadmap",
            "--leg-vertices",
            "60",
            "--arm-vertices",
            "150",
            "--out",
            "rms",
        ],
    );
    assert_success(&out);
    let model = terraplan_core::robot::default_model();
    let mut files = 0;
    for limb in &model.limbs {
        let path = dir.path().join("rms").join(format!("{}.roadmap", limb.name));
        let rm = LimbRoadmap::load(&path, Some(model.config_hash())).unwrap();
        let expected = if limb.wheeled { 60 } else { 150 };
        assert_eq!(rm.vertices.len(), expected, "{}", limb.name);
        files += 1;
    }
    assert_eq!(files, 5);
}

#[test]
fn missing_robot_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["build-roadmap", "--robot", "does_not_exist.json", "--out", "rms"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_error_json(&out);
    assert_eq!(err["error"]["kind"], "io");
}

#[test]
fn refine_missing_plan_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "gen-terrain", "--family", "flat", "--extent-x", "6", "--extent-y", "6", "--out",
            "flat.map",
        ],
    );
    assert_success(&out);
    let out = run_in(
        dir.path(),
        &["refine", "--plan", "missing.json", "--map", "flat.map", "--out", "r.json"],
    );
    assert_eq!(out.status.code(), Some(3));
}

/// Shared fixture: a small flat map plus small roadmaps, reused by the
/// plan-based tests below.
fn plan_fixture() -> &'static PathBuf {
    use std::sync::OnceLock;
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = run_in(
            dir.path(),
            &[
                "gen-terrain", "--family", "flat", "--extent-x", "12", "--extent-y", "6",
                "--out", "flat.map",
            ],
        );
        assert_success(&out);
        let out = run_in(
            dir.path(),
            &[
                "build-roadmap", "--leg-vertices", "250", "--arm-vertices", "1200", "--out", "rms",
            ],
        );
        assert_success(&out);
        let path = dir.path().to_path_buf();
        (dir, path)
    })
    .1
}

#[test]
fn plan_then_refine_and_export_roundtrip() {
    let fixture = plan_fixture();
    let dir = tempfile::tempdir().unwrap();
    let map = fixture.join("flat.map");
    let rms = fixture.join("rms");
    let out = run_in(
        dir.path(),
        &[
            "plan",
            "--map", map.to_str().unwrap(),
            "--roadmaps", rms.to_str().unwrap(),
            "--start", "2.5,3,0",
            "--goal", "9.5,3,0",
            "--deterministic",
            "--iterations", "150",
            "--seed", "3",
            "--out", "plan.json",
        ],
    );
    assert_success(&out);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("plan.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "plan");
    assert!(manifest["result"]["final_cost"].as_f64().unwrap() >= 7.0);

    let out = run_in(
        dir.path(),
        &[
            "refine",
            "--plan", "plan.json",
            "--map", map.to_str().unwrap(),
            "--out", "refined.json",
        ],
    );
    assert_success(&out);
    let refined: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("refined.json")).unwrap())
            .unwrap();
    assert_eq!(refined["report"]["success"], true);

    let out = run_in(
        dir.path(),
        &[
            "export",
            "--map", map.to_str().unwrap(),
            "--plan", "plan.json",
            "--out", "csv",
        ],
    );
    assert_success(&out);
    for file in ["elevation.csv", "sdf.csv", "trajectory.csv", "solution_history.csv"] {
        assert!(dir.path().join("csv").join(file).exists(), "{file}");
    }
}

#[test]
fn infeasible_start_exits_with_code_one() {
    let fixture = plan_fixture();
    let dir = tempfile::tempdir().unwrap();
    // start hangs over a no-data chasm too wide for any support
    let mut map = terraplan_core::gridmap::map_from_fn(
        0.1,
        [-8.0, -8.0],
        160,
        160,
        "elevation",
        |x, _| if x.abs() < 6.0 { f64::NAN } else { 0.0 },
    )
    .unwrap();
    terraplan_core::terrain::derive_layers(
        &mut map,
        terraplan_core::terrain::RADIUS_SMALL,
        terraplan_core::terrain::RADIUS_LARGE,
    )
    .unwrap();
    terraplan_core::terrain::classify_traversability(
        &mut map,
        &terraplan_core::terrain::TraversabilityParams::default(),
    )
    .unwrap();
    terraplan_core::terrain::compute_sdf(&mut map).unwrap();
    map.save(&dir.path().join("moat.map")).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "plan",
            "--map", "moat.map",
            "--roadmaps", fixture.join("rms").to_str().unwrap(),
            "--start", "0,0,0",
            "--goal", "7,0,0",
            "--deterministic",
            "--iterations", "5",
            "--out", "plan.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_error_json(&out);
    assert_eq!(err["error"]["kind"], "infeasible");
}

#[test]
fn deterministic_rerun_is_bit_identical() {
    let fixture = plan_fixture();
    let run = |dir: &Path| {
        let out = run_in(
            dir,
            &[
                "plan",
                "--map", fixture.join("flat.map").to_str().unwrap(),
                "--roadmaps", fixture.join("rms").to_str().unwrap(),
                "--start", "2.5,3,0",
                "--goal", "9.5,3,0",
                "--deterministic",
                "--iterations", "400",
                "--seed", "9",
                "--out", "plan.json",
            ],
        );
        assert_success(&out);
        (
            std::fs::read(dir.join("plan.json")).unwrap(),
            std::fs::read(dir.join("plan.manifest.json")).unwrap(),
        )
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (plan_a, manifest_a) = run(dir_a.path());
    let (plan_b, manifest_b) = run(dir_b.path());
    assert_eq!(plan_a, plan_b, "plan files differ between reruns");
    assert_eq!(manifest_a, manifest_b, "manifests differ between reruns");
}

#[test]
fn eval_tiny_sweep_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
[terrain]
extent = [12.0, 6.0]
resolution = 0.1

[roadmap]
leg_vertices = 250
arm_vertices = 1200

deterministic_iterations = 150
"#;
    std::fs::write(dir.path().join("cfg.toml"), config).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "eval",
            "--config", "cfg.toml",
            "--families", "flat",
            "--difficulties", "0,1",
            "--trials", "1",
            "--no-refine",
            "--deterministic",
            "--seed", "5",
            "--out", "ev",
        ],
    );
    assert_success(&out);
    let runs = std::fs::read_to_string(dir.path().join("ev").join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3, "header + 2 rows: {runs}");
    let summary = std::fs::read_to_string(dir.path().join("ev").join("summary.csv")).unwrap();
    for line in summary.lines().skip(1) {
        let rate: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(rate, 1.0, "flat success rate: {line}");
    }
}

#[test]
fn preprocess_adds_derived_layers() {
    let dir = tempfile::tempdir().unwrap();
    // build a bare elevation-only map via the core API
    let map = terraplan_core::gridmap::map_from_fn(0.1, [0.0, 0.0], 50, 50, "elevation", |x, y| {
        0.05 * (x + y)
    })
    .unwrap();
    map.save(&dir.path().join("bare.map")).unwrap();
    let out = run_in(
        dir.path(),
        &["preprocess", "--map", "bare.map", "--out", "full.map"],
    );
    assert_success(&out);
    let full = GridMap::load(&dir.path().join("full.map")).unwrap();
    for layer in ["elevation_smooth_s", "elevation_smooth_l", "traversability", "sdf"] {
        assert!(full.has_layer(layer), "{layer}");
    }
    let v = full
        .value_at("traversability", [2.5, 2.5], InterpolationMethod::NearestNeighbor)
        .unwrap();
    assert_eq!(v, 1.0);
}
