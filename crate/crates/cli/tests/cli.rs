//! Black-box tests of the command-line contract: file round-trips, exit
//! codes, output shapes, and the bundled scenario files.

use lticbf_cli::schema::ScenarioFile;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::Command;

fn scenario_path(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(file)
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_lticbf"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read_manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn bundled_scenarios_round_trip_exactly() {
    for name in [
        "double_integrator.toml",
        "planar_quadrotor.toml",
        "aircraft_lateral.toml",
    ] {
        let text = std::fs::read_to_string(scenario_path(name)).unwrap();
        let parsed: ScenarioFile = toml::from_str(&text).unwrap();
        let rendered = toml::to_string_pretty(&parsed).unwrap();
        let reparsed: ScenarioFile = toml::from_str(&rendered).unwrap();
        assert_eq!(parsed, reparsed, "{name} does not round-trip");
        parsed.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn analyze_emits_the_expected_domain_rows_for_the_double_integrator() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let (code, err) = run(&[
        "analyze",
        scenario_path("double_integrator.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");

    // One halfspace per (lower piece, upper piece) pair: 2 x 3 = 6.
    let xu = std::fs::read_to_string(out.join("xu.csv")).unwrap();
    assert_eq!(xu.lines().count(), 1 + 6, "xu.csv rows: {xu}");
    // Plus finite caps: 2 lower pieces against the upper support and
    // 3 upper pieces against the lower support.
    let xb = std::fs::read_to_string(out.join("xb.csv")).unwrap();
    assert_eq!(xb.lines().count(), 1 + 6 + 2 + 3, "xb.csv rows: {xb}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let coeffs: Vec<f64> = report["families"][0]["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(coeffs, vec![1.0, 1.0, -2.0, -3.0, -2.0]);
    assert_eq!(report["filter_law"], "parallel-saturation");
}

#[test]
fn analyze_reports_two_independent_blocks_for_the_planar_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let (code, err) = run(&[
        "analyze",
        scenario_path("planar_quadrotor.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let blocks = report["blocks"].as_array().unwrap();
    assert_eq!(blocks.len(), 2);
    for b in blocks {
        assert_eq!(b["kind"], "parallel-family");
    }
    assert_eq!(report["filter_law"], "block-saturation");
    assert_eq!(report["family_directions_independent"], true);
}

#[test]
fn infeasible_start_override_exits_four_with_a_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let (code, err) = run(&[
        "simulate",
        scenario_path("double_integrator.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--x0",
        "0.0,5.0",
    ]);
    assert_eq!(code, 4, "{err}");
    let manifest = read_manifest(&out);
    assert_eq!(manifest["infeasible"]["t"], 0.0);
    let lambda = manifest["infeasible"]["certificate"].as_array().unwrap();
    // One multiplier per stacked row plus one per box bound.
    assert_eq!(lambda.len(), 5 + 2);
    assert!(lambda.iter().any(|v| v.as_f64().unwrap() > 0.0));
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn configuration_errors_exit_two_without_writing_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "name = broken [[[").unwrap();
    let out = tmp.path().join("never");
    let (code, _) = run(&[
        "analyze",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(!out.exists());

    let (code, _) = run(&["simulate", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(code, 2);

    // Valid TOML, inconsistent dimensions.
    let text = std::fs::read_to_string(scenario_path("double_integrator.toml"))
        .unwrap()
        .replace("x0 = [0.0, 0.0]", "x0 = [0.0, 0.0, 0.0]");
    std::fs::write(&bad, text).unwrap();
    let (code, err) = run(&[
        "analyze",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("simulation.x0"), "{err}");
    assert!(!out.exists());
}

#[test]
fn trajectory_csv_is_rectangular_with_full_precision_floats() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let (code, err) = run(&[
        "simulate",
        scenario_path("double_integrator.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--compare-qp",
    ]);
    assert_eq!(code, 0, "{err}");

    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    let width = lines.next().unwrap().split(',').count();
    let mut rows = 0;
    for line in lines {
        assert_eq!(line.split(',').count(), width, "ragged row: {line}");
        rows += 1;
    }
    assert_eq!(rows, 2001); // horizon 10 at dt 0.005, plus the initial sample

    // Float fields carry 17 significant digits (mantissa with 16 decimals)
    // so they parse back to the exact f64.
    let sample = text.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    let mantissa = sample.split('e').next().unwrap();
    let decimals = mantissa.split('.').nth(1).unwrap();
    assert_eq!(decimals.trim_start_matches('-').len(), 16, "{sample}");

    let manifest = read_manifest(&out);
    assert!(manifest["max_qp_deviation"].as_f64().unwrap() <= 1e-8);
    assert!(out.join("deviation.csv").exists());
}

#[test]
fn raster_slice_and_window_overrides_shape_the_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    // Pin position axes; velocity coordinates 2 and 3 become the plane.
    let (code, err) = run(&[
        "raster",
        scenario_path("planar_quadrotor.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--res",
        "32",
        "--slice",
        "0=0.1,1=-0.2",
        "--window",
        "-0.8,0.8,-0.8,0.8",
    ]);
    assert_eq!(code, 0, "{err}");
    for name in ["raster_c.csv", "raster_s.csv", "raster_xu.csv", "raster_xb.csv"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 32, "{name}");
        assert_eq!(lines[0].split(',').count(), 1 + 32, "{name}");
        let first_x: f64 = lines[0].split(',').nth(1).unwrap().parse().unwrap();
        let last_x: f64 = lines[0].split(',').next_back().unwrap().parse().unwrap();
        assert_eq!(first_x, -0.8);
        assert_eq!(last_x, 0.8);
    }
    // Velocity box |v| ≤ 0.7 bounds the safe set strictly inside this
    // window, so the safe grid must be neither empty nor full.
    let s = std::fs::read_to_string(out.join("raster_s.csv")).unwrap();
    let ones = s.matches(",1").count();
    assert!(ones > 0 && ones < 32 * 32, "safe grid fill {ones}");
}

#[test]
fn manifests_record_checksums_that_match_the_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let (code, err) = run(&[
        "simulate",
        scenario_path("planar_quadrotor.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let manifest = read_manifest(&out);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for entry in outputs {
        let name = entry["path"].as_str().unwrap();
        let body = std::fs::read(out.join(name)).unwrap();
        let digest = format!("{:x}", Sha256::digest(&body));
        assert_eq!(digest, entry["sha256"].as_str().unwrap(), "{name}");
    }
    // The embedded scenario copy must itself resolve (schema fidelity).
    let embedded: ScenarioFile =
        serde_json::from_value(manifest["resolved_scenario"].clone()).unwrap();
    embedded.resolve().unwrap();
}
