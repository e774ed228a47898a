use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rrm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn rrm")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rrm(dir, args);
    assert!(
        out.status.success(),
        "rrm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    rrm(dir, args).status.code().expect("exit code")
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn without_timestamps(mut v: Value) -> Value {
    match &mut v {
        Value::Object(map) => {
            map.remove("generated_at_unix");
            for (_, child) in map.iter_mut() {
                *child = without_timestamps(child.take());
            }
        }
        Value::Array(items) => {
            for child in items.iter_mut() {
                *child = without_timestamps(child.take());
            }
        }
        _ => {}
    }
    v
}

fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-model", "--input", "2x12x12", "--seed", "5", "--out", "m.rrmm"]);
    dir
}

#[test]
fn static_video_costs_nothing_after_first_frame() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["run", "--model", "m.rrmm", "--synthetic", "static", "--num-frames", "6", "--report", "r.json"]);
    let r = report(d, "r.json");
    assert_eq!(r["summary"]["multiplications_after_first_frame"], 0);
    assert!(r["summary"]["multiplications"].as_u64().unwrap() > 0);
    assert!(d.join("r.csv").exists());
}

#[test]
fn exact_threshold_matches_dense_oracle() {
    let dir = setup();
    let d = dir.path();
    ok(
        d,
        &[
            "run", "--model", "m.rrmm", "--synthetic", "random-walk", "--motion", "0.05", "--num-frames", "30",
            "--epsilon", "0", "--oracle", "--report", "r.json",
        ],
    );
    let r = report(d, "r.json");
    assert_eq!(r["schema_version"], 1);
    let err = r["summary"]["max_feature_error"].as_f64().unwrap();
    assert!(err <= 1e-4, "{err}");
    assert_eq!(r["frames"].as_array().unwrap().len(), 30);
}

#[test]
fn repeated_runs_match_modulo_timestamp() {
    let dir = setup();
    let d = dir.path();
    let args = |name: &'static str| {
        vec![
            "run", "--model", "m.rrmm", "--synthetic", "shifting-square", "--seed", "9", "--epsilon", "0.02",
            "--oracle", "--report", name,
        ]
    };
    ok(d, &args("a.json"));
    ok(d, &args("b.json"));
    let a = fs::read_to_string(d.join("a.json")).unwrap();
    let b = fs::read_to_string(d.join("b.json")).unwrap();
    let strip = |s: &str| {
        s.lines()
            .filter(|l| !l.contains("generated_at_unix"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
}

#[test]
fn chunked_run_agrees_with_sequential() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-frames", "--size", "2x12x12", "--num-frames", "20", "--seed", "3", "--out", "frames"]);
    for (chunks, name) in [("1", "one.json"), ("4", "four.json")] {
        ok(
            d,
            &["run", "--model", "m.rrmm", "--frames", "frames", "--oracle", "--chunks", chunks, "--report", name],
        );
    }
    let four = report(d, "four.json");
    assert_eq!(four["summary"]["keyframes"], serde_json::json!([0, 5, 10, 15]));
    assert!(four["summary"]["max_feature_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(report(d, "one.json")["summary"]["keyframes"], serde_json::json!([0]));
}

#[test]
fn sweep_reports_every_threshold() {
    let dir = setup();
    let d = dir.path();
    ok(
        d,
        &["sweep", "--model", "m.rrmm", "--synthetic", "shifting-square", "--epsilons", "0.01,0.05", "--report", "s.json"],
    );
    let s = report(d, "s.json");
    assert_eq!(s["summary"].as_array().unwrap().len(), 2);
    assert_eq!(s["runs"].as_array().unwrap().len(), 2);
    assert_eq!(s["frame_source"]["synthetic"]["kind"], "shifting-square");

    ok(
        d,
        &["sweep", "--model", "m.rrmm", "--synthetic", "shifting-square", "--epsilons", "0.03", "--report", "one.json"],
    );
    ok(
        d,
        &[
            "run", "--model", "m.rrmm", "--synthetic", "shifting-square", "--epsilon", "0.03", "--oracle", "--report",
            "run.json",
        ],
    );
    let single = without_timestamps(report(d, "one.json")["runs"][0].take());
    assert_eq!(single, without_timestamps(report(d, "run.json")));
}

#[test]
fn calibration_is_deterministic_and_drives_the_controller() {
    let dir = setup();
    let d = dir.path();
    let cal = |out: &'static str| {
        vec![
            "calibrate", "--model", "m.rrmm", "--synthetic", "shifting-square", "--count", "2", "--epsilon", "0.03",
            "--error-threshold", "0.05", "--out", out,
        ]
    };
    ok(d, &cal("a.json"));
    ok(d, &cal("b.json"));
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());

    ok(
        d,
        &[
            "run", "--model", "m.rrmm", "--synthetic", "shifting-square", "--num-frames", "120", "--epsilon", "0.03",
            "--error-model", "a.json", "--report", "r.json",
        ],
    );
    let r = report(d, "r.json");
    assert!(r["summary"]["keyframes"].as_array().unwrap().len() > 1);
    assert_eq!(r["error_model"]["threshold"], 0.05);
}

#[test]
fn calibration_at_zero_threshold_has_nothing_to_fit() {
    let dir = setup();
    let d = dir.path();
    let out = rrm(
        d,
        &["calibrate", "--model", "m.rrmm", "--synthetic", "random-walk", "--motion", "0.05", "--count", "2", "--out", "em.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 5"));
    assert!(!d.join("em.json").exists());
}

#[test]
fn fits_supplied_points() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mu = [0.3, -1.2, 0.8, 0.5, 2.0];
    let mut csv = String::from("accumulated_truncation,measured_error\n");
    for i in 0..20 {
        let x = i as f64 * 0.15;
        let y = mu.iter().rev().fold(0.0, |acc, c| acc * x + c);
        csv.push_str(&format!("{x},{y}\n"));
    }
    fs::write(d.join("pts.csv"), csv).unwrap();
    ok(d, &["calibrate", "--points", "pts.csv", "--error-threshold", "1", "--out", "em.json"]);
    let em = report(d, "em.json");
    for (got, want) in em["coefficients"].as_array().unwrap().iter().zip(mu) {
        assert!((got.as_f64().unwrap() - want).abs() <= 1e-6 * want.abs());
    }
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(d, &["run", "--model", "m.rrmm"]), 1);
    assert_eq!(code(d, &["run", "--no-such-flag"]), 1);
    assert_eq!(code(d, &["run", "--model", "m.rrmm", "--synthetic", "static", "--epsilon", "-1"]), 1);
    assert_eq!(code(d, &["--help"]), 0);

    let model = fs::read(d.join("m.rrmm")).unwrap();
    fs::write(d.join("short.rrmm"), &model[..model.len() - 3]).unwrap();
    assert_eq!(code(d, &["run", "--model", "short.rrmm", "--synthetic", "static"]), 2);
    let mut trailing = model.clone();
    trailing.extend([0, 0, 0]);
    fs::write(d.join("long.rrmm"), trailing).unwrap();
    let out = rrm(d, &["run", "--model", "long.rrmm", "--synthetic", "static"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&model.len().to_string()));
    assert_eq!(code(d, &["run", "--model", "missing.rrmm", "--synthetic", "static"]), 2);

    fs::create_dir(d.join("nan")).unwrap();
    let mut frame = Vec::new();
    for v in [2u32, 12, 12] {
        frame.extend(v.to_le_bytes());
    }
    for i in 0..2 * 12 * 12 {
        let v = if i == 7 { f32::NAN } else { 0.5 };
        frame.extend(v.to_le_bytes());
    }
    fs::write(d.join("nan/frame_00000.bin"), frame).unwrap();
    assert_eq!(code(d, &["run", "--model", "m.rrmm", "--frames", "nan"]), 3);

    assert_eq!(code(d, &["run", "--model", "m.rrmm", "--synthetic", "static", "--size", "3x12x12"]), 2);
}
