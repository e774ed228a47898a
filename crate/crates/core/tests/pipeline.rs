use rrm_core::io::{decode_model, encode_model, load_frames, save_frames};
use rrm_core::run::{run, sweep, RunConfig};
use rrm_core::synth::{self, random_walk, shifting_square};
use rrm_core::{calibrate, ErrorModel, FeatureErrorMetric, RrmError, Shape};
use serde_json::Value;

const SHAPE: Shape = Shape::new(2, 12, 12);

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

fn recompute(report: &Value, include_keyframes: bool) -> (f64, f64, f64) {
    let (mut total, mut dense_zero, mut rrm_zero, mut dense_cost, mut rrm_cost) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for frame in report["frames"].as_array().unwrap() {
        if !include_keyframes && frame["mode"] == "keyframe" {
            continue;
        }
        for l in frame["layers"].as_array().unwrap() {
            let m = f(&l["dense_mults"]);
            let zf = f(&l["input_zero_fraction"]);
            let rho = f(&l["delta_density"]);
            total += m;
            dense_zero += zf * m;
            rrm_zero += (1.0 - rho) * m;
            dense_cost += (1.0 - zf) * m;
            rrm_cost += rho * m;
        }
    }
    (dense_zero / total, rrm_zero / total, dense_cost / rrm_cost)
}

#[test]
fn report_summary_is_recomputable_from_rows() {
    let model = synth::demo_model(SHAPE, 4).unwrap();
    let frames = shifting_square(SHAPE, 25, 1, 8);
    for include_keyframes in [true, false] {
        let config = RunConfig { epsilon: 0.02, include_keyframes, ..RunConfig::default() };
        let r = run(&model, &frames, &config, None).unwrap();
        let json: Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        let (s_dense, s_rrm, eta) = recompute(&json, include_keyframes);
        let summary = &json["summary"];
        assert!((s_dense - f(&summary["dense_sparsity"])).abs() <= 1e-9);
        assert!((s_rrm - f(&summary["rrm_sparsity"])).abs() <= 1e-9);
        assert!((eta - f(&summary["speedup"])).abs() <= 1e-9 * eta);
    }
}

#[test]
fn sweep_error_grows_with_threshold() {
    let model = synth::demo_model(SHAPE, 6).unwrap();
    let frames = shifting_square(SHAPE, 40, 1, 3);
    let eps = [0.0, 0.01, 0.03, 0.05, 0.1];
    let report = sweep(&model, &frames, &eps, &RunConfig::default(), None).unwrap();
    let errors: Vec<f64> = report.summary.iter().map(|r| r.final_feature_error).collect();
    assert!(errors[0] <= 1e-4, "{errors:?}");
    assert!(errors.windows(2).all(|w| w[1] >= w[0]), "{errors:?}");
}

#[test]
fn exact_calibration_measures_no_error_and_cannot_be_fitted() {
    let model = synth::demo_model(SHAPE, 2).unwrap();
    let videos: Vec<_> = (0..2).map(|s| random_walk(SHAPE, 20, 0.05, s)).collect();
    let points = calibrate(&model, &videos, 0.0, FeatureErrorMetric::L2).unwrap();
    assert_eq!(points.len(), 40);
    assert!(points.iter().all(|p| p.accumulated_truncation == 0.0 && p.measured_error <= 1e-4));
    assert!(matches!(
        ErrorModel::fit(&points, 0.1),
        Err(RrmError::Underdetermined { needed: 5, found: 1 })
    ));
}

#[test]
fn files_round_trip_through_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let model = synth::demo_model(SHAPE, 1).unwrap();
    let decoded = decode_model(&encode_model(&model).unwrap()).unwrap();
    let frames = shifting_square(SHAPE, 10, 2, 1);
    save_frames(&frames, dir.path()).unwrap();
    let loaded = load_frames(dir.path()).unwrap();
    assert_eq!(loaded, frames);

    let config = RunConfig { epsilon: 0.01, oracle: true, ..RunConfig::default() };
    let a = run(&model, &frames, &config, None).unwrap();
    let b = run(&decoded, &loaded, &config, None).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.summary, b.summary);
}
