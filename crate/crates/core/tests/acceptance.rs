//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rrm_core::engine::{process_chunked, process_sequence, FrameMode, SequenceConfig};
use rrm_core::error_control::{calibrate, CalibrationPoint, ErrorModel, FeatureErrorMetric};
use rrm_core::layers::{dense_conv, dense_fc, sparse_conv, sparse_fc, ConvSpec, FcSpec, LayerSpec};
use rrm_core::metrics::{network_cost, speedup_ratio, LayerWorkload};
use rrm_core::run::{run, RunConfig};
use rrm_core::synth;
use rrm_core::tensor::{densify, sparsify, Shape, Tensor};
use rrm_core::NetworkModel;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn rand_tensor(rng: &mut impl Rng, shape: Shape) -> Tensor {
    Tensor::from_vec(shape, rand_vec(rng, shape.len())).unwrap()
}

fn sparse_tensor(rng: &mut impl Rng, shape: Shape, density: f64) -> Tensor {
    Tensor::from_fn(shape, |_, _, _| {
        if rng.random_bool(density) {
            rng.random_range(-1.0f32..1.0)
        } else {
            0.0
        }
    })
}

fn conv_bias_map(spec: &ConvSpec, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |c, _, _| spec.bias()[c])
}

// Shared fixture for the trend criteria: fixed five-layer model, shifting
// square moving one pixel per frame.
const TREND_SHAPE: Shape = Shape::new(3, 24, 24);
const TREND_FRAMES: usize = 40;
const TREND_SEED: u64 = 2024;

fn trend_fixture() -> (NetworkModel, Vec<Tensor>) {
    let model = synth::demo_model(TREND_SHAPE, TREND_SEED).unwrap();
    let frames = synth::shifting_square(TREND_SHAPE, TREND_FRAMES, 1, TREND_SEED);
    (model, frames)
}

/// 1. Exact mode reproduces dense inference on random models.
fn exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f32;
    let depths = [2, 4, 6, 8];
    for (i, &depth) in depths.iter().enumerate() {
        let model = synth::random_model(&mut rng, Shape::new(3, 16, 16), depth).unwrap();
        let frames = synth::random_walk(model.input_shape(), 100, 0.05, 100 + i as u64);
        let out = process_sequence(&model, &frames, &SequenceConfig::default()).map_err(|e| e.to_string())?;
        for (r, f) in out.frames.iter().zip(&frames) {
            let dense = model.forward_dense(f).unwrap();
            worst = worst.max(r.features.max_abs_diff(&dense).unwrap());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-4 && elapsed <= Duration::from_secs(120),
        format!("{} models x 100 frames, max |rrm - dense| = {worst:.3e} (<= 1e-4), {elapsed:.2?} (<= 120s)", depths.len()),
    )
}

/// 2. Linearity of conv and FC layers.
fn linearity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f32;
    for trial in 0..1000 {
        let shape = Shape::new(rng.random_range(1..=4), rng.random_range(3..=10), rng.random_range(3..=10));
        let a = rand_tensor(&mut rng, shape);
        let b = rand_tensor(&mut rng, shape);
        let mut ab = a.clone();
        ab.add_assign(&b).unwrap();
        // f(a + b) + bias == f(a) + f(b)
        let (lhs, rhs) = if trial % 2 == 0 {
            let k = rng.random_range(1..=3);
            let cout = rng.random_range(1..=4);
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=1);
            let w = rand_vec(&mut rng, cout * shape.channels * k * k);
            let bias = rand_vec(&mut rng, cout);
            let spec = ConvSpec::new(shape.channels, cout, (k, k), stride, pad, w, bias).unwrap();
            let mut l = dense_conv(&spec, &ab).unwrap().output;
            let mut rhs = dense_conv(&spec, &a).unwrap().output;
            rhs.add_assign(&dense_conv(&spec, &b).unwrap().output).unwrap();
            l.add_assign(&conv_bias_map(&spec, l.shape())).unwrap();
            (l, rhs)
        } else {
            let cout = rng.random_range(1..=16);
            let spec = FcSpec::new(shape.len(), cout, rand_vec(&mut rng, shape.len() * cout), rand_vec(&mut rng, cout)).unwrap();
            let mut l = dense_fc(&spec, &ab).unwrap().output;
            let mut rhs = dense_fc(&spec, &a).unwrap().output;
            rhs.add_assign(&dense_fc(&spec, &b).unwrap().output).unwrap();
            let bias = Tensor::from_vec(l.shape(), spec.bias().to_vec()).unwrap();
            l.add_assign(&bias).unwrap();
            (l, rhs)
        };
        worst = worst.max(lhs.max_abs_diff(&rhs).unwrap());
    }
    check(worst <= 1e-4, format!("1000 trials, max additivity residual {worst:.3e} (<= 1e-4)"))
}

/// 3. Sparse kernels agree with dense kernels; counters follow the formula.
fn kernel_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f32;
    let mut formula_checks = 0;
    let mut counter_failures = Vec::new();
    for trial in 0..1000 {
        let shape = Shape::new(rng.random_range(1..=4), rng.random_range(5..=12), rng.random_range(5..=12));
        let k = [1, 3, 5][rng.random_range(0..3)];
        let same = trial % 2 == 0;
        let (stride, pad) = if same { (1, (k - 1) / 2) } else { (rng.random_range(1..=3), rng.random_range(0..=2)) };
        let cout = rng.random_range(1..=6);
        let spec = ConvSpec::new(
            shape.channels,
            cout,
            (k, k),
            stride,
            pad,
            rand_vec(&mut rng, cout * shape.channels * k * k),
            rand_vec(&mut rng, cout),
        )
        .unwrap();
        let density = rng.random_range(0.0..=1.0);
        let (delta, _) = sparsify(&sparse_tensor(&mut rng, shape, density), 0.0);
        let sparse = sparse_conv(&spec, &delta).unwrap();
        let full = dense_conv(&spec, &densify(&delta)).unwrap();
        let mut want = full.output.clone();
        for (w, b) in want.data_mut().iter_mut().zip(conv_bias_map(&spec, full.output.shape()).data()) {
            *w -= b;
        }
        worst = worst.max(sparse.output.max_abs_diff(&want).unwrap());
        if same {
            // rho * dense_mults in integers: nnz * dense_mults / elements
            formula_checks += 1;
            let lhs = sparse.multiplications as u128 * shape.len() as u128;
            let rhs = delta.nnz() as u128 * full.multiplications as u128;
            if lhs != rhs {
                counter_failures.push(format!("conv trial {trial}: {lhs} != {rhs}"));
            }
        }
    }
    for trial in 0..1000 {
        let cin = rng.random_range(1..=80);
        let cout = rng.random_range(1..=20);
        let spec = FcSpec::new(cin, cout, rand_vec(&mut rng, cin * cout), rand_vec(&mut rng, cout)).unwrap();
        let density = rng.random_range(0.0..=1.0);
        let (delta, _) = sparsify(&sparse_tensor(&mut rng, Shape::vector(cin), density), 0.0);
        let sparse = sparse_fc(&spec, &delta).unwrap();
        let full = dense_fc(&spec, &densify(&delta)).unwrap();
        for o in 0..cout {
            worst = worst.max((sparse.output.data()[o] - (full.output.data()[o] - spec.bias()[o])).abs());
        }
        formula_checks += 1;
        if sparse.multiplications as u128 * cin as u128 != delta.nnz() as u128 * full.multiplications as u128 {
            counter_failures.push(format!("fc trial {trial}"));
        }
    }
    check(
        worst <= 1e-5 && counter_failures.is_empty(),
        format!(
            "2000 trials, max |sparse - (dense - bias)| = {worst:.3e} (<= 1e-5), {formula_checks} exact counter checks, {} mismatches {:?}",
            counter_failures.len(),
            counter_failures.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

/// 4. Cost model against hand-computed values.
fn cost_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = Shape::new(3, 8, 8);
    let c1 = synth::random_conv(&mut rng, 3, 4, 3, 1, 1);
    let c2 = synth::random_conv(&mut rng, 4, 2, 3, 1, 0);
    let fc = synth::random_fc(&mut rng, 72, 10);
    let model = NetworkModel::new(
        input,
        vec![LayerSpec::Conv(c1), LayerSpec::Relu, LayerSpec::Conv(c2), LayerSpec::Relu, LayerSpec::Fc(fc)],
    )
    .unwrap();
    let mults: Vec<u64> = model.linear_layers().iter().map(|l| l.dense_mults).collect();
    // 8*8*3*4*9, 6*6*4*2*9, 72*10
    let hand_mults = [6912u64, 2592, 720];
    let rows = |dens: [f64; 3]| -> Vec<LayerWorkload> {
        model
            .linear_layers()
            .iter()
            .zip(dens)
            .map(|(l, d)| LayerWorkload {
                layer: l.layer,
                kind: l.kind,
                dense_mults: l.dense_mults,
                density: d,
                zero_fraction: 1.0 - d,
            })
            .collect()
    };
    let dense = rows([0.5, 0.25, 0.125]);
    let rrm = rows([0.1, 0.05, 0.2]);
    // 3456 + 648 + 90
    let cost = network_cost(&dense);
    let all_dense = network_cost(&rows([1.0; 3]));
    // 4194 / (691.2 + 129.6 + 144)
    let eta = speedup_ratio(&dense, &rrm).map_err(|e| e.to_string())?;
    let hand_eta = 4194.0 / 964.8;
    check(
        mults == hand_mults && cost == 4194.0 && all_dense == 10224.0 && (eta - hand_eta).abs() <= 1e-12,
        format!("dense mults {mults:?}, cost {cost} (4194), all-dense {all_dense} (10224), eta {eta:.15} vs {hand_eta:.15}"),
    )
}

fn run_eps(model: &NetworkModel, frames: &[Tensor], epsilon: f32) -> rrm_core::run::RunReport {
    run(model, frames, &RunConfig { epsilon, oracle: true, ..Default::default() }, None).unwrap()
}

/// 5. Speedup grows with the truncation threshold.
fn threshold_sweep() -> Outcome {
    let (model, frames) = trend_fixture();
    let eps = [1e-2f32, 3e-2, 5e-2, 1e-1];
    let etas: Vec<f64> = eps.iter().map(|&e| run_eps(&model, &frames, e).summary.speedup.unwrap_or(f64::INFINITY)).collect();
    let monotone = etas.windows(2).all(|w| w[1] >= w[0]);
    let ratio = etas[3] / etas[0];
    check(
        monotone && ratio >= 1.2,
        format!("eta over eps {eps:?} = {:?}, non-decreasing: {monotone}, eta(1e-1)/eta(1e-2) = {ratio:.3} (>= 1.2)",
            etas.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>()),
    )
}

/// 6. Delta inputs are sparser than dense activations.
fn sparsity_improvement() -> Outcome {
    let (model, frames) = trend_fixture();
    let r = run_eps(&model, &frames, 1e-2);
    let gain = r.summary.rrm_sparsity - r.summary.dense_sparsity;
    check(
        gain >= 0.10,
        format!(
            "S dense = {:.3}, S rrm = {:.3}, gain = {:.1} pp (>= 10 pp)",
            r.summary.dense_sparsity,
            r.summary.rrm_sparsity,
            gain * 100.0
        ),
    )
}

// Error-control fixture.
const AECS_EPSILON: f32 = 3e-2;
const AECS_THRESHOLD: f64 = 0.05;
const AECS_SHAPE: Shape = Shape::new(3, 16, 16);

/// 7. Error control keeps the feature error bounded with a sawtooth e_t.
fn error_control() -> Outcome {
    let model = synth::demo_model(AECS_SHAPE, 77).unwrap();
    let calib: Vec<Vec<Tensor>> = (0..4).map(|s| synth::shifting_square(AECS_SHAPE, 60, 1, 500 + s)).collect();
    let points = calibrate(&model, &calib, AECS_EPSILON, FeatureErrorMetric::L2).map_err(|e| e.to_string())?;
    let em = ErrorModel::fit(&points, AECS_THRESHOLD).map_err(|e| e.to_string())?;
    let bound = em.calibrated_error_bound().ok_or("no calibration points")?;
    let admissible = em.admissible_truncation();

    let video = synth::shifting_square(AECS_SHAPE, 200, 1, 999);
    let with = process_sequence(&model, &video, &SequenceConfig { epsilon: AECS_EPSILON, controller: Some(em) })
        .map_err(|e| e.to_string())?;
    let without = process_sequence(&model, &video, &SequenceConfig { epsilon: AECS_EPSILON, controller: None })
        .map_err(|e| e.to_string())?;

    let errors = |out: &rrm_core::SequenceOutput| -> Vec<f64> {
        out.frames.iter().zip(&video).map(|(r, f)| r.features.l2_distance(&model.forward_dense(f).unwrap()).unwrap()).collect()
    };
    let err_with = errors(&with);
    let err_without = errors(&without);

    let mut sawtooth = true;
    for (t, r) in with.frames.iter().enumerate() {
        let e = with.error_trace[t];
        if r.mode == FrameMode::Keyframe {
            sawtooth &= e == 0.0;
        } else if t > 0 {
            sawtooth &= e >= with.error_trace[t - 1];
        }
    }
    let triggered = with.keyframes.len() - 1;
    let max_with = err_with.iter().copied().fold(0.0, f64::max);
    let (last_with, last_without) = (err_with[199], err_without[199]);
    check(
        sawtooth && triggered >= 1 && max_with <= bound && last_without > last_with,
        format!(
            "threshold {AECS_THRESHOLD} on predicted error, admissible e_t <= {:.3}, calibrated error bound {bound:.4}; \
             {triggered} forced keyframes, sawtooth: {sawtooth}, max l2 error with control {max_with:.4} (<= bound), \
             frame 200: {last_with:.4} with vs {last_without:.4} without",
            admissible
        ),
    )
}

/// 8. Quartic coefficients recovered from exact samples.
fn quartic_recovery() -> Outcome {
    let mu = [0.3, -1.2, 0.8, 0.5, 2.0];
    let h = |x: f64| mu.iter().rev().fold(0.0, |acc, c| acc * x + c);
    let points: Vec<CalibrationPoint> = (0..25).map(|i| {
        let x = i as f64 * 0.125;
        (x, h(x)).into()
    }).collect();
    let m = ErrorModel::fit(&points, 1.0).map_err(|e| e.to_string())?;
    let worst = m.coefficients.iter().zip(mu).map(|(g, w)| ((g - w) / w).abs()).fold(0.0, f64::max);
    check(worst <= 1e-6, format!("coefficients {:?}, max relative error {worst:.3e} (<= 1e-6)", m.coefficients))
}

/// 9. Chunked processing and run determinism.
fn chunking_and_determinism() -> Outcome {
    let (model, frames) = trend_fixture();
    let cfg = SequenceConfig { epsilon: 0.0, controller: None };
    let one = process_chunked(&model, &frames, &cfg, 1).map_err(|e| e.to_string())?;
    let four = process_chunked(&model, &frames, &cfg, 4).map_err(|e| e.to_string())?;
    let worst = one
        .frames
        .iter()
        .zip(&four.frames)
        .map(|(a, b)| a.features.max_abs_diff(&b.features).unwrap())
        .fold(0.0f32, f32::max);
    let boundary_exact = four.keyframes.iter().all(|&k| four.frames[k].features == model.forward_dense(&frames[k]).unwrap());

    let rc = RunConfig { epsilon: 0.03, chunks: 4, oracle: true, ..Default::default() };
    let strip = |mut r: rrm_core::run::RunReport| {
        r.generated_at_unix = 0;
        r.to_json().unwrap()
    };
    let a = strip(run(&model, &frames, &rc, None).unwrap());
    let b = strip(run(&model, &frames, &rc, None).unwrap());
    check(
        worst <= 1e-4 && boundary_exact && four.keyframes.len() == 4 && a == b,
        format!(
            "chunks 4 vs 1: max diff {worst:.3e} (<= 1e-4), keyframes {:?}, boundary keyframes exact: {boundary_exact}, reports identical: {}",
            four.keyframes,
            a == b
        ),
    )
}

type Criterion = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("exactness at eps=0", exactness),
        ("linearity of linear layers", linearity),
        ("sparse/dense kernel equivalence", kernel_equivalence),
        ("cost model exactness", cost_model),
        ("threshold sweep trend", threshold_sweep),
        ("sparsity improvement", sparsity_improvement),
        ("accumulated error control", error_control),
        ("quartic fit recovery", quartic_recovery),
        ("chunking and determinism", chunking_and_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("[PASS] {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
