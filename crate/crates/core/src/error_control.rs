//! Accumulated-error control.
//!
//! The truncated mass `e_t` (sum of per-layer l2 norms of the values dropped
//! by thresholding, since the last keyframe) is mapped to a predicted
//! feature error through a quartic fitted on calibration runs. When the
//! prediction exceeds a threshold the engine falls back to a keyframe.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{delta_forward, keyframe_forward, RrmState};
use crate::error::{Result, RrmError};
use crate::model::NetworkModel;
use crate::tensor::Tensor;

pub const DEGREE: usize = 4;
pub const COEFFICIENTS: usize = DEGREE + 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorAccumulator {
    e_t: f64,
}

impl ErrorAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self) -> f64 {
        self.e_t
    }

    /// Adds one frame's per-layer truncated norms.
    pub fn accumulate(&mut self, truncated_l2s: &[f64]) -> Result<()> {
        if let Some(bad) = truncated_l2s.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(RrmError::InvalidArgument(format!(
                "truncated norms must be finite and non-negative, got {bad}"
            )));
        }
        self.e_t += truncated_l2s.iter().sum::<f64>();
        Ok(())
    }

    pub fn reset(&mut self) {
        self.e_t = 0.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub accumulated_truncation: f64,
    pub measured_error: f64,
}

impl From<(f64, f64)> for CalibrationPoint {
    fn from((accumulated_truncation, measured_error): (f64, f64)) -> Self {
        CalibrationPoint {
            accumulated_truncation,
            measured_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    ForceKeyframe,
}

/// Fitted quartic `H(e_t)` plus the keyframe trigger threshold.
///
/// The fit is carried out on `z = (e_t - center) / scale`; `coefficients`
/// holds the same polynomial re-expanded in powers of raw `e_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    /// Constant term first.
    pub coefficients: [f64; COEFFICIENTS],
    pub center: f64,
    pub scale: f64,
    pub normalized_coefficients: [f64; COEFFICIENTS],
    /// Maximum tolerated predicted error; `null` in files means unbounded.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub calibration_points: Vec<CalibrationPoint>,
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ErrorModel {
    /// Least-squares quartic through `points`, solved from the normal
    /// equations of the Vandermonde design on normalized abscissae.
    pub fn fit(points: &[CalibrationPoint], threshold: f64) -> Result<Self> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(RrmError::InvalidArgument(format!("threshold must be >= 0, got {threshold}")));
        }
        if points
            .iter()
            .any(|p| !p.accumulated_truncation.is_finite() || !p.measured_error.is_finite())
        {
            return Err(RrmError::NonFinite("calibration points".into()));
        }
        let mut xs: Vec<f64> = points.iter().map(|p| p.accumulated_truncation).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if xs.len() < COEFFICIENTS {
            return Err(RrmError::Underdetermined {
                needed: COEFFICIENTS,
                found: xs.len(),
            });
        }

        let n = points.len() as f64;
        let center = points.iter().map(|p| p.accumulated_truncation).sum::<f64>() / n;
        let scale = points
            .iter()
            .map(|p| (p.accumulated_truncation - center).abs())
            .fold(0.0, f64::max);

        let design = DMatrix::from_fn(points.len(), COEFFICIENTS, |r, c| {
            ((points[r].accumulated_truncation - center) / scale).powi(c as i32)
        });
        let target = DVector::from_iterator(points.len(), points.iter().map(|p| p.measured_error));
        let gram = design.transpose() * &design;
        let rhs = design.transpose() * target;
        let solution = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.lu().solve(&rhs).ok_or(RrmError::Singular)?,
        };
        let mut normalized = [0.0; COEFFICIENTS];
        normalized.copy_from_slice(solution.as_slice());
        if normalized.iter().any(|c| !c.is_finite()) {
            return Err(RrmError::Singular);
        }

        Ok(ErrorModel {
            coefficients: expand(&normalized, center, scale),
            center,
            scale,
            normalized_coefficients: normalized,
            threshold,
            calibration_points: points.to_vec(),
        })
    }

    /// Predicted feature error `H(e_t)`.
    pub fn predict(&self, accumulated_truncation: f64) -> f64 {
        let z = (accumulated_truncation - self.center) / self.scale;
        self.normalized_coefficients.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    pub fn predict_and_decide(&self, acc: &ErrorAccumulator) -> Decision {
        if self.predict(acc.value()) > self.threshold {
            Decision::ForceKeyframe
        } else {
            Decision::Continue
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// Largest accumulated truncation, within the calibrated range, that the
    /// controller tolerates before the predicted error first exceeds the
    /// threshold.
    pub fn admissible_truncation(&self) -> f64 {
        let hi = self
            .calibration_points
            .iter()
            .map(|p| p.accumulated_truncation)
            .fold(0.0, f64::max);
        if self.predict(0.0) > self.threshold {
            return 0.0;
        }
        const STEPS: usize = 4096;
        let mut lo = 0.0;
        for i in 1..=STEPS {
            let x = hi * i as f64 / STEPS as f64;
            if self.predict(x) > self.threshold {
                let mut up = x;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + up);
                    if self.predict(mid) > self.threshold {
                        up = mid;
                    } else {
                        lo = mid;
                    }
                }
                return lo;
            }
            lo = x;
        }
        hi
    }

    /// Worst error measured during calibration over the admissible range of
    /// accumulated truncation: the feature error the threshold corresponds
    /// to in practice.
    pub fn calibrated_error_bound(&self) -> Option<f64> {
        let limit = self.admissible_truncation();
        self.calibration_points
            .iter()
            .filter(|p| p.accumulated_truncation <= limit)
            .map(|p| p.measured_error)
            .reduce(f64::max)
    }

    /// Root-mean-square residual over the retained calibration points.
    pub fn residual_rms(&self) -> f64 {
        if self.calibration_points.is_empty() {
            return 0.0;
        }
        let sq: f64 = self
            .calibration_points
            .iter()
            .map(|p| (self.predict(p.accumulated_truncation) - p.measured_error).powi(2))
            .sum();
        (sq / self.calibration_points.len() as f64).sqrt()
    }
}

/// Rewrites `sum a_k ((x - c) / s)^k` as `sum b_j x^j`.
fn expand(normalized: &[f64; COEFFICIENTS], center: f64, scale: f64) -> [f64; COEFFICIENTS] {
    let mut raw = [0.0; COEFFICIENTS];
    for (k, a) in normalized.iter().enumerate() {
        let factor = a / scale.powi(k as i32);
        let mut binom = 1.0;
        for (j, slot) in raw.iter_mut().enumerate().take(k + 1) {
            *slot += factor * binom * (-center).powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
    }
    raw
}

/// How calibration compares RRM features against dense features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FeatureErrorMetric {
    #[default]
    L2,
    MaxAbs,
}

impl FeatureErrorMetric {
    pub fn distance(self, a: &Tensor, b: &Tensor) -> Result<f64> {
        match self {
            FeatureErrorMetric::L2 => a.l2_distance(b),
            FeatureErrorMetric::MaxAbs => a.max_abs_diff(b).map(f64::from),
        }
    }
}

/// Runs each video with a single leading keyframe and no error control,
/// recording `(e_t, feature error vs dense)` after every frame.
pub fn calibrate<V>(
    model: &NetworkModel,
    videos: &[V],
    epsilon: f32,
    metric: FeatureErrorMetric,
) -> Result<Vec<CalibrationPoint>>
where
    V: AsRef<[Tensor]>,
{
    if videos.is_empty() {
        return Err(RrmError::Empty("calibration video list"));
    }
    let mut points = Vec::new();
    for video in videos {
        let mut state = RrmState::new();
        let mut acc = ErrorAccumulator::new();
        for (t, frame) in video.as_ref().iter().enumerate() {
            let result = if t == 0 {
                keyframe_forward(model, frame, &mut state)?
            } else {
                let r = delta_forward(model, frame, &mut state, epsilon)?;
                acc.accumulate(&r.truncated_l2s())?;
                r
            };
            let dense = model.forward_dense(frame)?;
            points.push(CalibrationPoint {
                accumulated_truncation: acc.value(),
                measured_error: metric.distance(&result.features, &dense)?,
            });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(f: impl Fn(f64) -> f64, xs: impl IntoIterator<Item = f64>) -> Vec<CalibrationPoint> {
        xs.into_iter().map(|x| (x, f(x)).into()).collect()
    }

    #[test]
    fn accumulate_sums_and_rejects_negatives() {
        let mut acc = ErrorAccumulator::new();
        acc.accumulate(&[0.1, 0.2]).unwrap();
        acc.accumulate(&[0.1, 0.2]).unwrap();
        assert!((acc.value() - 0.6).abs() < 1e-12);
        assert!(acc.accumulate(&[-1e-9]).is_err());
        assert!(acc.accumulate(&[f64::NAN]).is_err());
        acc.reset();
        assert_eq!(acc.value(), 0.0);
    }

    #[test]
    fn recovers_exact_quartic() {
        let pts = sample(|x| 2.0 * x.powi(4) + 0.5, (0..12).map(|i| i as f64 * 0.2));
        let m = ErrorModel::fit(&pts, 1.0).unwrap();
        let want = [0.5, 0.0, 0.0, 0.0, 2.0];
        for (got, want) in m.coefficients.iter().zip(want) {
            assert!((got - want).abs() <= 1e-6, "{:?}", m.coefficients);
        }
    }

    #[test]
    fn five_collinear_points_are_reproduced() {
        let pts = sample(|x| 3.0 * x - 1.0, [0.0, 1.0, 2.5, 3.0, 7.0]);
        let m = ErrorModel::fit(&pts, 1.0).unwrap();
        for p in &pts {
            assert!((m.predict(p.accumulated_truncation) - p.measured_error).abs() <= 1e-6);
        }
    }

    #[test]
    fn noisy_quartic_residual_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let truth = |x: f64| 0.1 + 0.3 * x - 0.2 * x * x + 0.05 * x.powi(3) + 0.01 * x.powi(4);
        // Box-Muller, sigma = 1e-3
        let pts: Vec<CalibrationPoint> = (0..200)
            .map(|i| {
                let x = i as f64 * 0.05;
                let (u1, u2): (f64, f64) = (rng.random_range(1e-12..1.0), rng.random());
                let n = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                (x, truth(x) + 1e-3 * n).into()
            })
            .collect();
        let m = ErrorModel::fit(&pts, 1.0).unwrap();
        assert!(m.residual_rms() <= 2e-3, "rms {}", m.residual_rms());
    }

    #[test]
    fn underdetermined_fit_names_minimum() {
        let pts = sample(|x| x, [0.0, 1.0, 1.0, 2.0, 3.0, 3.0]);
        let err = ErrorModel::fit(&pts, 1.0).unwrap_err();
        assert!(matches!(err, RrmError::Underdetermined { needed: 5, found: 4 }));
        assert!(err.to_string().contains('5'));
    }

    #[test]
    fn decisions() {
        let pts = sample(|x| x * x + 0.01, (0..6).map(f64::from));
        let m = ErrorModel::fit(&pts, 0.5).unwrap();
        let mut acc = ErrorAccumulator::new();
        assert_eq!(m.predict_and_decide(&acc), Decision::Continue);
        acc.accumulate(&[1.0]).unwrap();
        assert_eq!(m.predict_and_decide(&acc), Decision::ForceKeyframe);

        let zero = m.clone().with_threshold(0.0);
        assert_eq!(zero.predict_and_decide(&ErrorAccumulator::new()), Decision::ForceKeyframe);

        let inf = m.with_threshold(f64::INFINITY);
        acc.accumulate(&[1e6]).unwrap();
        assert_eq!(inf.predict_and_decide(&acc), Decision::Continue);
    }

    #[test]
    fn admissible_range_and_bound() {
        // H(x) = x on [0, 10] plus one outlier above the line
        let mut pts = sample(|x| x, (0..=10).map(f64::from));
        pts.push((3.0, 4.5).into());
        let m = ErrorModel::fit(&pts, 4.0).unwrap();
        let a = m.admissible_truncation();
        assert!(a > 3.0 && a < 4.0, "{a}");
        assert!((m.predict(a) - 4.0).abs() < 1e-9);
        assert!((0..50).all(|i| m.predict(a * i as f64 / 50.0) <= 4.0));
        assert_eq!(m.calibrated_error_bound(), Some(4.5));

        let never = m.clone().with_threshold(f64::INFINITY);
        assert_eq!(never.admissible_truncation(), 10.0);
        assert_eq!(m.with_threshold(-1.0).admissible_truncation(), 0.0);
    }

    #[test]
    fn refit_is_deterministic_and_serializes() {
        let pts = sample(|x| (x * 0.7).sin(), (0..30).map(|i| i as f64 * 0.1));
        let a = ErrorModel::fit(&pts, f64::INFINITY).unwrap();
        let b = ErrorModel::fit(&pts, f64::INFINITY).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"threshold\":null"));
        let back: ErrorModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
