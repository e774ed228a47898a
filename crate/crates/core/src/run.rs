//! End-to-end runs, threshold sweeps and calibration, with JSON/CSV reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::engine::{process_chunked, FrameMode, LayerStats, SequenceConfig, SequenceOutput};
use crate::error::{Result, RrmError};
use crate::error_control::{calibrate, CalibrationPoint, ErrorModel, FeatureErrorMetric};
use crate::io::load_frames;
use crate::model::NetworkModel;
use crate::synth::SyntheticSpec;
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    Directory(PathBuf),
    Synthetic(SyntheticSpec),
}

impl FrameSource {
    pub fn load(&self) -> Result<Vec<Tensor>> {
        match self {
            FrameSource::Directory(p) => load_frames(p),
            FrameSource::Synthetic(spec) => spec.generate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub epsilon: f32,
    /// Keyframe trigger threshold; overrides the one stored in the error
    /// model when both are present.
    pub error_threshold: Option<f64>,
    pub chunks: usize,
    /// Run dense inference side by side and report feature errors.
    pub oracle: bool,
    /// Count keyframes in the summary sparsity and speedup.
    pub include_keyframes: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epsilon: 0.0,
            error_threshold: None,
            chunks: 1,
            oracle: false,
            include_keyframes: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureError {
    pub max_abs: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub mode: FrameMode,
    /// `e_t` after this frame.
    pub accumulated_truncation: f64,
    pub multiplications: u64,
    pub layers: Vec<LayerStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejected_delta: Option<Vec<LayerStats>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature_error: Option<FeatureError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub keyframes: Vec<usize>,
    pub dense_sparsity: f64,
    pub rrm_sparsity: f64,
    /// `None` when the recurrent workload is zero (unbounded speedup).
    pub speedup: Option<f64>,
    pub speedup_unbounded: bool,
    pub speedup_vs_dense_baseline: Option<f64>,
    pub speedup_with_rejected: Option<f64>,
    pub multiplications: u64,
    pub multiplications_after_first_frame: u64,
    pub subtractions: u64,
    pub additions: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_feature_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_feature_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Wall-clock creation time; the only field that varies between
    /// otherwise identical runs.
    pub generated_at_unix: u64,
    pub config: RunConfig,
    pub frame_source: Option<FrameSource>,
    pub error_model: Option<ErrorModel>,
    pub summary: RunSummary,
    pub frames: Vec<FrameRecord>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(RrmError::ZeroWorkload) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs one configuration over `frames` and assembles the report.
pub fn run(
    model: &NetworkModel,
    frames: &[Tensor],
    config: &RunConfig,
    error_model: Option<&ErrorModel>,
) -> Result<RunReport> {
    let controller = error_model.map(|m| match config.error_threshold {
        Some(t) => m.clone().with_threshold(t),
        None => m.clone(),
    });
    let seq_config = SequenceConfig {
        epsilon: config.epsilon,
        controller: controller.clone(),
    };
    let out = process_chunked(model, frames, &seq_config, config.chunks)?;
    build_report(model, frames, config, controller, out)
}

fn build_report(
    model: &NetworkModel,
    frames: &[Tensor],
    config: &RunConfig,
    error_model: Option<ErrorModel>,
    out: SequenceOutput,
) -> Result<RunReport> {
    let mut records = Vec::with_capacity(out.frames.len());
    for (i, (r, frame)) in out.frames.iter().zip(frames).enumerate() {
        let feature_error = if config.oracle {
            let dense = model.forward_dense(frame)?;
            Some(FeatureError {
                max_abs: f64::from(r.features.max_abs_diff(&dense)?),
                l2: r.features.l2_distance(&dense)?,
            })
        } else {
            None
        };
        records.push(FrameRecord {
            index: i,
            mode: r.mode,
            accumulated_truncation: out.error_trace[i],
            multiplications: r.multiplications(),
            layers: r.per_layer.clone(),
            rejected_delta: r.rejected_delta.clone(),
            feature_error,
        });
    }

    let stats = &out.stats;
    let inc = config.include_keyframes;
    let speedup = optional(stats.speedup(inc))?;
    let summary = RunSummary {
        frames: records.len(),
        keyframes: out.keyframes.clone(),
        dense_sparsity: stats.dense_sparsity(inc)?,
        rrm_sparsity: stats.rrm_sparsity(inc)?,
        speedup,
        speedup_unbounded: speedup.is_none(),
        speedup_vs_dense_baseline: optional(stats.speedup_vs_dense_baseline(inc))?,
        speedup_with_rejected: optional(stats.speedup_with_rejected())?,
        multiplications: records.iter().map(|r| r.multiplications).sum(),
        multiplications_after_first_frame: records.iter().skip(1).map(|r| r.multiplications).sum(),
        subtractions: stats.subtractions,
        additions: stats.additions,
        max_feature_error: config
            .oracle
            .then(|| records.iter().filter_map(|r| r.feature_error).map(|e| e.max_abs).fold(0.0, f64::max)),
        final_feature_error: records.last().and_then(|r| r.feature_error).map(|e| e.l2),
    };
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        generated_at_unix: now_unix(),
        config: config.clone(),
        frame_source: None,
        error_model,
        summary,
        frames: records,
    };
    report.check_finite()?;
    Ok(report)
}

impl RunReport {
    fn check_finite(&self) -> Result<()> {
        let s = &self.summary;
        let scalars = [s.dense_sparsity, s.rrm_sparsity]
            .into_iter()
            .chain(s.speedup)
            .chain(s.speedup_vs_dense_baseline)
            .chain(s.speedup_with_rejected)
            .chain(s.max_feature_error)
            .chain(s.final_feature_error);
        let per_frame = self.frames.iter().flat_map(|f| {
            let layers = f.layers.iter().chain(f.rejected_delta.iter().flatten());
            layers
                .flat_map(|l| [l.input_zero_fraction, l.delta_density, l.truncated_l2])
                .chain([f.accumulated_truncation])
                .chain(f.feature_error.into_iter().flat_map(|e| [e.max_abs, e.l2]))
        });
        if scalars.chain(per_frame).any(|v| !v.is_finite()) {
            return Err(RrmError::NonFinite("run report".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One CSV row per frame.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "frame",
            "mode",
            "accumulated_truncation",
            "multiplications",
            "mean_delta_density",
            "feature_error_l2",
        ])?;
        for f in &self.frames {
            let mean = if f.layers.is_empty() {
                0.0
            } else {
                f.layers.iter().map(|l| l.delta_density).sum::<f64>() / f.layers.len() as f64
            };
            w.write_record([
                f.index.to_string(),
                match f.mode {
                    FrameMode::Keyframe => "keyframe".into(),
                    FrameMode::Delta => "delta".into(),
                },
                f.accumulated_truncation.to_string(),
                f.multiplications.to_string(),
                mean.to_string(),
                f.feature_error.map(|e| e.l2.to_string()).unwrap_or_default(),
            ])?;
        }
        csv_string(w)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| RrmError::io("<csv buffer>", std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f32,
    pub dense_sparsity: f64,
    pub rrm_sparsity: f64,
    pub speedup: Option<f64>,
    pub final_feature_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub generated_at_unix: u64,
    pub frame_source: Option<FrameSource>,
    pub summary: Vec<SweepRow>,
    pub runs: Vec<RunReport>,
}

/// One oracle-enabled run per threshold, plus a summary table.
pub fn sweep(
    model: &NetworkModel,
    frames: &[Tensor],
    epsilons: &[f32],
    base: &RunConfig,
    error_model: Option<&ErrorModel>,
) -> Result<SweepReport> {
    if epsilons.is_empty() {
        return Err(RrmError::Empty("threshold list"));
    }
    let mut runs = Vec::with_capacity(epsilons.len());
    let mut summary = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let config = RunConfig {
            epsilon,
            oracle: true,
            ..base.clone()
        };
        let r = run(model, frames, &config, error_model)?;
        summary.push(SweepRow {
            epsilon,
            dense_sparsity: r.summary.dense_sparsity,
            rrm_sparsity: r.summary.rrm_sparsity,
            speedup: r.summary.speedup,
            final_feature_error: r.summary.final_feature_error.unwrap_or(0.0),
        });
        runs.push(r);
    }
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        generated_at_unix: now_unix(),
        frame_source: None,
        summary,
        runs,
    })
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epsilon", "dense_sparsity", "rrm_sparsity", "speedup", "final_feature_error"])?;
        for r in &self.summary {
            w.write_record([
                r.epsilon.to_string(),
                r.dense_sparsity.to_string(),
                r.rrm_sparsity.to_string(),
                r.speedup.map(|v| v.to_string()).unwrap_or_else(|| "inf".into()),
                r.final_feature_error.to_string(),
            ])?;
        }
        csv_string(w)
    }
}

/// Collects calibration pairs over `videos` and fits the error model.
pub fn calibrate_model<V: AsRef<[Tensor]>>(
    model: &NetworkModel,
    videos: &[V],
    epsilon: f32,
    threshold: f64,
) -> Result<ErrorModel> {
    let points = calibrate(model, videos, epsilon, FeatureErrorMetric::L2)?;
    fit_points(&points, threshold)
}

/// Fits an error model from externally supplied pairs.
pub fn fit_points(points: &[CalibrationPoint], threshold: f64) -> Result<ErrorModel> {
    ErrorModel::fit(points, threshold)
}

/// Writes `json` to `path` and `csv` next to it with a `.csv` extension.
pub fn write_report_files(path: &Path, json: &str, csv: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| RrmError::io(parent, e))?;
    }
    fs::write(path, json).map_err(|e| RrmError::io(path, e))?;
    let csv_path = path.with_extension("csv");
    fs::write(&csv_path, csv).map_err(|e| RrmError::io(&csv_path, e))
}

pub fn save_error_model(model: &ErrorModel, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(model)?;
    fs::write(path, json).map_err(|e| RrmError::io(path, e))
}

pub fn load_error_model(path: &Path) -> Result<ErrorModel> {
    let text = fs::read_to_string(path).map_err(|e| RrmError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
