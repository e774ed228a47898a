//! Recurrent residual inference.
//!
//! Every linear layer keeps a snapshot of the input it saw on the previous
//! frame and of the projection (pre-activation output) it produced. A new
//! frame is pushed through the network by feeding each linear layer only the
//! thresholded difference between its current and previous input, adding the
//! sparse kernel's result onto the cached projection, and applying the
//! nonlinear layers to the reconstructed projection as usual.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmError};
use crate::error_control::{Decision, ErrorAccumulator, ErrorModel};
use crate::layers::{apply_nonlinear, sparse_conv, sparse_fc, KernelOutput, LayerSpec, LinearKind};
use crate::metrics::SequenceStats;
use crate::model::{apply_dense, NetworkModel};
use crate::tensor::{sparsify, subtract, Tensor};

#[derive(Debug, Clone)]
struct Snapshot {
    input: Tensor,
    projection: Tensor,
}

/// Per-model recurrent state. One state serves exactly one frame stream.
#[derive(Debug, Clone, Default)]
pub struct RrmState {
    /// One entry per linear layer, in layer order; empty until the first
    /// keyframe.
    snapshots: Vec<Snapshot>,
    frame_index: u64,
    since_keyframe: u64,
}

impl RrmState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_initialized(&self) -> bool {
        !self.snapshots.is_empty()
    }

    /// Number of frames processed so far.
    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn since_keyframe(&self) -> u64 {
        self.since_keyframe
    }

    pub fn linear_layers(&self) -> usize {
        self.snapshots.len()
    }

    /// Cached input of the `i`-th linear layer (counting linear layers only).
    pub fn prev_input(&self, i: usize) -> Option<&Tensor> {
        self.snapshots.get(i).map(|s| &s.input)
    }

    /// Cached projection of the `i`-th linear layer.
    pub fn prev_projection(&self, i: usize) -> Option<&Tensor> {
        self.snapshots.get(i).map(|s| &s.projection)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameMode {
    Keyframe,
    Delta,
}

/// Statistics of one linear layer on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub kind: LinearKind,
    pub dense_mults: u64,
    /// Zero fraction of the full input tensor presented to the layer.
    pub input_zero_fraction: f64,
    /// Density of the tensor the layer actually multiplied: the truncated
    /// delta on delta frames, the full input on keyframes.
    pub delta_density: f64,
    pub multiplications: u64,
    pub truncated_l2: f64,
    /// Elementwise subtractions spent forming the delta.
    pub subtractions: u64,
    /// Elementwise additions spent updating the cached projection.
    pub additions: u64,
}

impl LayerStats {
    pub fn input_density(&self) -> f64 {
        1.0 - self.input_zero_fraction
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub features: Tensor,
    pub per_layer: Vec<LayerStats>,
    pub mode: FrameMode,
    /// Stats of a delta pass that was computed and then discarded because
    /// the error controller demanded a keyframe for this frame.
    pub rejected_delta: Option<Vec<LayerStats>>,
}

impl FrameResult {
    pub fn truncated_l2s(&self) -> Vec<f64> {
        self.per_layer.iter().map(|s| s.truncated_l2).collect()
    }

    pub fn multiplications(&self) -> u64 {
        self.per_layer.iter().map(|s| s.multiplications).sum()
    }
}

/// Dense pass that (re)establishes every snapshot.
pub fn keyframe_forward(model: &NetworkModel, frame: &Tensor, state: &mut RrmState) -> Result<FrameResult> {
    model.check_frame(frame)?;
    let mut snapshots = Vec::with_capacity(model.linear_count());
    let mut per_layer = Vec::with_capacity(model.linear_count());
    let mut current = frame.clone();
    for (i, layer) in model.layers().iter().enumerate() {
        let (out, mults) = apply_dense(layer, &current)?;
        if let Some(kind) = layer.linear_kind() {
            let zero_fraction = current.zero_fraction();
            per_layer.push(LayerStats {
                layer: i,
                kind,
                dense_mults: mults,
                input_zero_fraction: zero_fraction,
                delta_density: 1.0 - zero_fraction,
                multiplications: mults,
                truncated_l2: 0.0,
                subtractions: 0,
                additions: 0,
            });
            snapshots.push(Snapshot {
                input: current,
                projection: out.clone(),
            });
        }
        current = out;
    }
    state.snapshots = snapshots;
    state.frame_index += 1;
    state.since_keyframe = 0;
    Ok(FrameResult {
        features: current,
        per_layer,
        mode: FrameMode::Keyframe,
        rejected_delta: None,
    })
}

/// Incremental pass driven by thresholded input differences.
pub fn delta_forward(
    model: &NetworkModel,
    frame: &Tensor,
    state: &mut RrmState,
    epsilon: f32,
) -> Result<FrameResult> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(RrmError::InvalidArgument(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    if !state.is_initialized() {
        return Err(RrmError::Uninitialized);
    }
    if state.snapshots.len() != model.linear_count() {
        return Err(RrmError::StateMismatch {
            expected: state.snapshots.len(),
            found: model.linear_count(),
        });
    }
    model.check_frame(frame)?;

    let mut per_layer = Vec::with_capacity(state.snapshots.len());
    let mut snapshots = state.snapshots.iter_mut();
    let mut current = frame.clone();
    for (i, layer) in model.layers().iter().enumerate() {
        let (kind, dense_mults) = match layer.linear_kind() {
            Some(kind) => (kind, layer.dense_mults(current.shape())?),
            None => {
                current = apply_nonlinear(layer, &current)?;
                continue;
            }
        };
        let snap = snapshots.next().expect("snapshot count checked above");
        let delta = subtract(&current, &snap.input)?;
        let (sparse, truncated_l2) = sparsify(&delta, epsilon);
        let KernelOutput {
            output: increment,
            multiplications,
        } = match layer {
            LayerSpec::Conv(c) => sparse_conv(c, &sparse)?,
            LayerSpec::Fc(f) => sparse_fc(f, &sparse.flattened())?,
            _ => unreachable!("linear layers only"),
        };
        snap.projection.add_assign(&increment)?;
        per_layer.push(LayerStats {
            layer: i,
            kind,
            dense_mults,
            input_zero_fraction: current.zero_fraction(),
            delta_density: sparse.density(),
            multiplications,
            truncated_l2,
            subtractions: current.len() as u64,
            additions: increment.len() as u64,
        });
        snap.input = current;
        current = snap.projection.clone();
    }
    state.frame_index += 1;
    state.since_keyframe += 1;
    Ok(FrameResult {
        features: current,
        per_layer,
        mode: FrameMode::Delta,
        rejected_delta: None,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SequenceConfig {
    pub epsilon: f32,
    /// Error model used to force keyframes; `None` disables error control.
    pub controller: Option<ErrorModel>,
}

#[derive(Debug, Clone)]
pub struct SequenceOutput {
    pub frames: Vec<FrameResult>,
    /// Accumulated truncation mass after each frame.
    pub error_trace: Vec<f64>,
    /// Frame positions processed as keyframes.
    pub keyframes: Vec<usize>,
    pub stats: SequenceStats,
}

/// Runs a frame stream through one recurrent state.
///
/// The first frame is a keyframe. Every later frame is first computed as a
/// delta frame; when an error controller is configured and its predicted
/// error for the resulting accumulated truncation exceeds the threshold, the
/// delta result is discarded and the frame is recomputed as a keyframe,
/// which also clears the accumulator.
pub fn process_sequence<I>(model: &NetworkModel, frames: I, config: &SequenceConfig) -> Result<SequenceOutput>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<Tensor>,
{
    use std::borrow::Borrow;

    let mut state = RrmState::new();
    let mut acc = ErrorAccumulator::new();
    let mut results = Vec::new();
    let mut error_trace = Vec::new();
    let mut keyframes = Vec::new();

    for (t, frame) in frames.into_iter().enumerate() {
        let frame = frame.borrow();
        let result = if t == 0 {
            keyframe_forward(model, frame, &mut state)?
        } else {
            let delta = delta_forward(model, frame, &mut state, config.epsilon)?;
            let mut candidate = acc.clone();
            candidate.accumulate(&delta.truncated_l2s())?;
            let decision = config
                .controller
                .as_ref()
                .map_or(Decision::Continue, |m| m.predict_and_decide(&candidate));
            match decision {
                Decision::Continue => {
                    acc = candidate;
                    delta
                }
                Decision::ForceKeyframe => {
                    let mut key = keyframe_forward(model, frame, &mut state)?;
                    key.rejected_delta = Some(delta.per_layer);
                    key
                }
            }
        };
        if result.mode == FrameMode::Keyframe {
            acc.reset();
            keyframes.push(t);
        }
        if !result.features.is_finite() {
            return Err(RrmError::NonFinite(format!("features of frame {t}")));
        }
        error_trace.push(acc.value());
        results.push(result);
    }
    if results.is_empty() {
        return Err(RrmError::Empty("frame sequence"));
    }
    let stats = SequenceStats::from_frames(&results);
    Ok(SequenceOutput {
        frames: results,
        error_trace,
        keyframes,
        stats,
    })
}

/// Splits `frames` into `chunks` contiguous pieces, runs each through its own
/// state in parallel, and concatenates the results in frame order.
pub fn process_chunked(
    model: &NetworkModel,
    frames: &[Tensor],
    config: &SequenceConfig,
    chunks: usize,
) -> Result<SequenceOutput> {
    if frames.is_empty() {
        return Err(RrmError::Empty("frame sequence"));
    }
    if chunks == 0 {
        return Err(RrmError::InvalidArgument("chunk count must be at least 1".into()));
    }
    let chunks = chunks.min(frames.len());
    let base = frames.len() / chunks;
    let extra = frames.len() % chunks;
    let mut bounds = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < extra);
        bounds.push((start, start + len));
        start += len;
    }

    let parts: Vec<Result<SequenceOutput>> = bounds
        .par_iter()
        .map(|&(s, e)| process_sequence(model, &frames[s..e], config))
        .collect();

    let mut merged = SequenceOutput {
        frames: Vec::with_capacity(frames.len()),
        error_trace: Vec::with_capacity(frames.len()),
        keyframes: Vec::new(),
        stats: SequenceStats::default(),
    };
    for (part, &(offset, _)) in parts.into_iter().zip(&bounds) {
        let part = part?;
        merged.frames.extend(part.frames);
        merged.error_trace.extend(part.error_trace);
        merged.keyframes.extend(part.keyframes.into_iter().map(|k| k + offset));
        merged.stats.extend(part.stats);
    }
    Ok(merged)
}
