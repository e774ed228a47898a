//! Multiplication cost model, overall sparsity and theoretical speedup.
//!
//! Only multiplications are charged. A linear layer with dense cost `M` and
//! input density `rho` costs `rho * M` on a zero-skipping engine, where `M`
//! is `W_out * H_out * C_in * C_out * kh * kw` for a convolution and
//! `C_in * C_out` for a fully-connected layer.

use serde::{Deserialize, Serialize};

use crate::engine::{FrameMode, FrameResult, LayerStats};
use crate::error::{Result, RrmError};
use crate::layers::LinearKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerWorkload {
    pub layer: usize,
    pub kind: LinearKind,
    pub dense_mults: u64,
    pub density: f64,
    pub zero_fraction: f64,
}

impl LayerWorkload {
    /// Row for the original model: the layer multiplies its full input.
    pub fn dense(stats: &LayerStats) -> Self {
        LayerWorkload {
            layer: stats.layer,
            kind: stats.kind,
            dense_mults: stats.dense_mults,
            density: stats.input_density(),
            zero_fraction: stats.input_zero_fraction,
        }
    }

    /// Row for the recurrent model: the layer multiplies its truncated delta.
    pub fn rrm(stats: &LayerStats) -> Self {
        LayerWorkload {
            layer: stats.layer,
            kind: stats.kind,
            dense_mults: stats.dense_mults,
            density: stats.delta_density,
            zero_fraction: 1.0 - stats.delta_density,
        }
    }
}

pub fn layer_cost(w: &LayerWorkload) -> f64 {
    w.density * w.dense_mults as f64
}

pub fn network_cost(layers: &[LayerWorkload]) -> f64 {
    layers.iter().map(layer_cost).sum()
}

/// Workload-weighted zero fraction of the linear-layer inputs.
pub fn overall_sparsity(layers: &[LayerWorkload]) -> Result<f64> {
    if layers.is_empty() {
        return Err(RrmError::Empty("layer workload list"));
    }
    let total: f64 = layers.iter().map(|w| w.dense_mults as f64).sum();
    if total == 0.0 {
        return Err(RrmError::InvalidArgument("total dense workload is zero".into()));
    }
    Ok(layers.iter().map(|w| w.zero_fraction * w.dense_mults as f64).sum::<f64>() / total)
}

/// Cost of the original model (skipping zero activations) over the cost of
/// the recurrent model (skipping zero delta entries).
pub fn speedup_ratio(dense: &[LayerWorkload], rrm: &[LayerWorkload]) -> Result<f64> {
    if dense.len() != rrm.len()
        || dense
            .iter()
            .zip(rrm)
            .any(|(a, b)| a.layer != b.layer || a.kind != b.kind || a.dense_mults != b.dense_mults)
    {
        return Err(RrmError::InvalidArgument(
            "dense and rrm workloads must describe the same layers".into(),
        ));
    }
    ratio(network_cost(dense), network_cost(rrm))
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if den == 0.0 {
        return Err(RrmError::ZeroWorkload);
    }
    Ok(num / den)
}

/// Per-frame workload rows of a recurrent run, paired with the rows the
/// original model would have produced on the same layer inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub dense: Vec<Vec<LayerWorkload>>,
    pub rrm: Vec<Vec<LayerWorkload>>,
    /// Delta passes that were computed and then replaced by a keyframe.
    pub rejected: Vec<Vec<LayerWorkload>>,
    pub keyframe: Vec<bool>,
    pub subtractions: u64,
    pub additions: u64,
}

impl SequenceStats {
    pub fn from_frames(frames: &[FrameResult]) -> Self {
        let mut s = SequenceStats::default();
        for f in frames {
            s.dense.push(f.per_layer.iter().map(LayerWorkload::dense).collect());
            s.rrm.push(f.per_layer.iter().map(LayerWorkload::rrm).collect());
            s.keyframe.push(f.mode == FrameMode::Keyframe);
            if let Some(rej) = &f.rejected_delta {
                s.rejected.push(rej.iter().map(LayerWorkload::rrm).collect());
                s.subtractions += rej.iter().map(|l| l.subtractions).sum::<u64>();
                s.additions += rej.iter().map(|l| l.additions).sum::<u64>();
            }
            s.subtractions += f.per_layer.iter().map(|l| l.subtractions).sum::<u64>();
            s.additions += f.per_layer.iter().map(|l| l.additions).sum::<u64>();
        }
        s
    }

    pub fn extend(&mut self, other: SequenceStats) {
        self.dense.extend(other.dense);
        self.rrm.extend(other.rrm);
        self.rejected.extend(other.rejected);
        self.keyframe.extend(other.keyframe);
        self.subtractions += other.subtractions;
        self.additions += other.additions;
    }

    pub fn frame_count(&self) -> usize {
        self.keyframe.len()
    }

    /// Flattened `(dense, rrm)` rows, optionally dropping keyframes.
    pub fn rows(&self, include_keyframes: bool) -> (Vec<LayerWorkload>, Vec<LayerWorkload>) {
        let keep = |i: &usize| include_keyframes || !self.keyframe[*i];
        let pick = |rows: &[Vec<LayerWorkload>]| {
            (0..rows.len())
                .filter(keep)
                .flat_map(|i| rows[i].iter().copied())
                .collect::<Vec<_>>()
        };
        (pick(&self.dense), pick(&self.rrm))
    }

    pub fn dense_sparsity(&self, include_keyframes: bool) -> Result<f64> {
        overall_sparsity(&self.rows(include_keyframes).0)
    }

    pub fn rrm_sparsity(&self, include_keyframes: bool) -> Result<f64> {
        overall_sparsity(&self.rows(include_keyframes).1)
    }

    pub fn speedup(&self, include_keyframes: bool) -> Result<f64> {
        let (dense, rrm) = self.rows(include_keyframes);
        speedup_ratio(&dense, &rrm)
    }

    /// Speedup against a baseline that does not skip zeros at all.
    pub fn speedup_vs_dense_baseline(&self, include_keyframes: bool) -> Result<f64> {
        let (dense, rrm) = self.rows(include_keyframes);
        let full: f64 = dense.iter().map(|w| w.dense_mults as f64).sum();
        ratio(full, network_cost(&rrm))
    }

    /// Speedup with the discarded delta passes charged to the recurrent run.
    pub fn speedup_with_rejected(&self) -> Result<f64> {
        let (dense, rrm) = self.rows(true);
        let wasted: f64 = self.rejected.iter().map(|r| network_cost(r)).sum();
        ratio(network_cost(&dense), network_cost(&rrm) + wasted)
    }

    pub fn sparse_multiplications_after_first(&self) -> f64 {
        self.rrm.iter().skip(1).map(|r| network_cost(r)).sum()
    }
}
