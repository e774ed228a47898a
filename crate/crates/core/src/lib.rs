//! Video CNN inference that propagates sparse frame differences.
//!
//! Linear layers (convolution, fully-connected) are distributive, so the
//! projection of frame `t` equals the cached projection of frame `t - 1`
//! plus the layer applied to the input difference. [`engine`] drives that
//! recurrence with zero-skipping kernels from [`layers`]; [`metrics`]
//! prices it in multiplications; [`error_control`] bounds the drift caused
//! by thresholding the differences.

pub mod engine;
pub mod error;
pub mod error_control;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod run;
pub mod synth;
pub mod tensor;

pub use engine::{
    delta_forward, keyframe_forward, process_chunked, process_sequence, FrameMode, FrameResult, LayerStats,
    RrmState, SequenceConfig, SequenceOutput,
};
pub use error::{ErrorClass, Result, RrmError};
pub use error_control::{calibrate, CalibrationPoint, Decision, ErrorAccumulator, ErrorModel, FeatureErrorMetric};
pub use layers::{ConvSpec, FcSpec, LayerSpec, LinearKind, PoolSpec};
pub use metrics::{layer_cost, network_cost, overall_sparsity, speedup_ratio, LayerWorkload, SequenceStats};
pub use model::NetworkModel;
pub use tensor::{densify, sparsify, subtract, Shape, SparseDelta, Tensor};
