//! Dense reference kernels and their sparse-delta counterparts.
//!
//! The dense linear kernels compute the full projection `W * x + b`. The
//! sparse kernels compute `W * delta` only (no bias) by enumerating the
//! non-zeros of the delta and scattering each one through its slice of the
//! weights, so their cost is proportional to the number of non-zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmError};
use crate::tensor::{Shape, SparseDelta, Tensor};

/// Output of a linear kernel together with the number of multiplications it
/// was charged.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOutput {
    pub output: Tensor,
    pub multiplications: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    in_channels: usize,
    out_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
    /// `C_out x C_in x kh x kw`, row-major.
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let (kernel_h, kernel_w) = kernel;
        let bad = |reason: String| Err(RrmError::InvalidArgument(format!("conv: {reason}")));
        if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return bad("channel counts and kernel dims must be positive".into());
        }
        if stride == 0 {
            return bad("stride must be at least 1".into());
        }
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if weights.len() != expected {
            return bad(format!("expected {expected} weights, got {}", weights.len()));
        }
        if bias.len() != out_channels {
            return bad(format!("expected {out_channels} biases, got {}", bias.len()));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            weights,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn kernel(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn padding(&self) -> usize {
        self.padding
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    #[inline]
    fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((co * self.in_channels + ci) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels {
            return Err(RrmError::InvalidArgument(format!(
                "conv expects {} input channels, got input {input}",
                self.in_channels
            )));
        }
        let out_dim = |size: usize, k: usize| {
            let padded = size + 2 * self.padding;
            (padded >= k).then(|| (padded - k) / self.stride + 1)
        };
        match (out_dim(input.height, self.kernel_h), out_dim(input.width, self.kernel_w)) {
            (Some(h), Some(w)) => Ok(Shape::new(self.out_channels, h, w)),
            _ => Err(RrmError::InvalidArgument(format!(
                "conv kernel {}x{} with padding {} does not fit input {input}",
                self.kernel_h, self.kernel_w, self.padding
            ))),
        }
    }

    /// `W_out * H_out * C_in * C_out * kh * kw`.
    pub fn dense_mults(&self, input: Shape) -> Result<u64> {
        let out = self.output_shape(input)?;
        Ok((out.height * out.width * self.in_channels * self.out_channels
            * self.kernel_h
            * self.kernel_w) as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcSpec {
    in_features: usize,
    out_features: usize,
    /// `C_out x C_in`, row-major.
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl FcSpec {
    pub fn new(in_features: usize, out_features: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(RrmError::InvalidArgument("fc: feature counts must be positive".into()));
        }
        if weights.len() != in_features * out_features {
            return Err(RrmError::InvalidArgument(format!(
                "fc: expected {} weights, got {}",
                in_features * out_features,
                weights.len()
            )));
        }
        if bias.len() != out_features {
            return Err(RrmError::InvalidArgument(format!(
                "fc: expected {out_features} biases, got {}",
                bias.len()
            )));
        }
        Ok(FcSpec {
            in_features,
            out_features,
            weights,
            bias,
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }
    pub fn out_features(&self) -> usize {
        self.out_features
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.len() != self.in_features {
            return Err(RrmError::InvalidArgument(format!(
                "fc expects {} input features, got input {input}",
                self.in_features
            )));
        }
        Ok(Shape::vector(self.out_features))
    }

    pub fn dense_mults(&self) -> u64 {
        (self.in_features * self.out_features) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(RrmError::InvalidArgument("max-pool kernel and stride must be positive".into()));
        }
        if input.height < self.kernel || input.width < self.kernel {
            return Err(RrmError::InvalidArgument(format!(
                "max-pool kernel {} does not fit input {input}",
                self.kernel
            )));
        }
        Ok(Shape::new(
            input.channels,
            (input.height - self.kernel) / self.stride + 1,
            (input.width - self.kernel) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Conv,
    Fc,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Fc(FcSpec),
    Relu,
    MaxPool(PoolSpec),
}

impl LayerSpec {
    pub fn is_linear(&self) -> bool {
        self.linear_kind().is_some()
    }

    pub fn linear_kind(&self) -> Option<LinearKind> {
        match self {
            LayerSpec::Conv(_) => Some(LinearKind::Conv),
            LayerSpec::Fc(_) => Some(LinearKind::Fc),
            LayerSpec::Relu | LayerSpec::MaxPool(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Fc(_) => "fc",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool(_) => "maxpool",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            LayerSpec::Conv(c) => c.output_shape(input),
            LayerSpec::Fc(f) => f.output_shape(input),
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool(p) => p.output_shape(input),
        }
    }

    /// Multiplications of a dense pass over an input of this shape; zero
    /// for nonlinear layers.
    pub fn dense_mults(&self, input: Shape) -> Result<u64> {
        match self {
            LayerSpec::Conv(c) => c.dense_mults(input),
            LayerSpec::Fc(f) => {
                f.output_shape(input)?;
                Ok(f.dense_mults())
            }
            LayerSpec::Relu | LayerSpec::MaxPool(_) => Ok(0),
        }
    }
}

/// Cross-correlation plus bias over the zero-padded input. Every tap of the
/// padded window is multiplied, so the count equals the dense cost formula.
pub fn dense_conv(spec: &ConvSpec, input: &Tensor) -> Result<KernelOutput> {
    let in_shape = input.shape();
    let out_shape = spec.output_shape(in_shape)?;
    let p = spec.padding;
    let padded_shape = Shape::new(in_shape.channels, in_shape.height + 2 * p, in_shape.width + 2 * p);
    let padded = if p == 0 {
        input.clone()
    } else {
        let mut t = Tensor::zeros(padded_shape);
        let src = input.data();
        let dst = t.data_mut();
        for c in 0..in_shape.channels {
            for y in 0..in_shape.height {
                let s = in_shape.index(c, y, 0);
                let d = padded_shape.index(c, y + p, p);
                dst[d..d + in_shape.width].copy_from_slice(&src[s..s + in_shape.width]);
            }
        }
        t
    };

    let mut out = Tensor::zeros(out_shape);
    let mut mults = 0u64;
    let (kh, kw) = spec.kernel();
    let data = padded.data();
    let out_data = out.data_mut();
    for co in 0..out_shape.channels {
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                let mut acc = spec.bias[co];
                for ci in 0..spec.in_channels {
                    for ky in 0..kh {
                        let row = padded_shape.index(ci, oy * spec.stride + ky, ox * spec.stride);
                        for kx in 0..kw {
                            acc += spec.weight(co, ci, ky, kx) * data[row + kx];
                        }
                    }
                }
                mults += (spec.in_channels * kh * kw) as u64;
                out_data[out_shape.index(co, oy, ox)] = acc;
            }
        }
    }
    Ok(KernelOutput {
        output: out,
        multiplications: mults,
    })
}

/// `W * delta` without bias.
///
/// Each non-zero `(ci, y, x)` is scattered into every output position whose
/// receptive field covers it; writes that fall in the padding border or off
/// the stride grid are clipped. The charged cost is the full broadcast of
/// the non-zero against its `C_out x kh x kw` filter slice, which matches the
/// dense formula scaled by density for stride-1 "same" convolutions.
pub fn sparse_conv(spec: &ConvSpec, delta: &SparseDelta) -> Result<KernelOutput> {
    let in_shape = delta.shape();
    let out_shape = spec.output_shape(in_shape)?;
    let (kh, kw) = spec.kernel();
    let (s, p) = (spec.stride, spec.padding);
    let mut out = Tensor::zeros(out_shape);
    let out_data = out.data_mut();
    for (index, value) in delta.entries() {
        let (ci, y, x) = in_shape.coords(index);
        for ky in 0..kh {
            // output row oy satisfies oy * s + ky == y + p
            let Some(ny) = (y + p).checked_sub(ky) else { continue };
            if ny % s != 0 || ny / s >= out_shape.height {
                continue;
            }
            let oy = ny / s;
            for kx in 0..kw {
                let Some(nx) = (x + p).checked_sub(kx) else { continue };
                if nx % s != 0 || nx / s >= out_shape.width {
                    continue;
                }
                let ox = nx / s;
                for co in 0..out_shape.channels {
                    out_data[out_shape.index(co, oy, ox)] += spec.weight(co, ci, ky, kx) * value;
                }
            }
        }
    }
    Ok(KernelOutput {
        output: out,
        multiplications: (delta.nnz() * spec.out_channels * kh * kw) as u64,
    })
}

pub fn dense_fc(spec: &FcSpec, input: &Tensor) -> Result<KernelOutput> {
    let out_shape = spec.output_shape(input.shape())?;
    let x = input.data();
    let data = spec
        .weights
        .chunks_exact(spec.in_features)
        .zip(&spec.bias)
        .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v))
        .collect();
    Ok(KernelOutput {
        output: Tensor::from_vec(out_shape, data)?,
        multiplications: spec.dense_mults(),
    })
}

/// Sum of `value * column(index)` over the delta's non-zeros; no bias.
pub fn sparse_fc(spec: &FcSpec, delta: &SparseDelta) -> Result<KernelOutput> {
    let out_shape = spec.output_shape(delta.shape())?;
    let mut out = vec![0.0f32; spec.out_features];
    for (j, v) in delta.entries() {
        for (o, acc) in out.iter_mut().enumerate() {
            *acc += spec.weights[o * spec.in_features + j] * v;
        }
    }
    Ok(KernelOutput {
        output: Tensor::from_vec(out_shape, out)?,
        multiplications: (delta.nnz() * spec.out_features) as u64,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

pub fn max_pool(spec: PoolSpec, input: &Tensor) -> Result<Tensor> {
    let in_shape = input.shape();
    let out_shape = spec.output_shape(in_shape)?;
    Ok(Tensor::from_fn(out_shape, |c, oy, ox| {
        let mut m = f32::NEG_INFINITY;
        for ky in 0..spec.kernel {
            for kx in 0..spec.kernel {
                m = m.max(input.get(c, oy * spec.stride + ky, ox * spec.stride + kx));
            }
        }
        m
    }))
}

/// Applies a nonlinear layer. Linear layers are rejected.
pub fn apply_nonlinear(layer: &LayerSpec, input: &Tensor) -> Result<Tensor> {
    match layer {
        LayerSpec::Relu => Ok(relu(input)),
        LayerSpec::MaxPool(p) => max_pool(*p, input),
        LayerSpec::Conv(_) | LayerSpec::Fc(_) => Err(RrmError::InvalidArgument(format!(
            "{} is not a nonlinear layer",
            layer.name()
        ))),
    }
}
