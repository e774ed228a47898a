//! Deterministic synthetic videos and randomly initialised models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmError};
use crate::layers::{ConvSpec, FcSpec, LayerSpec, PoolSpec};
use crate::model::NetworkModel;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    ShiftingSquare,
    RandomWalk,
    Static,
}

impl std::str::FromStr for SyntheticKind {
    type Err = RrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shifting-square" => Ok(SyntheticKind::ShiftingSquare),
            "random-walk" => Ok(SyntheticKind::RandomWalk),
            "static" => Ok(SyntheticKind::Static),
            _ => Err(RrmError::InvalidArgument(format!(
                "unknown synthetic kind {s:?} (expected shifting-square, random-walk or static)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub shape: Shape,
    pub frames: usize,
    /// Pixels per frame for the square, step amplitude for the random walk.
    pub motion: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<Vec<Tensor>> {
        if self.frames == 0 {
            return Err(RrmError::Empty("synthetic video"));
        }
        if self.shape.is_empty() {
            return Err(RrmError::InvalidArgument(format!("empty frame shape {}", self.shape)));
        }
        if !(self.motion >= 0.0 && self.motion.is_finite()) {
            return Err(RrmError::InvalidArgument(format!("motion must be >= 0, got {}", self.motion)));
        }
        Ok(match self.kind {
            SyntheticKind::ShiftingSquare => {
                shifting_square(self.shape, self.frames, self.motion.round() as usize, self.seed)
            }
            SyntheticKind::RandomWalk => random_walk(self.shape, self.frames, self.motion as f32, self.seed),
            SyntheticKind::Static => static_video(self.shape, self.frames, self.seed),
        })
    }
}

/// A shaded square drifting over a static shaded background, bouncing off
/// the borders. The square moves `step` pixels per frame along each axis.
pub fn shifting_square(shape: Shape, frames: usize, step: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (shape.height, shape.width);
    let side = (h.min(w) / 3).max(1);
    let tints: Vec<f32> = (0..shape.channels).map(|_| rng.random_range(0.5..1.0)).collect();
    let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let span_y = h - side;
    let span_x = w - side;
    let mut y0 = if span_y > 0 { rng.random_range(0..=span_y) } else { 0 };
    let mut x0 = if span_x > 0 { rng.random_range(0..=span_x) } else { 0 };
    let (mut dy, mut dx) = (1isize, 1isize);

    let background = move |c: usize, y: usize, x: usize| {
        let u = y as f32 / h as f32;
        let v = x as f32 / w as f32;
        0.2 + 0.1 * (3.0 * u + 2.0 * v + phase + c as f32).sin()
    };

    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let (top, left) = (y0, x0);
        out.push(Tensor::from_fn(shape, |c, y, x| {
            if (top..top + side).contains(&y) && (left..left + side).contains(&x) {
                let gy = (y - top) as f32 / side as f32;
                let gx = (x - left) as f32 / side as f32;
                tints[c] * (0.8 + 0.1 * gy + 0.1 * gx)
            } else {
                background(c, y, x)
            }
        }));
        (y0, dy) = bounce(y0, dy, step, span_y);
        (x0, dx) = bounce(x0, dx, step, span_x);
    }
    out
}

fn bounce(pos: usize, dir: isize, step: usize, span: usize) -> (usize, isize) {
    if span == 0 {
        return (0, dir);
    }
    let mut p = pos as isize;
    let mut d = dir;
    for _ in 0..step {
        if p + d < 0 || p + d > span as isize {
            d = -d;
        }
        p += d;
    }
    (p as usize, d)
}

/// Uniform start in `[0, 1)`; every element then takes an independent
/// uniform step in `[-amplitude, amplitude)` each frame.
pub fn random_walk(shape: Shape, frames: usize, amplitude: f32, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = Tensor::from_fn(shape, |_, _, _| rng.random_range(0.0..1.0));
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        if t > 0 && amplitude > 0.0 {
            for v in current.data_mut() {
                *v += rng.random_range(-amplitude..amplitude);
            }
        }
        out.push(current.clone());
    }
    out
}

pub fn static_video(shape: Shape, frames: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = Tensor::from_fn(shape, |_, _, _| rng.random_range(0.0..1.0));
    vec![frame; frames]
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Weights uniform with variance `2 / fan_in`, small biases.
pub fn random_conv(rng: &mut impl Rng, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> ConvSpec {
    let bound = (6.0 / (cin * k * k) as f32).sqrt();
    let w = uniform(rng, cout * cin * k * k, bound);
    let b = uniform(rng, cout, 0.05);
    ConvSpec::new(cin, cout, (k, k), stride, pad, w, b).expect("consistent dims")
}

pub fn random_fc(rng: &mut impl Rng, cin: usize, cout: usize) -> FcSpec {
    let bound = (6.0 / cin as f32).sqrt();
    let w = uniform(rng, cin * cout, bound);
    let b = uniform(rng, cout, 0.05);
    FcSpec::new(cin, cout, w, b).expect("consistent dims")
}

/// A random valid chain of exactly `depth` layers (at least 2) mixing
/// convolutions, max-pooling, ReLU and fully-connected layers. The first
/// layer is always a convolution.
pub fn random_model(rng: &mut impl Rng, input: Shape, depth: usize) -> Result<NetworkModel> {
    if depth < 2 {
        return Err(RrmError::InvalidArgument("random models need at least 2 layers".into()));
    }
    let mut layers = Vec::with_capacity(depth);
    let mut shape = input;
    let mut flat = false;
    while layers.len() < depth {
        let last_linear = layers.last().is_some_and(LayerSpec::is_linear);
        let remaining = depth - layers.len();
        let want_linear = layers.is_empty() || (!last_linear && rng.random_bool(0.8));
        let layer = if want_linear {
            if !flat && shape.height >= 3 && shape.width >= 3 && (remaining > 2 || rng.random_bool(0.5)) {
                let cout = rng.random_range(2..=6);
                let (k, stride, pad) = match rng.random_range(0..3) {
                    0 => (3, 1, 1),
                    1 => (3, 2, 1),
                    _ => (1, 1, 0),
                };
                LayerSpec::Conv(random_conv(rng, shape.channels, cout, k, stride, pad))
            } else {
                flat = true;
                let cout = rng.random_range(4..=16);
                LayerSpec::Fc(random_fc(rng, shape.len(), cout))
            }
        } else if !flat && shape.height >= 4 && shape.width >= 4 && rng.random_bool(0.4) {
            LayerSpec::MaxPool(PoolSpec { kernel: 2, stride: 2 })
        } else {
            LayerSpec::Relu
        };
        shape = layer.output_shape(shape)?;
        layers.push(layer);
    }
    NetworkModel::new(input, layers)
}

/// Fixed five-layer network: conv, relu, conv, relu, fc.
pub fn demo_model(input: Shape, seed: u64) -> Result<NetworkModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c1 = random_conv(&mut rng, input.channels, 8, 3, 1, 1);
    let c2 = random_conv(&mut rng, 8, 8, 3, 1, 1);
    let feat = 8 * input.height * input.width;
    let fc = random_fc(&mut rng, feat, 16);
    NetworkModel::new(
        input,
        vec![
            LayerSpec::Conv(c1),
            LayerSpec::Relu,
            LayerSpec::Conv(c2),
            LayerSpec::Relu,
            LayerSpec::Fc(fc),
        ],
    )
}
