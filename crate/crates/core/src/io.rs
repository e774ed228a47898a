//! Binary model and frame files. All integers are little-endian `u32`, all
//! weights little-endian IEEE-754 `f32`.
//!
//! Model file:
//!
//! ```text
//! "RRMM" | version | input C | input H | input W | layer count
//! per layer: kind tag, then
//!   1 conv:    C_in C_out kh kw stride pad | weights (C_out, C_in, kh, kw) | bias (C_out)
//!   2 fc:      C_in C_out                  | weights (C_out, C_in)         | bias (C_out)
//!   3 relu:    -
//!   4 maxpool: kernel stride
//! ```
//!
//! Frame file: `C | H | W | data (C, H, W)`.

use std::fs;
use std::path::Path;

use crate::error::{Result, RrmError};
use crate::layers::{ConvSpec, FcSpec, LayerSpec, PoolSpec};
use crate::model::NetworkModel;
use crate::tensor::{Shape, Tensor};

pub const MODEL_MAGIC: [u8; 4] = *b"RRMM";
pub const MODEL_VERSION: u32 = 1;

const TAG_CONV: u32 = 1;
const TAG_FC: u32 = 2;
const TAG_RELU: u32 = 3;
const TAG_MAXPOOL: u32 = 4;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(RrmError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| RrmError::InvalidModel(format!("blob of {n} floats is too large")))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(RrmError::TrailingBytes {
                offset: self.pos,
                count: self.buf.len() - self.pos,
            });
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| RrmError::InvalidArgument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(model: &NetworkModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let s = model.input_shape();
    for v in [s.channels, s.height, s.width, model.layers().len()] {
        put_u32(&mut out, v)?;
    }
    for layer in model.layers() {
        match layer {
            LayerSpec::Conv(c) => {
                let (kh, kw) = c.kernel();
                for v in [TAG_CONV as usize, c.in_channels(), c.out_channels(), kh, kw, c.stride(), c.padding()] {
                    put_u32(&mut out, v)?;
                }
                put_f32s(&mut out, c.weights());
                put_f32s(&mut out, c.bias());
            }
            LayerSpec::Fc(f) => {
                for v in [TAG_FC as usize, f.in_features(), f.out_features()] {
                    put_u32(&mut out, v)?;
                }
                put_f32s(&mut out, f.weights());
                put_f32s(&mut out, f.bias());
            }
            LayerSpec::Relu => put_u32(&mut out, TAG_RELU as usize)?,
            LayerSpec::MaxPool(p) => {
                for v in [TAG_MAXPOOL as usize, p.kernel, p.stride] {
                    put_u32(&mut out, v)?;
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<NetworkModel> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MODEL_MAGIC {
        return Err(RrmError::BadMagic {
            expected: MODEL_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(RrmError::UnsupportedVersion(version));
    }
    let input = Shape::new(r.usize()?, r.usize()?, r.usize()?);
    let count = r.usize()?;
    let mut layers = Vec::new();
    for i in 0..count {
        let offset = r.pos;
        let tag = r.u32()?;
        let layer = match tag {
            TAG_CONV => {
                let (cin, cout, kh, kw, stride, pad) =
                    (r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?);
                let weights = r.f32s(cout.saturating_mul(cin).saturating_mul(kh).saturating_mul(kw))?;
                let bias = r.f32s(cout)?;
                LayerSpec::Conv(
                    ConvSpec::new(cin, cout, (kh, kw), stride, pad, weights, bias)
                        .map_err(|e| RrmError::InvalidLayer { layer: i, reason: e.to_string() })?,
                )
            }
            TAG_FC => {
                let (cin, cout) = (r.usize()?, r.usize()?);
                let weights = r.f32s(cin.saturating_mul(cout))?;
                let bias = r.f32s(cout)?;
                LayerSpec::Fc(
                    FcSpec::new(cin, cout, weights, bias)
                        .map_err(|e| RrmError::InvalidLayer { layer: i, reason: e.to_string() })?,
                )
            }
            TAG_RELU => LayerSpec::Relu,
            TAG_MAXPOOL => LayerSpec::MaxPool(PoolSpec {
                kernel: r.usize()?,
                stride: r.usize()?,
            }),
            tag => return Err(RrmError::UnknownLayerKind { tag, offset }),
        };
        layers.push(layer);
    }
    r.finish()?;
    let model = NetworkModel::new(input, layers)?;
    for l in model.layers() {
        let finite = match l {
            LayerSpec::Conv(c) => c.weights().iter().chain(c.bias()).all(|v| v.is_finite()),
            LayerSpec::Fc(f) => f.weights().iter().chain(f.bias()).all(|v| v.is_finite()),
            _ => true,
        };
        if !finite {
            return Err(RrmError::NonFinite("model weights".into()));
        }
    }
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| RrmError::io(path, e))?;
    decode_model(&bytes)
}

pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)?).map_err(|e| RrmError::io(path, e))
}

pub fn encode_frame(frame: &Tensor) -> Result<Vec<u8>> {
    let s = frame.shape();
    let mut out = Vec::with_capacity(12 + 4 * frame.len());
    for v in [s.channels, s.height, s.width] {
        put_u32(&mut out, v)?;
    }
    put_f32s(&mut out, frame.data());
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    let shape = Shape::new(r.usize()?, r.usize()?, r.usize()?);
    let data = r.f32s(shape.len())?;
    r.finish()?;
    Tensor::from_vec(shape, data)
}

/// Reads every regular file in `dir`, in lexicographic file-name order.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| RrmError::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| RrmError::io(dir, e)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    if paths.is_empty() {
        return Err(RrmError::InconsistentFrames(format!("no frame files in {}", dir.display())));
    }
    let mut frames: Vec<Tensor> = Vec::with_capacity(paths.len());
    for p in &paths {
        let bytes = fs::read(p).map_err(|e| RrmError::io(p, e))?;
        let frame = decode_frame(&bytes).map_err(|e| match e {
            RrmError::Io { .. } => e,
            other => RrmError::InconsistentFrames(format!("{}: {other}", p.display())),
        })?;
        if let Some(first) = frames.first() {
            if first.shape() != frame.shape() {
                return Err(RrmError::InconsistentFrames(format!(
                    "{} has shape {}, expected {}",
                    p.display(),
                    frame.shape(),
                    first.shape()
                )));
            }
        }
        if !frame.is_finite() {
            return Err(RrmError::NonFinite(p.display().to_string()));
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Writes `frame_00000.bin`, `frame_00001.bin`, ... into `dir`.
pub fn save_frames(frames: &[Tensor], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| RrmError::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        let p = dir.join(format!("frame_{i:05}.bin"));
        fs::write(&p, encode_frame(f)?).map_err(|e| RrmError::io(&p, e))?;
    }
    Ok(())
}
