//! Dense `C x H x W` activations and coordinate-list sparse deltas.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RrmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    /// A flat vector of `len` features, as fed to a fully-connected layer.
    pub const fn vector(len: usize) -> Self {
        Shape::new(len, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    /// Inverse of [`Shape::index`].
    #[inline]
    pub const fn coords(&self, index: usize) -> (usize, usize, usize) {
        let plane = self.height * self.width;
        let c = index / plane;
        let rem = index % plane;
        (c, rem / self.width, rem % self.width)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(RrmError::InvalidArgument(format!(
                "tensor of shape {shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.shape.index(c, y, x)]
    }

    /// Same data viewed as a `(len, 1, 1)` vector.
    pub fn flattened(&self) -> Tensor {
        Tensor {
            shape: Shape::vector(self.len()),
            data: self.data.clone(),
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    /// Fraction of non-zero elements.
    pub fn density(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count_nonzero() as f64 / self.data.len() as f64
    }

    /// Fraction of exactly-zero elements.
    pub fn zero_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        1.0 - self.density()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Euclidean distance, accumulated in f64.
    pub fn l2_distance(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum::<f64>()
            .sqrt())
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(RrmError::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }
}

/// Elementwise `a - b`.
pub fn subtract(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape(b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(Tensor {
        shape: a.shape,
        data,
    })
}

/// Non-zero entries of a tensor, sorted by linear index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDelta {
    shape: Shape,
    indices: Vec<usize>,
    values: Vec<f32>,
}

impl SparseDelta {
    pub fn empty(shape: Shape) -> Self {
        SparseDelta {
            shape,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(index, value)` pairs. Zero values are dropped; indices
    /// must be strictly increasing and in range.
    pub fn from_entries(shape: Shape, entries: impl IntoIterator<Item = (usize, f32)>) -> Result<Self> {
        let mut out = SparseDelta::empty(shape);
        for (index, value) in entries {
            if index >= shape.len() {
                return Err(RrmError::InvalidArgument(format!(
                    "sparse index {index} out of range for shape {shape}"
                )));
            }
            if out.indices.last().is_some_and(|&last| last >= index) {
                return Err(RrmError::InvalidArgument(format!(
                    "sparse indices must be strictly increasing (at {index})"
                )));
            }
            if value != 0.0 {
                out.indices.push(index);
                out.values.push(value);
            }
        }
        Ok(out)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = (usize, f32)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn density(&self) -> f64 {
        let len = self.shape.len();
        if len == 0 {
            return 0.0;
        }
        self.nnz() as f64 / len as f64
    }

    /// Viewed as a `(len, 1, 1)` vector; indices are unchanged.
    pub fn flattened(&self) -> SparseDelta {
        SparseDelta {
            shape: Shape::vector(self.shape.len()),
            indices: self.indices.clone(),
            values: self.values.clone(),
        }
    }
}

/// Keeps the elements with `|v| > epsilon`. The second value is the
/// Euclidean norm of the discarded non-zero elements.
pub fn sparsify(d: &Tensor, epsilon: f32) -> (SparseDelta, f64) {
    debug_assert!(epsilon >= 0.0);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut truncated_sq = 0.0f64;
    for (i, &v) in d.data.iter().enumerate() {
        if v.abs() > epsilon {
            indices.push(i);
            values.push(v);
        } else if v != 0.0 {
            truncated_sq += f64::from(v) * f64::from(v);
        }
    }
    (
        SparseDelta {
            shape: d.shape,
            indices,
            values,
        },
        truncated_sq.sqrt(),
    )
}

pub fn densify(s: &SparseDelta) -> Tensor {
    let mut out = Tensor::zeros(s.shape);
    for (i, v) in s.entries() {
        out.data[i] = v;
    }
    out
}
