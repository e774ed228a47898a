use crate::error::{Result, RrmError};
use crate::layers::{apply_nonlinear, dense_conv, dense_fc, LayerSpec, LinearKind};
use crate::tensor::{Shape, Tensor};

/// An ordered, shape-checked chain of layers with a declared input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    /// Input shape of every layer, plus the final output shape.
    shapes: Vec<Shape>,
}

/// Static description of one linear layer within a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearLayerInfo {
    /// Position in the full layer list.
    pub layer: usize,
    pub kind: LinearKind,
    pub input_shape: Shape,
    pub output_shape: Shape,
    pub dense_mults: u64,
}

impl NetworkModel {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(RrmError::InvalidModel("a model needs at least one layer".into()));
        }
        if input_shape.is_empty() {
            return Err(RrmError::InvalidModel(format!("empty input shape {input_shape}")));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape);
        let mut current = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            current = layer.output_shape(current).map_err(|e| RrmError::InvalidLayer {
                layer: i,
                reason: e.to_string(),
            })?;
            shapes.push(current);
        }
        Ok(NetworkModel {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().expect("non-empty")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_input_shape(&self, layer: usize) -> Shape {
        self.shapes[layer]
    }

    pub fn linear_layers(&self) -> Vec<LinearLayerInfo> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                Some(LinearLayerInfo {
                    layer: i,
                    kind: l.linear_kind()?,
                    input_shape: self.shapes[i],
                    output_shape: self.shapes[i + 1],
                    dense_mults: l.dense_mults(self.shapes[i]).expect("validated"),
                })
            })
            .collect()
    }

    pub fn linear_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_linear()).count()
    }

    pub(crate) fn check_frame(&self, frame: &Tensor) -> Result<()> {
        if frame.shape() != self.input_shape {
            return Err(RrmError::ShapeMismatch {
                left: frame.shape(),
                right: self.input_shape,
            });
        }
        Ok(())
    }

    /// Plain dense inference, layer by layer.
    pub fn forward_dense(&self, frame: &Tensor) -> Result<Tensor> {
        self.check_frame(frame)?;
        let mut current = frame.clone();
        for layer in &self.layers {
            current = apply_dense(layer, &current)?.0;
        }
        Ok(current)
    }
}

/// Runs one layer densely. For linear layers the second value carries the
/// kernel's multiplication count.
pub(crate) fn apply_dense(layer: &LayerSpec, input: &Tensor) -> Result<(Tensor, u64)> {
    match layer {
        LayerSpec::Conv(c) => dense_conv(c, input).map(|k| (k.output, k.multiplications)),
        LayerSpec::Fc(f) => dense_fc(f, input).map(|k| (k.output, k.multiplications)),
        LayerSpec::Relu | LayerSpec::MaxPool(_) => apply_nonlinear(layer, input).map(|t| (t, 0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{ConvSpec, FcSpec, PoolSpec};

    #[test]
    fn chain_is_validated() {
        let conv = ConvSpec::new(1, 2, (3, 3), 1, 0, vec![0.1; 18], vec![0.0; 2]).unwrap();
        let fc = FcSpec::new(18, 4, vec![0.0; 72], vec![0.0; 4]).unwrap();
        let ok = NetworkModel::new(
            Shape::new(1, 5, 5),
            vec![LayerSpec::Conv(conv.clone()), LayerSpec::Relu, LayerSpec::Fc(fc.clone())],
        )
        .unwrap();
        assert_eq!(ok.output_shape(), Shape::vector(4));
        assert_eq!(ok.linear_count(), 2);
        let info = ok.linear_layers();
        assert_eq!(info[0].dense_mults, 3 * 3 * 2 * 9);
        assert_eq!(info[1].layer, 2);
        assert_eq!(info[1].dense_mults, 72);

        let err = NetworkModel::new(
            Shape::new(1, 6, 6),
            vec![LayerSpec::Conv(conv), LayerSpec::Fc(fc)],
        )
        .unwrap_err();
        assert!(matches!(err, RrmError::InvalidLayer { layer: 1, .. }), "{err}");

        assert!(NetworkModel::new(Shape::new(1, 2, 2), vec![]).is_err());
        let pool = LayerSpec::MaxPool(PoolSpec { kernel: 3, stride: 1 });
        assert!(NetworkModel::new(Shape::new(1, 2, 2), vec![pool]).is_err());
    }
}
