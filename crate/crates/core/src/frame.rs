use std::sync::Arc;

use crate::tensor::{Tensor, TensorError};

/// One image: `[channels, height, width]` scalars, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame(Tensor);

pub type SharedFrame = Arc<Frame>;

impl Frame {
    /// Ingests pixel data, rejecting values outside `[0, 1]`.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        if let Some(index) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(TensorError::InvalidShape {
                op: "frame",
                msg: format!("pixel {index} = {} lies outside [0, 1]", data[index]),
            });
        }
        Ok(Self(Tensor::new([channels, height, width], data)?))
    }

    /// Wraps a model output; values may transiently leave `[0, 1]`.
    pub fn from_tensor(t: Tensor) -> Result<Self, TensorError> {
        if t.shape().len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "frame",
                msg: format!("expected [c, h, w], got {:?}", t.shape()),
            });
        }
        Ok(Self(t))
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self(Tensor::full([channels, height, width], value))
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn clamped(&self) -> Frame {
        Frame(self.0.map(|v| v.clamp(0.0, 1.0)))
    }
}
