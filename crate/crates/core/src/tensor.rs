//! Dense f64 tensors with a small fixed set of shapes: [C,H,W] feature maps,
//! [O,I,K,K] convolution kernels, and [N] flat vectors.

use crate::error::{Error, Result};

/// Row-major dense array of f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Box<[usize]>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.into(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.into(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor {
            shape: shape.into(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor {
            shape: shape.into(),
            data: self.data.clone(),
        }
    }

    /// Interprets the tensor as [C,H,W], which is the shape every feature
    /// map, image, and mask uses.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected 3-d tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.dims3();
        self.data[(c * h + y) * w + x]
    }

    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (_, h, w) = self.dims3();
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// An RGB image stored as [3,H,W] with values expected in [0,1].
pub type Image = Tensor;

/// A saliency mask stored as [1,H,W] with values expected in [0,1].
pub type SaliencyMask = Tensor;

/// Checks that a tensor is a [3,H,W] image.
pub fn check_image(t: &Tensor, context: &str) -> Result<()> {
    if t.shape().len() != 3 || t.shape()[0] != 3 {
        return Err(Error::shape(context, "[3,H,W]", format!("{:?}", t.shape())));
    }
    Ok(())
}

/// Checks that a tensor is a [1,H,W] mask.
pub fn check_mask(t: &Tensor, context: &str) -> Result<()> {
    if t.shape().len() != 3 || t.shape()[0] != 1 {
        return Err(Error::shape(context, "[1,H,W]", format!("{:?}", t.shape())));
    }
    Ok(())
}

/// Checks that two tensors share a shape.
pub fn check_same_shape(a: &Tensor, b: &Tensor, context: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            context,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}
