use crate::error::{shape_string, Error, Result};

/// Dense row-major tensor of f64 values.
///
/// The data length always equals the product of the shape extents, and every
/// extent is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {:?}", shape);
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || data.len() != expected {
            return Err(Error::BadTensorData {
                shape: shape_string(shape),
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// 1-D tensor from a slice.
    pub fn vector(values: &[f64]) -> Tensor {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape. Element count must match.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    /// Elementwise in-place a -= lr * g, used by the gradient-descent steps.
    pub fn axpy_neg(&mut self, lr: f64, g: &Tensor) {
        debug_assert_eq!(self.shape, g.shape);
        for (a, b) in self.data.iter_mut().zip(g.data.iter()) {
            *a -= lr * b;
        }
    }

    pub(crate) fn shape_str(&self) -> String {
        shape_string(&self.shape)
    }
}
