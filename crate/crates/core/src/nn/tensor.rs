use rand::Rng as _;

use super::Real;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major tensor. Volumes use the shape `(C, D, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension (channels for volumes).
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Elements per leading-dimension slice.
    pub fn plane(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// 3D convolution parameters: weight `(C_out, C_in, k, k, k)` and bias
/// `(C_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[c_out, c_in, k, k, k]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(c_out: usize, c_in: usize, k: usize, rng: &mut Rng) -> Self {
        let taps = k * k * k;
        let bound = (6.0 / ((c_in * taps + c_out * taps) as f64)).sqrt();
        let mut kernel = Self::zeros(c_out, c_in, k);
        for w in &mut kernel.weight.data {
            *w = T::from_f64(rng.random_range(-bound..bound));
        }
        kernel
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn size(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn cast<U: Real>(&self) -> ConvKernel<U> {
        ConvKernel {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}
