//! A minimal reverse-mode tensor engine.
//!
//! Only the operations the recurrent memory needs are provided: 3D
//! convolution with zero "same" padding, pointwise gates, channel
//! concatenation and slicing, and the training losses. Values are computed
//! eagerly while the tape records how to propagate gradients back.

mod conv;
pub mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use conv::{conv3d, conv3d_backward, ConvGrads};
pub use graph::{Gradients, Graph, Var, BCE_EPS};
pub use optim::Sgd;
pub use tensor::{ConvKernel, Tensor};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating point type the engine runs on: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Debug + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
