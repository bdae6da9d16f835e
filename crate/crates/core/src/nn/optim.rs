//! Stochastic gradient descent with heavy-ball momentum.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// `v ← μ·v + g;  p ← p − lr·v`, one velocity buffer per parameter.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Apply one update. `params` and `grads` must come in the same order
    /// on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::ShapeMismatch("parameter list changed between steps".into()));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.shape != g.shape || p.shape != v.shape {
                return Err(Error::ShapeMismatch(format!("sgd {:?} vs {:?}", p.shape, g.shape)));
            }
            for ((pv, &gv), vv) in p.data.iter_mut().zip(&g.data).zip(&mut v.data) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}
