//! Gradient reversal: identity forward, `-lambda` times the gradient backward.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_GRL_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrlNode {
    lambda: f64,
}

impl Default for GrlNode {
    fn default() -> Self {
        GrlNode {
            lambda: DEFAULT_GRL_LAMBDA,
        }
    }
}

impl GrlNode {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("GRL lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(GrlNode { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    pub fn backward(&self, dy: &Tensor) -> Tensor {
        dy.scale(-self.lambda)
    }
}
