//! Pointwise activations: leaky ReLU, sigmoid and softmax.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Leaky ReLU. The subgradient at exactly zero is `slope`.
#[derive(Debug, Clone)]
pub struct LeakyRelu {
    slope: f64,
    input: Option<Tensor>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        assert!(slope > 0.0 && slope < 1.0, "leaky slope must lie in (0, 1)");
        LeakyRelu { slope, input: None }
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = leaky_relu(x, self.slope);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::shape("leaky relu backward before forward"))?;
        if x.shape() != dy.shape() {
            return Err(Error::shape("leaky relu gradient shape mismatch"));
        }
        let slope = self.slope;
        let data = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&xv, &g)| if xv > 0.0 { g } else { slope * g })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Softmax of one logit vector, max-subtracted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax over the last dimension.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (rows, cols) = x.rows_cols();
    let mut out = Vec::with_capacity(x.len());
    for r in 0..rows {
        out.extend(softmax(&x.data()[r * cols..(r + 1) * cols]));
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax preserves shape")
}
