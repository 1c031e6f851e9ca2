//! Fully connected layer applied over the last dimension.

use rand::Rng;

use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// `y = W x + b` with `W` stored as `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub params: LayerParams,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / in_features as f64).sqrt();
        let weights = Tensor::from_fn(&[out_features, in_features], |_| {
            rng.random_range(-bound..bound)
        });
        Linear {
            params: LayerParams::new(weights, Tensor::zeros(&[out_features])),
            input: None,
        }
    }

    pub fn from_params(params: LayerParams) -> Result<Self> {
        let ws = params.weights.shape();
        if ws.len() != 2 || params.biases.shape() != [ws[0]] {
            return Err(Error::shape(format!(
                "linear needs [out, in] weights and [out] bias, got {ws:?} / {:?}",
                params.biases.shape()
            )));
        }
        Ok(Linear {
            params,
            input: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.params.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.params.weights.shape()[0]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input.last() {
            Some(&d) if d == self.in_features() => {
                let mut out = input.to_vec();
                *out.last_mut().unwrap() = self.out_features();
                Ok(out)
            }
            _ => Err(Error::shape(format!(
                "linear expects last dimension {}, got {input:?}",
                self.in_features()
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let (rows, fin) = x.rows_cols();
        let fout = self.out_features();
        let mut out = Tensor::zeros(&out_shape);
        for row in out.data_mut().chunks_mut(fout) {
            row.copy_from_slice(self.params.biases.data());
        }
        gemm(rows, fin, fout, 1.0, x.data(), false, self.params.weights.data(), true, 1.0, out.data_mut());
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::shape("linear backward before forward"))?;
        let (rows, fin) = x.rows_cols();
        let fout = self.out_features();
        if dy.len() != rows * fout {
            return Err(Error::shape("linear gradient shape mismatch"));
        }
        gemm(fout, rows, fin, 1.0, dy.data(), true, x.data(), false, 1.0, self.params.weight_grad.data_mut());
        let db = self.params.bias_grad.data_mut();
        for row in dy.data().chunks(fout) {
            for (b, g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(rows, fout, fin, 1.0, dy.data(), false, self.params.weights.data(), false, 0.0, dx.data_mut());
        Ok(dx)
    }
}
