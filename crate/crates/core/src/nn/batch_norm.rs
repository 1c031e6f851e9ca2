//! Per-channel batch normalization over `[N, C, H, W]`.

use super::params::LayerParams;
use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `weights` hold the scale, `biases` the shift, `aux` is
/// `[running_mean, running_var]`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub params: LayerParams,
    channels: usize,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    shape: Vec<usize>,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        let params = LayerParams::new(Tensor::filled(&[channels], 1.0), Tensor::zeros(&[channels]))
            .with_aux(vec![Tensor::zeros(&[channels]), Tensor::filled(&[channels], 1.0)]);
        BatchNorm2d {
            params,
            channels,
            cache: None,
        }
    }

    pub fn from_params(params: LayerParams) -> Result<Self> {
        let c = params.weights.len();
        let ok = params.weights.shape() == [c]
            && params.biases.shape() == [c]
            && params.aux.len() == 2
            && params.aux.iter().all(|a| a.shape() == [c]);
        if !ok {
            return Err(Error::shape("batch norm needs [C] scale, shift, mean and variance"));
        }
        Ok(BatchNorm2d {
            params,
            channels: c,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn running_mean(&self) -> &[f64] {
        self.params.aux[0].data()
    }

    pub fn running_var(&self) -> &[f64] {
        self.params.aux[1].data()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[1] != self.channels {
            return Err(Error::shape(format!(
                "batch norm expects [N, {}, H, W], got {input:?}",
                self.channels
            )));
        }
        Ok(input.to_vec())
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        let s = x.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        if mode == Mode::Train && n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch norm in train mode needs at least 2 samples, got {n}"
            )));
        }
        let count = (n * hw) as f64;
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let mut out = Tensor::zeros(s);
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    for b in 0..n {
                        sum += x.data()[(b * c + ch) * hw..][..hw].iter().sum::<f64>();
                    }
                    let mean = sum / count;
                    let mut sq = 0.0;
                    for b in 0..n {
                        sq += x.data()[(b * c + ch) * hw..][..hw]
                            .iter()
                            .map(|v| (v - mean) * (v - mean))
                            .sum::<f64>();
                    }
                    let var = sq / count;
                    let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                    let rm = &mut self.params.aux[0].data_mut()[ch];
                    *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean;
                    let rv = &mut self.params.aux[1].data_mut()[ch];
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean()[ch], self.running_var()[ch]),
            };
            let istd = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = istd;
            let gamma = self.params.weights.data()[ch];
            let beta = self.params.biases.data()[ch];
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (x.data()[i] - mean) * istd;
                    normalized[i] = xh;
                    out.data_mut()[i] = gamma * xh + beta;
                }
            }
        }
        self.cache = Some(Cache {
            shape: s.to_vec(),
            normalized,
            inv_std,
            mode,
        });
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::shape("batch norm backward before forward"))?;
        if dy.shape() != cache.shape.as_slice() {
            return Err(Error::shape("batch norm gradient shape mismatch"));
        }
        let (n, c, hw) = (cache.shape[0], cache.shape[1], cache.shape[2] * cache.shape[3]);
        let count = (n * hw) as f64;
        let mut dx = Tensor::zeros(&cache.shape);
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    sum_dy += dy.data()[i];
                    sum_dy_xh += dy.data()[i] * cache.normalized[i];
                }
            }
            self.params.weight_grad.data_mut()[ch] += sum_dy_xh;
            self.params.bias_grad.data_mut()[ch] += sum_dy;
            let gamma = self.params.weights.data()[ch];
            let k = gamma * cache.inv_std[ch];
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    dx.data_mut()[i] = match cache.mode {
                        Mode::Train => {
                            k * (dy.data()[i]
                                - sum_dy / count
                                - cache.normalized[i] * sum_dy_xh / count)
                        }
                        Mode::Eval => k * dy.data()[i],
                    };
                }
            }
        }
        Ok(dx)
    }
}
