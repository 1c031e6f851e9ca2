//! Differentiable building blocks with explicit forward/backward passes.
//!
//! Every layer caches what it needs during `forward` and consumes it in
//! `backward`, which accumulates parameter gradients into its
//! [`LayerParams`] and returns the gradient with respect to its input.

pub mod activation;
pub mod batch_norm;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod grl;
pub mod gru;
pub mod linear;
pub mod loss;
pub mod params;
pub mod pool;
pub mod radam;

use serde::{Deserialize, Serialize};

pub use activation::LeakyRelu;
pub use batch_norm::BatchNorm2d;
pub use conv::Conv2d;
pub use grl::GrlNode;
pub use gru::BiGru;
pub use linear::Linear;
pub use loss::LossWeights;
pub use params::LayerParams;
pub use pool::{GlobalMaxPool, MaxPool2d};
pub use radam::{radam_update, Radam, RadamBranch, RadamConfig, RadamMoments};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Reorders `[N, C, T, W]` into per-frame vectors `[N, T, C * W]`.
#[derive(Debug, Clone, Default)]
pub struct FrameFlatten {
    input_shape: Option<Vec<usize>>,
}

impl FrameFlatten {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 {
            return Err(Error::shape(format!("frame flatten expects [N, C, T, W], got {input:?}")));
        }
        Ok(vec![input[0], input[2], input[1] * input[3]])
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let s = x.shape();
        let (n, c, t, w) = (s[0], s[1], s[2], s[3]);
        let mut out = Tensor::zeros(&out_shape);
        for b in 0..n {
            for ch in 0..c {
                for f in 0..t {
                    let src = &x.data()[((b * c + ch) * t + f) * w..][..w];
                    out.data_mut()[(b * t + f) * c * w + ch * w..][..w].copy_from_slice(src);
                }
            }
        }
        self.input_shape = Some(s.to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let s = self
            .input_shape
            .clone()
            .ok_or_else(|| Error::shape("frame flatten backward before forward"))?;
        let (n, c, t, w) = (s[0], s[1], s[2], s[3]);
        if dy.len() != n * c * t * w {
            return Err(Error::shape("frame flatten gradient shape mismatch"));
        }
        let mut dx = Tensor::zeros(&s);
        for b in 0..n {
            for ch in 0..c {
                for f in 0..t {
                    let src = &dy.data()[(b * t + f) * c * w + ch * w..][..w];
                    dx.data_mut()[((b * c + ch) * t + f) * w..][..w].copy_from_slice(src);
                }
            }
        }
        Ok(dx)
    }
}

/// Serializable description of a layer, used in topology manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { in_channels: usize, out_channels: usize },
    BatchNorm2d { channels: usize },
    LeakyRelu { slope: f64 },
    MaxPool2d { window: [usize; 2] },
    GlobalMaxPool,
    Linear { in_features: usize, out_features: usize },
    BiGru { input_size: usize, units: usize },
    Grl { lambda: f64 },
    FrameFlatten,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    LeakyRelu(LeakyRelu),
    MaxPool2d(MaxPool2d),
    GlobalMaxPool(GlobalMaxPool),
    Linear(Linear),
    BiGru(BiGru),
    Grl(GrlNode),
    FrameFlatten(FrameFlatten),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::BatchNorm2d(l) => l.forward(x, mode),
            Layer::LeakyRelu(l) => Ok(l.forward(x)),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::GlobalMaxPool(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::BiGru(l) => l.forward(x),
            Layer::Grl(l) => Ok(l.forward(x)),
            Layer::FrameFlatten(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(dy),
            Layer::BatchNorm2d(l) => l.backward(dy),
            Layer::LeakyRelu(l) => l.backward(dy),
            Layer::MaxPool2d(l) => l.backward(dy),
            Layer::GlobalMaxPool(l) => l.backward(dy),
            Layer::Linear(l) => l.backward(dy),
            Layer::BiGru(l) => l.backward(dy),
            Layer::Grl(l) => Ok(l.backward(dy)),
            Layer::FrameFlatten(l) => l.backward(dy),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::BatchNorm2d(l) => l.output_shape(input),
            Layer::MaxPool2d(l) => l.output_shape(input),
            Layer::GlobalMaxPool(l) => l.output_shape(input),
            Layer::Linear(l) => l.output_shape(input),
            Layer::BiGru(l) => l.output_shape(input),
            Layer::FrameFlatten(l) => l.output_shape(input),
            Layer::LeakyRelu(_) | Layer::Grl(_) => Ok(input.to_vec()),
        }
    }

    /// Parameter groups in a fixed order (a BiGRU has two: forward, backward).
    pub fn params(&self) -> Vec<&LayerParams> {
        match self {
            Layer::Conv2d(l) => vec![&l.params],
            Layer::BatchNorm2d(l) => vec![&l.params],
            Layer::Linear(l) => vec![&l.params],
            Layer::BiGru(l) => vec![&l.forward_params, &l.backward_params],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut LayerParams> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.params],
            Layer::BatchNorm2d(l) => vec![&mut l.params],
            Layer::Linear(l) => vec![&mut l.params],
            Layer::BiGru(l) => vec![&mut l.forward_params, &mut l.backward_params],
            _ => Vec::new(),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(l) => LayerSpec::Conv2d {
                in_channels: l.in_channels(),
                out_channels: l.out_channels(),
            },
            Layer::BatchNorm2d(l) => LayerSpec::BatchNorm2d { channels: l.channels() },
            Layer::LeakyRelu(l) => LayerSpec::LeakyRelu { slope: l.slope() },
            Layer::MaxPool2d(l) => {
                let (h, w) = l.window();
                LayerSpec::MaxPool2d { window: [h, w] }
            }
            Layer::GlobalMaxPool(_) => LayerSpec::GlobalMaxPool,
            Layer::Linear(l) => LayerSpec::Linear {
                in_features: l.in_features(),
                out_features: l.out_features(),
            },
            Layer::BiGru(l) => LayerSpec::BiGru {
                input_size: l.input_size(),
                units: l.units(),
            },
            Layer::Grl(g) => LayerSpec::Grl { lambda: g.lambda() },
            Layer::FrameFlatten(_) => LayerSpec::FrameFlatten,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_flatten_round_trips() {
        let mut ff = FrameFlatten::default();
        let x = Tensor::from_fn(&[2, 3, 4, 2], |i| i as f64);
        let y = ff.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 4, 6]);
        // sample 0, frame 1, channel 2, bin 1
        assert_eq!(y.data()[6 + 2 * 2 + 1], x.data()[((2 * 4) + 1) * 2 + 1]);
        assert_eq!(ff.backward(&y).unwrap(), x);
    }
}
