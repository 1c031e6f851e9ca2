//! Max pooling over `[N, C, H, W]` and global max pooling to `[N, C]`.
//!
//! Windows do not overlap. Trailing rows or columns that do not fill a whole
//! window are dropped. Gradients flow to the first maximal element in scan
//! order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    window: (usize, usize),
    input_shape: Option<Vec<usize>>,
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(window_h: usize, window_w: usize) -> Self {
        assert!(window_h > 0 && window_w > 0, "pool window must be positive");
        MaxPool2d {
            window: (window_h, window_w),
            input_shape: None,
            argmax: Vec::new(),
        }
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 {
            return Err(Error::shape(format!("max pool expects [N, C, H, W], got {input:?}")));
        }
        let (ph, pw) = self.window;
        if ph > input[2] || pw > input[3] {
            return Err(Error::shape(format!(
                "pool window {ph}x{pw} larger than input {}x{}",
                input[2], input[3]
            )));
        }
        Ok(vec![input[0], input[1], input[2] / ph, input[3] / pw])
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let (oh, ow) = (out_shape[2], out_shape[3]);
        let (ph, pw) = self.window;
        let planes = out_shape[0] * out_shape[1];
        let mut out = Tensor::zeros(&out_shape);
        self.argmax.clear();
        self.argmax.reserve(out.len());
        for p in 0..planes {
            let plane = &x.data()[p * h * w..(p + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = (i * ph) * w + j * pw;
                    for di in 0..ph {
                        for dj in 0..pw {
                            let idx = (i * ph + di) * w + j * pw + dj;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[(p * oh + i) * ow + j] = best;
                    self.argmax.push(p * h * w + best_idx);
                }
            }
        }
        self.input_shape = Some(x.shape().to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::shape("max pool backward before forward"))?;
        if dy.len() != self.argmax.len() {
            return Err(Error::shape("max pool gradient shape mismatch"));
        }
        let mut dx = Tensor::zeros(shape);
        for (&idx, &g) in self.argmax.iter().zip(dy.data()) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }
}

/// Max over every spatial position of each channel.
#[derive(Debug, Clone, Default)]
pub struct GlobalMaxPool {
    input_shape: Option<Vec<usize>>,
    argmax: Vec<usize>,
}

impl GlobalMaxPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[2] * input[3] == 0 {
            return Err(Error::shape(format!(
                "global max pool expects non-empty [N, C, H, W], got {input:?}"
            )));
        }
        Ok(vec![input[0], input[1]])
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let hw = x.shape()[2] * x.shape()[3];
        self.argmax.clear();
        let data = x
            .data()
            .chunks(hw)
            .enumerate()
            .map(|(p, plane)| {
                let mut best = 0;
                for (i, &v) in plane.iter().enumerate() {
                    if v > plane[best] {
                        best = i;
                    }
                }
                self.argmax.push(p * hw + best);
                plane[best]
            })
            .collect();
        self.input_shape = Some(x.shape().to_vec());
        Tensor::new(out_shape, data)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::shape("global max pool backward before forward"))?;
        if dy.len() != self.argmax.len() {
            return Err(Error::shape("global max pool gradient shape mismatch"));
        }
        let mut dx = Tensor::zeros(shape);
        for (&idx, &g) in self.argmax.iter().zip(dy.data()) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }
}
