//! 3x3 same-padded 2-D convolution (cross-correlation) over `[N, C, H, W]`.

use rand::Rng;

use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

const K: usize = 3;
const PAD: usize = 1;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub params: LayerParams,
    in_channels: usize,
    out_channels: usize,
    input: Option<Tensor>,
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * K * K;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weights = Tensor::from_fn(&[out_channels, in_channels, K, K], |_| {
            rng.random_range(-bound..bound)
        });
        Self::from_params(LayerParams::new(weights, Tensor::zeros(&[out_channels])))
            .expect("freshly built params are consistent")
    }

    pub fn from_params(params: LayerParams) -> Result<Self> {
        let ws = params.weights.shape();
        if ws.len() != 4 || ws[2] != K || ws[3] != K {
            return Err(Error::shape(format!("conv weights must be [O, I, 3, 3], got {ws:?}")));
        }
        if params.biases.shape() != [ws[0]] {
            return Err(Error::shape("conv bias length must equal output channels"));
        }
        Ok(Conv2d {
            in_channels: ws[1],
            out_channels: ws[0],
            params,
            input: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[1] != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects [N, {}, H, W], got {input:?}",
                self.in_channels
            )));
        }
        Ok(vec![input[0], self.out_channels, input[2], input[3]])
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let (n, h, w) = (out_shape[0], out_shape[2], out_shape[3]);
        let (ci, co) = (self.in_channels, self.out_channels);
        let hw = h * w;
        let mut out = Tensor::zeros(&out_shape);
        let mut cols = vec![0.0; ci * K * K * hw];
        let bias = self.params.biases.data();
        for b in 0..n {
            let sample = &x.data()[b * ci * hw..(b + 1) * ci * hw];
            im2col(sample, ci, h, w, &mut cols);
            let y = &mut out.data_mut()[b * co * hw..(b + 1) * co * hw];
            for (o, row) in y.chunks_mut(hw).enumerate() {
                row.fill(bias[o]);
            }
            gemm(co, ci * K * K, hw, 1.0, self.params.weights.data(), false, &cols, false, 1.0, y);
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::shape("conv backward before forward"))?;
        let out_shape = self.output_shape(x.shape())?;
        if dy.shape() != out_shape.as_slice() {
            return Err(Error::shape("conv output gradient shape mismatch"));
        }
        let (n, h, w) = (out_shape[0], out_shape[2], out_shape[3]);
        let (ci, co) = (self.in_channels, self.out_channels);
        let hw = h * w;
        let ckk = ci * K * K;
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![0.0; ckk * hw];
        let mut dcols = vec![0.0; ckk * hw];
        for b in 0..n {
            let sample = &x.data()[b * ci * hw..(b + 1) * ci * hw];
            let g = &dy.data()[b * co * hw..(b + 1) * co * hw];
            im2col(sample, ci, h, w, &mut cols);
            gemm(co, hw, ckk, 1.0, g, false, &cols, true, 1.0, self.params.weight_grad.data_mut());
            for (o, row) in g.chunks(hw).enumerate() {
                self.params.bias_grad.data_mut()[o] += row.iter().sum::<f64>();
            }
            gemm(ckk, co, hw, 1.0, self.params.weights.data(), true, g, false, 0.0, &mut dcols);
            col2im(&dcols, ci, h, w, &mut dx.data_mut()[b * ci * hw..(b + 1) * ci * hw]);
        }
        Ok(dx)
    }
}

/// Unfolds one `[C, H, W]` sample into `[C*9, H*W]` patches with zero padding.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((ch * K + ky) * K + kx) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + ky as isize - PAD as isize;
                    let dst = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let sj = j as isize + kx as isize - PAD as isize;
                        *d = if sj < 0 || sj >= w as isize { 0.0 } else { src[sj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((ch * K + ky) * K + kx) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + ky as isize - PAD as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let sj = j as isize + kx as isize - PAD as isize;
                        if sj >= 0 && sj < w as isize {
                            plane[si as usize * w + sj as usize] += row[i * w + j];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_with(weights: Vec<f64>, bias: f64) -> Conv2d {
        Conv2d::from_params(LayerParams::new(
            Tensor::new(vec![1, 1, 3, 3], weights).unwrap(),
            Tensor::new(vec![1], vec![bias]).unwrap(),
        ))
        .unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let mut conv = conv_with(k, 0.0);
        let x = Tensor::from_fn(&[1, 1, 4, 5], |i| i as f64 * 0.5 - 3.0);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_field() {
        let mut conv = conv_with(vec![1.0; 9], 0.5);
        let c = 2.0;
        let x = Tensor::filled(&[1, 1, 5, 5], c);
        let y = conv.forward(&x).unwrap();
        // Interior pixel (2, 2) sees all nine taps.
        assert_eq!(y.data()[2 * 5 + 2], 9.0 * c + 0.5);
        // Corner sees four.
        assert_eq!(y.data()[0], 4.0 * c + 0.5);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new(2, 3, &mut rng);
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        assert!(matches!(conv.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let conv = Conv2d::new(2, 3, &mut rng);
        let x = Tensor::from_fn(&[1, 2, 5, 6], |_| rng.random_range(-1.0..1.0));
        let probe = Tensor::from_fn(&[1, 3, 5, 6], |_| rng.random_range(-1.0..1.0));
        let loss = |conv: &mut Conv2d, x: &Tensor| -> f64 {
            let y = conv.forward(x).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };

        let mut analytic = conv.clone();
        loss(&mut analytic, &x);
        let dx = analytic.backward(&probe).unwrap();

        let err_x = finite_difference_check(
            |v| loss(&mut conv.clone(), &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap()),
            x.data(),
            dx.data(),
        )
        .unwrap();
        let err_w = finite_difference_check(
            |v| {
                let mut c = conv.clone();
                c.params.weights.data_mut().copy_from_slice(v);
                loss(&mut c, &x)
            },
            conv.params.weights.data(),
            analytic.params.weight_grad.data(),
        )
        .unwrap();
        let err_b = finite_difference_check(
            |v| {
                let mut c = conv.clone();
                c.params.biases.data_mut().copy_from_slice(v);
                loss(&mut c, &x)
            },
            conv.params.biases.data(),
            analytic.params.bias_grad.data(),
        )
        .unwrap();
        assert!(err_x < 1e-5 && err_w < 1e-5 && err_b < 1e-5, "{err_x} {err_w} {err_b}");
    }
}
