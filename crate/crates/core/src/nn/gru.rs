//! Bidirectional GRU with backpropagation through time.
//!
//! Each direction uses the reset-before-candidate cell
//!
//! ```text
//! r = sigmoid(W_r x + U_r h + b_r)
//! z = sigmoid(W_z x + U_z h + b_z)
//! n = tanh(W_n x + U_n (r * h) + b_n)
//! h' = z * h + (1 - z) * n
//! ```
//!
//! starting from a zero state. Per direction `weights` is `[3H, F + H]`
//! with gate rows ordered `r, z, n` and the input columns first; `biases`
//! is `[3H]`.

use rand::Rng;

use super::activation::sigmoid_scalar;
use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone)]
pub struct BiGru {
    pub forward_params: LayerParams,
    pub backward_params: LayerParams,
    input_size: usize,
    units: usize,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    input: Tensor,
    // [direction][sample]
    steps: [Vec<DirCache>; 2],
}

#[derive(Debug, Clone)]
struct DirCache {
    /// Hidden states `h_0..h_T` in processing order, `[(T + 1) * H]`.
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
}

impl BiGru {
    pub fn new(input_size: usize, units: usize, rng: &mut impl Rng) -> Self {
        let mut init = || {
            let bound = (6.0 / (input_size + units) as f64).sqrt();
            LayerParams::new(
                Tensor::from_fn(&[3 * units, input_size + units], |_| {
                    rng.random_range(-bound..bound)
                }),
                Tensor::zeros(&[3 * units]),
            )
        };
        let forward_params = init();
        let backward_params = init();
        BiGru {
            forward_params,
            backward_params,
            input_size,
            units,
            cache: None,
        }
    }

    pub fn from_params(forward_params: LayerParams, backward_params: LayerParams) -> Result<Self> {
        let ws = forward_params.weights.shape().to_vec();
        if ws.len() != 2 || ws[0] % 3 != 0 || ws[0] == 0 {
            return Err(Error::shape(format!("GRU weights must be [3H, F + H], got {ws:?}")));
        }
        let units = ws[0] / 3;
        if ws[1] <= units
            || backward_params.weights.shape() != ws.as_slice()
            || forward_params.biases.shape() != [3 * units]
            || backward_params.biases.shape() != [3 * units]
        {
            return Err(Error::shape("inconsistent GRU parameter shapes"));
        }
        Ok(BiGru {
            input_size: ws[1] - units,
            units,
            forward_params,
            backward_params,
            cache: None,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[2] != self.input_size || input[1] == 0 {
            return Err(Error::shape(format!(
                "BiGRU expects [N, T >= 1, {}], got {input:?}",
                self.input_size
            )));
        }
        Ok(vec![input[0], input[1], 2 * self.units])
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let (n, t, f) = (out_shape[0], out_shape[1], self.input_size);
        let h = self.units;
        let mut out = Tensor::zeros(&out_shape);
        let mut steps: [Vec<DirCache>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for (dir, params) in [&self.forward_params, &self.backward_params].into_iter().enumerate() {
            let (wx, wh) = split_weights(params, f, h);
            for b in 0..n {
                let xs = &x.data()[b * t * f..(b + 1) * t * f];
                let order: Vec<usize> = if dir == 0 { (0..t).collect() } else { (0..t).rev().collect() };
                let cache = run_direction(xs, &order, f, h, &wx, &wh, params.biases.data());
                for (k, &frame) in order.iter().enumerate() {
                    let dst = &mut out.data_mut()[(b * t + frame) * 2 * h + dir * h..][..h];
                    dst.copy_from_slice(&cache.h[(k + 1) * h..(k + 2) * h]);
                }
                steps[dir].push(cache);
            }
        }
        self.cache = Some(Cache {
            input: x.clone(),
            steps,
        });
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::shape("BiGRU backward before forward"))?;
        let x = &cache.input;
        let (n, t, f) = (x.shape()[0], x.shape()[1], self.input_size);
        let h = self.units;
        if dy.shape() != [n, t, 2 * h] {
            return Err(Error::shape("BiGRU gradient shape mismatch"));
        }
        let mut dx = Tensor::zeros(x.shape());
        for dir in 0..2 {
            let params = if dir == 0 { &mut self.forward_params } else { &mut self.backward_params };
            let (wx, wh) = split_weights(params, f, h);
            let mut dwx = vec![0.0; 3 * h * f];
            let mut dwh = vec![0.0; 3 * h * h];
            let mut db = vec![0.0; 3 * h];
            for b in 0..n {
                let c = &cache.steps[dir][b];
                let order: Vec<usize> = if dir == 0 { (0..t).collect() } else { (0..t).rev().collect() };
                // Pre-activation gradients in processing order, [T, 3H].
                let mut da = vec![0.0; t * 3 * h];
                let mut dh_next = vec![0.0; h];
                let mut rh = vec![0.0; h];
                let mut d_rh = vec![0.0; h];
                for k in (0..t).rev() {
                    let frame = order[k];
                    let hp = &c.h[k * h..(k + 1) * h];
                    let (r, z, nn) = (&c.r[k * h..][..h], &c.z[k * h..][..h], &c.n[k * h..][..h]);
                    let dyv = &dy.data()[(b * t + frame) * 2 * h + dir * h..][..h];
                    let dak = &mut da[k * 3 * h..(k + 1) * 3 * h];
                    let mut dh_prev = vec![0.0; h];
                    for j in 0..h {
                        let dh = dh_next[j] + dyv[j];
                        let dz = dh * (hp[j] - nn[j]);
                        let dn = dh * (1.0 - z[j]);
                        dh_prev[j] = dh * z[j];
                        dak[2 * h + j] = dn * (1.0 - nn[j] * nn[j]);
                        dak[h + j] = dz * z[j] * (1.0 - z[j]);
                        rh[j] = r[j] * hp[j];
                    }
                    // d(r*h) = U_n^T da_n
                    d_rh.fill(0.0);
                    for i in 0..h {
                        let g = dak[2 * h + i];
                        let row = &wh[(2 * h + i) * h..][..h];
                        for j in 0..h {
                            d_rh[j] += row[j] * g;
                        }
                        let grow = &mut dwh[(2 * h + i) * h..][..h];
                        for j in 0..h {
                            grow[j] += g * rh[j];
                        }
                    }
                    for j in 0..h {
                        dh_prev[j] += d_rh[j] * r[j];
                        dak[j] = d_rh[j] * hp[j] * r[j] * (1.0 - r[j]);
                    }
                    // reset and update gates see h_prev directly
                    for i in 0..2 * h {
                        let g = dak[i];
                        let row = &wh[i * h..][..h];
                        let grow = &mut dwh[i * h..][..h];
                        for j in 0..h {
                            dh_prev[j] += row[j] * g;
                            grow[j] += g * hp[j];
                        }
                    }
                    dh_next = dh_prev;
                }
                // Input-side gradients in one shot, rows reordered to processing order.
                let xs = ordered_rows(&x.data()[b * t * f..(b + 1) * t * f], &order, f);
                gemm(3 * h, t, f, 1.0, &da, true, &xs, false, 1.0, &mut dwx);
                for row in da.chunks(3 * h) {
                    for (acc, g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                let mut dxs = vec![0.0; t * f];
                gemm(t, 3 * h, f, 1.0, &da, false, &wx, false, 0.0, &mut dxs);
                for (k, &frame) in order.iter().enumerate() {
                    let dst = &mut dx.data_mut()[(b * t + frame) * f..][..f];
                    for (d, s) in dst.iter_mut().zip(&dxs[k * f..(k + 1) * f]) {
                        *d += s;
                    }
                }
            }
            let cols = f + h;
            let wg = params.weight_grad.data_mut();
            for i in 0..3 * h {
                for j in 0..f {
                    wg[i * cols + j] += dwx[i * f + j];
                }
                for j in 0..h {
                    wg[i * cols + f + j] += dwh[i * h + j];
                }
            }
            for (acc, g) in params.bias_grad.data_mut().iter_mut().zip(&db) {
                *acc += g;
            }
        }
        Ok(dx)
    }
}

fn split_weights(params: &LayerParams, f: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let cols = f + h;
    let w = params.weights.data();
    let mut wx = Vec::with_capacity(3 * h * f);
    let mut wh = Vec::with_capacity(3 * h * h);
    for i in 0..3 * h {
        wx.extend_from_slice(&w[i * cols..i * cols + f]);
        wh.extend_from_slice(&w[i * cols + f..(i + 1) * cols]);
    }
    (wx, wh)
}

fn ordered_rows(xs: &[f64], order: &[usize], f: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(order.len() * f);
    for &frame in order {
        out.extend_from_slice(&xs[frame * f..(frame + 1) * f]);
    }
    out
}

fn run_direction(
    xs: &[f64],
    order: &[usize],
    f: usize,
    h: usize,
    wx: &[f64],
    wh: &[f64],
    bias: &[f64],
) -> DirCache {
    let t = order.len();
    let ordered = ordered_rows(xs, order, f);
    // Input projections for every step: [T, 3H].
    let mut pre = vec![0.0; t * 3 * h];
    for row in pre.chunks_mut(3 * h) {
        row.copy_from_slice(bias);
    }
    gemm(t, f, 3 * h, 1.0, &ordered, false, wx, true, 1.0, &mut pre);

    let mut c = DirCache {
        h: vec![0.0; (t + 1) * h],
        r: vec![0.0; t * h],
        z: vec![0.0; t * h],
        n: vec![0.0; t * h],
    };
    let mut rh = vec![0.0; h];
    for k in 0..t {
        let a = &pre[k * 3 * h..(k + 1) * 3 * h];
        let (done, rest) = c.h.split_at_mut((k + 1) * h);
        let hp = &done[k * h..];
        let hn = &mut rest[..h];
        for j in 0..h {
            let ur: f64 = wh[j * h..(j + 1) * h].iter().zip(hp).map(|(w, v)| w * v).sum();
            let uz: f64 = wh[(h + j) * h..(h + j + 1) * h].iter().zip(hp).map(|(w, v)| w * v).sum();
            let r = sigmoid_scalar(a[j] + ur);
            c.r[k * h + j] = r;
            c.z[k * h + j] = sigmoid_scalar(a[h + j] + uz);
            rh[j] = r * hp[j];
        }
        for j in 0..h {
            let un: f64 = wh[(2 * h + j) * h..(2 * h + j + 1) * h]
                .iter()
                .zip(&rh)
                .map(|(w, v)| w * v)
                .sum();
            let nv = (a[2 * h + j] + un).tanh();
            let z = c.z[k * h + j];
            c.n[k * h + j] = nv;
            hn[j] = z * hp[j] + (1.0 - z) * nv;
        }
    }
    c
}
