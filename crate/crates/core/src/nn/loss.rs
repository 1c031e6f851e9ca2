//! Scene cross-entropy, frame-wise event binary cross-entropy and their
//! weighted multitask combination.
//!
//! The `*_from_logits` variants fuse the output nonlinearity with the loss so
//! the gradient with respect to the logits is exactly `prediction - target`.

use serde::{Deserialize, Serialize};

use super::activation::{sigmoid_scalar, softmax};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Weights of the scene and event terms in the multitask loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.0001,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config("alpha and beta cannot both be zero".into()));
        }
        Ok(())
    }
}

pub fn mtl_loss(l_scene: f64, l_event: f64, w: LossWeights) -> f64 {
    w.alpha * l_scene + w.beta * l_event
}

fn check_one_hot(s: &[f64]) -> Result<()> {
    let ones = s.iter().filter(|&&v| v == 1.0).count();
    let zeros = s.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != s.len() {
        return Err(Error::Label(format!("scene target is not one-hot: {s:?}")));
    }
    Ok(())
}

fn check_binary(z: &[f64]) -> Result<()> {
    match z.iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(Error::Label(format!("event target {v} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// `-sum_n s_n ln(y_n)` with `y` clamped to `[PROB_EPS, 1]`.
pub fn scene_ce_loss(y: &[f64], s: &[f64]) -> Result<f64> {
    if y.len() != s.len() {
        return Err(Error::shape("scene prediction and target lengths differ"));
    }
    check_one_hot(s)?;
    Ok(-y
        .iter()
        .zip(s)
        .map(|(&p, &t)| t * p.clamp(PROB_EPS, 1.0).ln())
        .sum::<f64>())
}

/// `-sum_{t,m} [z ln y + (1 - z) ln(1 - y)]` with `y` clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn event_bce_loss(y: &Tensor, z: &Tensor) -> Result<f64> {
    if y.shape() != z.shape() {
        return Err(Error::shape(format!(
            "event prediction {:?} and target {:?} differ",
            y.shape(),
            z.shape()
        )));
    }
    check_binary(z.data())?;
    Ok(-y
        .data()
        .iter()
        .zip(z.data())
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum::<f64>())
}

/// Softmax cross-entropy for one logit vector; returns `(loss, y - s)`.
pub fn scene_ce_from_logits(logits: &[f64], s: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != s.len() {
        return Err(Error::shape("scene logits and target lengths differ"));
    }
    check_one_hot(s)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let loss = -logits.iter().zip(s).map(|(&v, &t)| t * (v - lse)).sum::<f64>();
    let grad = softmax(logits).into_iter().zip(s).map(|(p, &t)| p - t).collect();
    Ok((loss, grad))
}

/// Sigmoid binary cross-entropy summed over all cells; returns `(loss, y - z)`.
pub fn event_bce_from_logits(logits: &[f64], z: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != z.len() {
        return Err(Error::shape("event logits and target lengths differ"));
    }
    check_binary(z)?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for (&x, &t) in logits.iter().zip(z) {
        // softplus(x) - t x, written to avoid overflow
        loss += x.max(0.0) - t * x + (-x.abs()).exp().ln_1p();
        grad.push(sigmoid_scalar(x) - t);
    }
    Ok((loss, grad))
}

/// Mean per-clip scene loss over a `[N, S]` batch and its logit gradient.
pub fn scene_loss_batch(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != targets.shape() || logits.ndim() != 2 {
        return Err(Error::shape(format!(
            "scene logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    let (n, s) = (logits.shape()[0], logits.shape()[1]);
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * s);
    for b in 0..n {
        let (l, g) = scene_ce_from_logits(&logits.data()[b * s..][..s], &targets.data()[b * s..][..s])?;
        total += l;
        grad.extend(g.into_iter().map(|v| v / n as f64));
    }
    Ok((total / n as f64, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Mean per-clip event loss over a `[N, T, M]` batch and its logit gradient.
pub fn event_loss_batch(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != targets.shape() || logits.ndim() != 3 {
        return Err(Error::shape(format!(
            "event logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    let n = logits.shape()[0] as f64;
    let (loss, grad) = event_bce_from_logits(logits.data(), targets.data())?;
    Ok((
        loss / n,
        Tensor::new(logits.shape().to_vec(), grad.into_iter().map(|v| v / n).collect())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::sigmoid;
    use crate::nn::gradcheck::finite_difference_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_scene_prediction_has_zero_loss() {
        assert_eq!(scene_ce_loss(&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn scene_loss_hand_value() {
        let l = scene_ce_loss(&[0.1, 0.7, 0.1, 0.1], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((l + 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn scene_target_must_be_one_hot() {
        assert!(matches!(scene_ce_loss(&[0.5, 0.5], &[1.0, 1.0]), Err(Error::Label(_))));
        assert!(matches!(scene_ce_loss(&[0.5, 0.5], &[0.5, 0.5]), Err(Error::Label(_))));
    }

    #[test]
    fn bce_single_cell_hand_value() {
        let y = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        let z = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert!((event_bce_loss(&y, &z).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_near_zero() {
        let z = Tensor::from_fn(&[4, 5], |i| (i % 3 == 0) as u8 as f64);
        let l = event_bce_loss(&z, &z).unwrap();
        assert!(l >= 0.0 && l <= 20.0 * 2.0 * PROB_EPS, "{l}");
    }

    #[test]
    fn bce_rejects_soft_targets() {
        let y = Tensor::filled(&[1, 2], 0.5);
        let z = Tensor::new(vec![1, 2], vec![1.0, 0.3]).unwrap();
        assert!(matches!(event_bce_loss(&y, &z), Err(Error::Label(_))));
    }

    #[test]
    fn mtl_loss_with_default_weights() {
        let l = mtl_loss(2.0, 3.0, LossWeights::default());
        assert!((l - 3.0002).abs() < 1e-12);
        let w = LossWeights::new(0.0, 2.0).unwrap();
        assert_eq!(mtl_loss(5.0, 3.0, w), 6.0);
        assert_eq!(mtl_loss(1.5, 2.5, LossWeights::new(1.0, 1.0).unwrap()), 4.0);
        assert!(LossWeights::new(0.0, 0.0).is_err());
    }

    #[test]
    fn fused_scene_loss_agrees_with_probability_form_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = [0.0, 0.0, 1.0, 0.0];
        let (l, g) = scene_ce_from_logits(&logits, &s).unwrap();
        assert!((l - scene_ce_loss(&softmax(&logits), &s).unwrap()).abs() < 1e-12);
        let err =
            finite_difference_check(|v| scene_ce_from_logits(v, &s).unwrap().0, &logits, &g).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn fused_event_loss_agrees_with_probability_form_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = Tensor::from_fn(&[5, 3], |_| rng.random_range(-3.0..3.0));
        let z = Tensor::from_fn(&[5, 3], |_| rng.random_bool(0.4) as u8 as f64);
        let (l, g) = event_bce_from_logits(logits.data(), z.data()).unwrap();
        assert!((l - event_bce_loss(&sigmoid(&logits), &z).unwrap()).abs() < 1e-9);
        let err = finite_difference_check(
            |v| event_bce_from_logits(v, z.data()).unwrap().0,
            logits.data(),
            &g,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
