//! Rectified Adam.
//!
//! Moments follow Adam. The length of the approximated simple moving
//! average, `rho_t = rho_inf - 2 t b2^t / (1 - b2^t)`, decides the step: while
//! `rho_t <= 4` the variance of the adaptive learning rate is intractable and
//! the update is plain bias-corrected momentum; afterwards the adaptive step is
//! scaled by the rectification term `r_t`. The adaptive factor is
//! `sqrt(1 - b2^t) / (sqrt(v_t) + eps)`.

use serde::{Deserialize, Serialize};

use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RadamConfig {
    fn default() -> Self {
        RadamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Which branch of the update a step takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadamBranch {
    Momentum,
    Rectified,
}

impl RadamConfig {
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    pub fn rho(&self, step: u64) -> f64 {
        let b2t = self.beta2.powf(step as f64);
        self.rho_inf() - 2.0 * step as f64 * b2t / (1.0 - b2t)
    }

    pub fn branch(&self, step: u64) -> RadamBranch {
        if self.rho(step) > 4.0 {
            RadamBranch::Rectified
        } else {
            RadamBranch::Momentum
        }
    }

    fn rectification(&self, step: u64) -> f64 {
        let rho = self.rho(step);
        let inf = self.rho_inf();
        ((rho - 4.0) * (rho - 2.0) * inf / ((inf - 4.0) * (inf - 2.0) * rho)).sqrt()
    }
}

/// First and second moment buffers for one `LayerParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadamMoments {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

impl RadamMoments {
    pub fn for_params(p: &LayerParams) -> Self {
        RadamMoments {
            m_w: vec![0.0; p.weights.len()],
            v_w: vec![0.0; p.weights.len()],
            m_b: vec![0.0; p.biases.len()],
            v_b: vec![0.0; p.biases.len()],
        }
    }
}

/// Applies one update (1-based `step`) to `p` using its accumulated gradients.
pub fn radam_update(
    p: &mut LayerParams,
    moments: &mut RadamMoments,
    step: u64,
    cfg: &RadamConfig,
) -> Result<RadamBranch> {
    if step == 0 {
        return Err(Error::Config("RAdam steps are 1-based".into()));
    }
    if !p.grads_finite() {
        return Err(Error::Numerical("non-finite gradient reached the optimizer".into()));
    }
    let branch = cfg.branch(step);
    let t = step as f64;
    let bias1 = 1.0 - cfg.beta1.powf(t);
    let bias2 = 1.0 - cfg.beta2.powf(t);
    let rect = match branch {
        RadamBranch::Rectified => cfg.rectification(step),
        RadamBranch::Momentum => 0.0,
    };
    let apply = |theta: &mut Tensor, grad: &Tensor, m: &mut [f64], v: &mut [f64]| {
        for (((w, &g), m), v) in theta.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            *w -= match branch {
                RadamBranch::Rectified => cfg.lr * rect * m_hat * bias2.sqrt() / (v.sqrt() + cfg.eps),
                RadamBranch::Momentum => cfg.lr * m_hat,
            };
        }
    };
    apply(&mut p.weights, &p.weight_grad, &mut moments.m_w, &mut moments.v_w);
    apply(&mut p.biases, &p.bias_grad, &mut moments.m_b, &mut moments.v_b);
    if !(p.weights.all_finite() && p.biases.all_finite()) {
        return Err(Error::Numerical("parameters became non-finite".into()));
    }
    Ok(branch)
}

/// Optimizer state over an ordered list of parameter groups.
#[derive(Debug, Clone)]
pub struct Radam {
    cfg: RadamConfig,
    step: u64,
    moments: Vec<RadamMoments>,
}

impl Radam {
    pub fn new(cfg: RadamConfig) -> Self {
        Radam {
            cfg,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> &RadamConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every group; the group order must be the same on every call.
    pub fn step(&mut self, groups: Vec<&mut LayerParams>) -> Result<RadamBranch> {
        if self.moments.is_empty() {
            self.moments = groups.iter().map(|p| RadamMoments::for_params(p)).collect();
        }
        if self.moments.len() != groups.len() {
            return Err(Error::Config("parameter groups changed between optimizer steps".into()));
        }
        if let Some(bad) = groups.iter().position(|p| !p.grads_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient in parameter group {bad}")));
        }
        self.step += 1;
        let mut branch = self.cfg.branch(self.step);
        for (p, m) in groups.into_iter().zip(&mut self.moments) {
            branch = radam_update(p, m, self.step, &self.cfg)?;
        }
        Ok(branch)
    }
}
