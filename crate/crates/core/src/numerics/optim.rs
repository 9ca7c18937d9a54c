//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Real};
use super::mlp::ParamTensor;
use crate::error::{MaflError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T: Real = f32> {
    pub step_count: u64,
    pub m: Matrix<T>,
    pub v: Matrix<T>,
}

impl<T: Real> AdamWState<T> {
    pub fn for_param(p: &ParamTensor<T>) -> Self {
        let (r, c) = p.value.shape();
        Self {
            step_count: 0,
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        }
    }
}

/// One AdamW update of every parameter in `params`.
///
/// `w ← w − lr·m̂/(√v̂ + eps) − lr·wd·w`, where the decay term uses the
/// pre-update weight. All parameters are validated before any is modified, so
/// a rejected call leaves every tensor and state untouched.
pub fn adamw_step<T: Real>(
    params: &mut [&mut ParamTensor<T>],
    states: &mut [AdamWState<T>],
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != states.len() {
        return Err(MaflError::dim(
            "adamw_step states",
            params.len(),
            states.len(),
        ));
    }
    for (i, (p, s)) in params.iter().zip(states.iter()).enumerate() {
        if !p.trainable {
            return Err(MaflError::Contract(format!(
                "parameter {i} is frozen and must not be passed to the optimizer"
            )));
        }
        if p.value.shape() != s.m.shape() || p.grad.shape() != p.value.shape() {
            return Err(MaflError::dim(
                format!("adamw_step parameter {i}"),
                format!("{:?}", s.m.shape()),
                format!("{:?}", p.value.shape()),
            ));
        }
        p.grad.ensure_finite(&format!("gradient of parameter {i}"))?;
    }

    for (p, s) in params.iter_mut().zip(states.iter_mut()) {
        s.step_count += 1;
        let t = s.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let w = p.value.as_mut_slice();
        let g = p.grad.as_slice();
        let m = s.m.as_mut_slice();
        let v = s.v.as_mut_slice();
        for j in 0..w.len() {
            let gj = g[j].as_f64();
            let mj = cfg.beta1 * m[j].as_f64() + (1.0 - cfg.beta1) * gj;
            let vj = cfg.beta2 * v[j].as_f64() + (1.0 - cfg.beta2) * gj * gj;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            let old = w[j].as_f64();
            let new = old - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) - cfg.lr * cfg.weight_decay * old;
            w[j] = T::from_f64(new);
        }
    }
    Ok(())
}

/// AdamW bound to one parameter group, with a learning rate that a scheduler
/// may change between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Real = f32> {
    pub config: AdamWConfig,
    pub states: Vec<AdamWState<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new<'a>(config: AdamWConfig, params: impl IntoIterator<Item = &'a ParamTensor<T>>) -> Self {
        Self {
            config,
            states: params.into_iter().map(AdamWState::for_param).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut ParamTensor<T>>) -> Result<()> {
        let mut params: Vec<&mut ParamTensor<T>> = params.into_iter().collect();
        adamw_step(&mut params, &mut self.states, &self.config)
    }
}
