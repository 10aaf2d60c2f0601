use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates and step count for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamWState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .ids()
            .map(|id| vec![T::zero(); params.get(id).len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One AdamW step with decoupled weight decay and bias correction.
///
/// Fails without touching `params` if any gradient is non-finite.
pub fn adamw_update<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Grads<T>,
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer state for {} parameters, gradients for {}, store holds {}",
            state.m.len(),
            grads.len(),
            params.len()
        )));
    }
    if !grads.all_finite() {
        let bad = params
            .ids()
            .find(|id| grads.get(*id).iter().any(|x| !x.is_finite()))
            .map(|id| params.name(id).to_string())
            .unwrap_or_default();
        return Err(Error::Numeric(format!("non-finite gradient in `{bad}`")));
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let lr = T::from_f64(cfg.lr);
    let decay = T::from_f64(1.0 - cfg.lr * cfg.weight_decay);
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_b2 = T::from_f64(1.0 - cfg.beta2);
    let inv_bc1 = T::from_f64(1.0 / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    let eps = T::from_f64(cfg.eps);

    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let g = grads.get(id);
        let m = &mut state.m[id.index()];
        let v = &mut state.v[id.index()];
        let theta = params.get_mut(id).data_mut();
        for k in 0..theta.len() {
            let gk = g[k];
            m[k] = b1 * m[k] + one_b1 * gk;
            v[k] = b2 * v[k] + one_b2 * gk * gk;
            let m_hat = m[k] * inv_bc1;
            let v_hat = v[k] * inv_bc2;
            theta[k] = theta[k] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Optimizer bundling configuration and state.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub state: AdamWState<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig) -> Self {
        Self {
            config,
            state: AdamWState::new(params),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) -> Result<()> {
        adamw_update(params, grads, &mut self.state, &self.config)
    }
}
