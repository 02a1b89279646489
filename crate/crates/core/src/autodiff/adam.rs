use crate::error::{Error, Result};

use super::params::{ParamGrads, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let shapes: Vec<_> = params.iter().map(|(_, _, t)| t.shape()).collect();
        AdamState {
            step: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }
}

/// One Adam update with decoupled weight decay. Parameters without a
/// gradient still decay and see their moments shrink.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (id, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::Numeric(format!("gradient of {}", params.name(id))));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let p = params.get_mut(id);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let g = grads.get(id);
        for k in 0..p.len() {
            let gk = g.map_or(0.0, |g| g.data()[k]);
            let mk = cfg.beta1 * m.data()[k] + (1.0 - cfg.beta1) * gk;
            let vk = cfg.beta2 * v.data()[k] + (1.0 - cfg.beta2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let update = (mk / bc1) / ((vk / bc2).sqrt() + cfg.eps);
            let x = &mut p.data_mut()[k];
            *x -= cfg.lr * (update + cfg.weight_decay * *x);
        }
    }
    Ok(())
}
