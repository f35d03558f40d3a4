use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamGrads, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adaptive moments without any weight decay.
    #[default]
    Adam,
    /// Adam with decoupled weight decay.
    Adamw,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected adaptive-moment update of every parameter that has a
/// gradient, skipping `frozen`. Decoupled decay, when enabled, shrinks the
/// weights before the moment term is applied.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut AdamState,
    cfg: &AdamConfig,
    frozen: &[ParamId],
) -> Result<()> {
    if let Some(id) = grads.first_non_finite() {
        let g = grads.get(id).unwrap_or_default();
        let bad = g.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::Numeric(format!(
            "non-finite gradient {} at {}[{bad}] on step {}",
            g[bad],
            store.name(id),
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = cfg.kind == OptimizerKind::Adamw && cfg.weight_decay != 0.0;
    for (id, g) in grads.iter() {
        if frozen.contains(&id) {
            continue;
        }
        let i = id.index();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let theta = store.get_mut(id).data_mut();
        for j in 0..theta.len() {
            if decay {
                theta[j] -= cfg.lr * cfg.weight_decay * theta[j];
            }
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
