use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moment estimates, one buffer per store entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update of every trainable parameter from the
/// gradients currently held in `store`. Fails without touching anything if
/// any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, cfg: &Adam) -> Result<(), AutodiffError> {
    if state.m.len() != store.len() {
        *state = AdamState { step: state.step, ..AdamState::new(store) };
    }
    if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.iter().any(|g| !g.is_finite())) {
        return Err(AutodiffError::NonFiniteGradient(p.name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if !p.trainable {
            continue;
        }
        for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *w -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
