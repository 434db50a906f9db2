use alloc::format;

use super::store::ParamStore;
use crate::math;
use crate::{Error, Result};

/// AdamW hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.max_grad_norm.is_none_or(|m| m > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// One decoupled-weight-decay Adam step over every non-frozen entry.
///
/// Consumes the gradients written by the last fill; calling it twice without
/// a backward pass in between fails with [`Error::StaleGradients`].
pub fn adamw_update(store: &mut ParamStore, cfg: &OptimConfig) -> Result<()> {
    cfg.validate()?;
    if !store.take_fresh() {
        return Err(Error::StaleGradients);
    }
    let clip = match cfg.max_grad_norm {
        Some(max) => {
            let sq: f64 = store
                .entries()
                .iter()
                .filter(|e| !e.frozen)
                .flat_map(|e| e.grad.iter())
                .map(|g| g * g)
                .sum();
            let norm = math::sqrt(sq);
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    for e in store.entries_mut().iter_mut().filter(|e| !e.frozen) {
        e.step += 1;
        let t = e.step as i32;
        let bc1 = 1.0 - math::powi(cfg.beta1, t);
        let bc2 = 1.0 - math::powi(cfg.beta2, t);
        for i in 0..e.value.len() {
            let g = e.grad[i] * clip;
            let mut theta = e.value[i] as f64;
            theta -= cfg.learning_rate * cfg.weight_decay * theta;
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = e.m[i] / bc1;
            let vhat = e.v[i] / bc2;
            theta -= cfg.learning_rate * mhat / (math::sqrt(vhat) + cfg.epsilon);
            e.value[i] = theta as f32;
        }
    }
    Ok(())
}
