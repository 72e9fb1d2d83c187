use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::params::{Grads, ParamStore};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store
            .ids()
            .map(|p| {
                let (r, c) = store.get(p).shape();
                Mat::zeros(r, c)
            })
            .collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update with learning rate `lr`. Parameters without a gradient
    /// still decay and advance their moments with a zero gradient.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) -> Result<(), NnError> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(NnError::ShapeMismatch(
                "optimizer state does not match parameters".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        let norm = grads.global_norm();
        let clip = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for p in store.ids() {
            let i = p.index();
            let g = grads.get(p);
            let value = store.get_mut(p);
            if let Some(g) = g {
                if g.shape() != value.shape() {
                    return Err(NnError::ShapeMismatch(format!("gradient {i} shape")));
                }
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..value.data.len() {
                let gj = g.map_or(0.0, |g| g.data[j]) * clip;
                m.data[j] = beta1 * m.data[j] + (1.0 - beta1) * gj;
                v.data[j] = beta2 * v.data[j] + (1.0 - beta2) * gj * gj;
                let x = &mut value.data[j];
                *x -= lr * weight_decay * *x;
                *x -= lr * (m.data[j] / bc1) / ((v.data[j] / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warm-up to `base` over `warmup` steps, then inverse square-root
/// decay. Steps count from 1.
pub fn lr_at_step(base: f64, warmup: u64, step: u64) -> f64 {
    let step = step.max(1);
    if warmup == 0 {
        base
    } else if step <= warmup {
        base * step as f64 / warmup as f64
    } else {
        base * (warmup as f64 / step as f64).sqrt()
    }
}
