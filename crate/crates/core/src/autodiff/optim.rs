//! Adam with bias correction and the warmup/cooldown learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Optimizer state: step counter and per-parameter first/second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every parameter in `params` using `grads` and rate `lr`.
    ///
    /// ```text
    /// m_t = β1·m + (1−β1)·g        v_t = β2·v + (1−β2)·g²
    /// m̂ = m_t/(1−β1^t)            v̂ = v_t/(1−β2^t)
    /// w ← w − lr·m̂/(√v̂ + ε)
    /// ```
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
        }
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(mom) = self.moments.get(name) {
                if mom.m.len() != p.numel() {
                    return Err(Error::ShapeMismatch {
                        op: "adam_step",
                        lhs: p.shape().to_vec(),
                        rhs: vec![mom.m.len()],
                    });
                }
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let g = &grads[&name];
            let p = params.get_mut(&name).expect("present");
            let mom = self.moments.entry(name).or_insert_with(|| Moments {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            });
            for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut mom.m).zip(&mut mom.v) {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Learning-rate policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    WarmupCooldown { warmup_frac: f64, cooldown_factor: f64 },
}

impl LrSchedule {
    pub fn lr(&self, step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
        match *self {
            LrSchedule::Constant => {
                if step > total_steps {
                    return Err(Error::InvalidArgument(format!("step {step} beyond {total_steps}")));
                }
                Ok(base_lr)
            }
            LrSchedule::WarmupCooldown {
                warmup_frac,
                cooldown_factor,
            } => lr_at(step, total_steps, base_lr, warmup_frac, cooldown_factor),
        }
    }
}

/// Linear warmup to `base_lr` over `warmup_frac` of training, then linear
/// cooldown whose slope is `cooldown_factor · base_lr / (remaining steps)`,
/// floored at `base_lr / 100`.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64, cooldown_factor: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&warmup_frac) || cooldown_factor < 0.0 || !cooldown_factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid schedule: warmup_frac {warmup_frac}, cooldown_factor {cooldown_factor}"
        )));
    }
    if total_steps == 0 || step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} outside 0..={total_steps}")));
    }
    let total = total_steps as f64;
    let s = step as f64;
    let warmup = warmup_frac * total;
    if s < warmup {
        return Ok(base_lr * s / warmup);
    }
    let slope = cooldown_factor * base_lr / (total - warmup);
    Ok((base_lr - slope * (s - warmup)).max(base_lr / 100.0))
}
