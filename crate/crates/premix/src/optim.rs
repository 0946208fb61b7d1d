//! Layer-adaptive SGD with momentum for pre-training, Adam for fine-tuning,
//! and the two learning-rate schedules (linear warmup into cosine decay,
//! and stepwise decay).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AggregatorParams, ParamGroup};
use crate::tensor::Tensor;

/// Learning rate per parameter group.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupLr {
    pub weights: f64,
    pub bias_norm: f64,
}

/// Schedule parameters shared by both phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub base_lr: GroupLr,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    /// Final cosine value is `base / final_factor`.
    pub final_factor: f64,
    pub step_size: usize,
    pub step_gamma: f64,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::invalid("warmup_epochs must not exceed total_epochs"));
        }
        if self.final_factor <= 0.0 || self.step_gamma <= 0.0 {
            return Err(Error::invalid("decay factors must be positive"));
        }
        if self.batch_size == 0 || self.step_size == 0 {
            return Err(Error::invalid("batch_size and step_size must be positive"));
        }
        Ok(())
    }
}

/// Linear ramp from zero over the warmup epochs to the batch-scaled base
/// rate (`base * batch/256`), then cosine decay down to `base/final_factor`
/// at the last epoch.
pub fn warmup_cosine_lr(spec: &ScheduleSpec, epoch: usize) -> Result<GroupLr> {
    spec.validate()?;
    if epoch >= spec.total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} out of range (total {})",
            spec.total_epochs
        )));
    }
    let factor = |base: f64| {
        let base = base * spec.batch_size as f64 / 256.0;
        if epoch < spec.warmup_epochs {
            return base * epoch as f64 / spec.warmup_epochs as f64;
        }
        let end = base / spec.final_factor;
        let span = (spec.total_epochs - 1).saturating_sub(spec.warmup_epochs);
        let t = if span == 0 {
            1.0
        } else {
            (epoch - spec.warmup_epochs) as f64 / span as f64
        };
        end + (base - end) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    };
    Ok(GroupLr {
        weights: factor(spec.base_lr.weights),
        bias_norm: factor(spec.base_lr.bias_norm),
    })
}

/// Stepwise decay: `base * gamma^floor(epoch / step_size)`.
pub fn step_lr(spec: &ScheduleSpec, epoch: usize) -> f64 {
    spec.base_lr.weights * spec.step_gamma.powi((epoch / spec.step_size) as i32)
}

/// Momentum state of the layer-adaptive optimizer.
#[derive(Default)]
pub struct LarsState {
    momentum: HashMap<String, Tensor>,
    pub step: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LarsConfig {
    pub weight_decay: f64,
    pub momentum: f64,
    pub trust_coeff: f64,
}

impl Default for LarsConfig {
    fn default() -> Self {
        LarsConfig {
            weight_decay: 1e-6,
            momentum: 0.9,
            trust_coeff: 0.001,
        }
    }
}

/// One layer-adaptive step. Weight tensors get decay and the trust-ratio
/// local rate; biases and normalization parameters get neither.
pub fn lars_step(
    params: &mut AggregatorParams,
    grads: &[(String, Tensor)],
    state: &mut LarsState,
    lr: GroupLr,
    cfg: &LarsConfig,
) -> Result<()> {
    for (name, grad) in grads {
        let group = params
            .entries()
            .iter()
            .find(|e| &e.name == name)
            .map(|e| e.group)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
        if group == ParamGroup::Buffer {
            continue;
        }
        let w = params.get(name);
        if grad.shape() != w.shape() {
            return Err(Error::shape(format!("gradient shape mismatch for {name}")));
        }
        let adapt = group == ParamGroup::Weights;
        let g_eff = if adapt && cfg.weight_decay != 0.0 {
            grad.zip(w, |g, wv| g + cfg.weight_decay * wv)
        } else {
            grad.clone()
        };
        let local_lr = if adapt {
            let wn = w.norm();
            let gn = g_eff.norm();
            if wn > 0.0 && gn > 0.0 {
                cfg.trust_coeff * wn / gn
            } else {
                1.0
            }
        } else {
            1.0
        };
        let rate = if adapt { lr.weights } else { lr.bias_norm };
        let m = state
            .momentum
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(w.shape()));
        *m = m.zip(&g_eff, |mv, gv| cfg.momentum * mv + local_lr * rate * gv);
        let update = m.clone();
        let w = params.get_mut(name);
        *w = w.zip(&update, |wv, uv| wv - uv);
    }
    state.step += 1;
    Ok(())
}

/// First/second moment state for Adam.
#[derive(Default)]
pub struct AdamState {
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
    pub step: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Standard bias-corrected Adam; weight decay enters as an additive L2
/// term on the gradient.
pub fn adam_step(
    params: &mut AggregatorParams,
    grads: &[(String, Tensor)],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, grad) in grads {
        let group = params
            .entries()
            .iter()
            .find(|e| &e.name == name)
            .map(|e| e.group)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
        if group == ParamGroup::Buffer {
            continue;
        }
        let w = params.get(name);
        if grad.shape() != w.shape() {
            return Err(Error::shape(format!("gradient shape mismatch for {name}")));
        }
        let g_eff = if cfg.weight_decay != 0.0 {
            grad.zip(w, |g, wv| g + cfg.weight_decay * wv)
        } else {
            grad.clone()
        };
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(w.shape()));
        *m = m.zip(&g_eff, |mv, gv| cfg.beta1 * mv + (1.0 - cfg.beta1) * gv);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(w.shape()));
        *v = v.zip(&g_eff, |vv, gv| cfg.beta2 * vv + (1.0 - cfg.beta2) * gv * gv);
        let m_hat = state.m[name].scale(1.0 / bc1);
        let v_hat = state.v[name].scale(1.0 / bc2);
        let w = params.get_mut(name);
        *w = Tensor::new(
            w.shape().to_vec(),
            w.data()
                .iter()
                .zip(m_hat.data())
                .zip(v_hat.data())
                .map(|((wv, mv), vv)| wv - lr * mv / (vv.sqrt() + cfg.eps))
                .collect(),
        );
    }
    Ok(())
}
