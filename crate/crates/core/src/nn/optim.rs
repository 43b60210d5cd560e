//! SGD with momentum and AdamW, with constant or warmup+cosine schedules.

use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum {
        momentum: f64,
    },
    Adamw {
        beta1: f64,
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub schedule: Schedule,
    #[serde(default)]
    pub warmup_steps: usize,
    /// Filled in by the training loop when it knows the step count.
    #[serde(default)]
    pub total_steps: usize,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum { momentum },
            learning_rate,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
            warmup_steps: 0,
            total_steps: 1,
        }
    }

    pub fn adamw(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            kind: OptimizerKind::Adamw { beta1, beta2, eps: default_eps() },
            learning_rate,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
            warmup_steps: 0,
            total_steps: 1,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_cosine(mut self, total_steps: usize, warmup_steps: usize) -> Self {
        self.schedule = Schedule::Cosine;
        self.total_steps = total_steps;
        self.warmup_steps = warmup_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be finite and nonnegative, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } if !unit(momentum) => {
                return bad(format!("momentum must lie in [0,1), got {momentum}"));
            }
            OptimizerKind::Adamw { beta1, beta2, eps } if !unit(beta1) || !unit(beta2) || !(eps > 0.0) => {
                return bad(format!("adamw needs beta1, beta2 in [0,1) and eps > 0, got {beta1}, {beta2}, {eps}"));
            }
            _ => {}
        }
        if self.schedule == Schedule::Cosine {
            if self.total_steps == 0 {
                return bad("cosine schedule requires total_steps > 0".into());
            }
            if self.warmup_steps >= self.total_steps {
                return bad(format!("warmup_steps {} must be below total_steps {}", self.warmup_steps, self.total_steps));
            }
        }
        Ok(())
    }

    /// Scheduled learning rate at `step`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        match self.schedule {
            Schedule::Constant => Ok(self.learning_rate),
            Schedule::Cosine => cosine_lr(step, self.total_steps, self.learning_rate, self.warmup_steps),
        }
    }
}

/// Linear warmup to `base_lr` over `warmup_steps`, then half-cosine decay to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize) -> Result<f64> {
    if step > total_steps {
        return Err(Error::OutOfRange(format!("step {step} exceeds total_steps {total_steps}")));
    }
    if warmup_steps > total_steps {
        return Err(Error::OutOfRange(format!("warmup_steps {warmup_steps} exceeds total_steps {total_steps}")));
    }
    if step < warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    if total_steps == warmup_steps {
        return Ok(base_lr);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd { velocity: ParamVector },
    Adam { m: ParamVector, v: ParamVector },
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, params: &ParamVector) -> Self {
        match config.kind {
            OptimizerKind::SgdMomentum { .. } => Self::Sgd { velocity: params.zeros_like() },
            OptimizerKind::Adamw { .. } => Self::Adam { m: params.zeros_like(), v: params.zeros_like() },
        }
    }
}

/// One update of `params` in place. `step_index` counts from zero.
///
/// SGD uses coupled weight decay (`g + wd * theta`), AdamW the decoupled form.
/// Returns the learning rate that was applied.
pub fn optimizer_step(state: &mut OptimizerState, params: &mut ParamVector, grad: &ParamVector, config: &OptimizerConfig, step_index: usize) -> Result<f64> {
    params.ensure_same_layout(grad)?;
    let lr = config.lr_at(step_index)?;
    let wd = config.weight_decay;
    match (state, config.kind) {
        (OptimizerState::Sgd { velocity }, OptimizerKind::SgdMomentum { momentum }) => {
            params.ensure_same_layout(velocity)?;
            let (p, g, v) = (params.values_mut(), grad.values(), velocity.values_mut());
            for i in 0..p.len() {
                let gi = if wd != 0.0 { g[i] + wd * p[i] } else { g[i] };
                v[i] = momentum * v[i] + gi;
                p[i] -= lr * v[i];
            }
        }
        (OptimizerState::Adam { m, v }, OptimizerKind::Adamw { beta1, beta2, eps }) => {
            params.ensure_same_layout(m)?;
            let t = (step_index + 1) as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let (p, g, m, v) = (params.values_mut(), grad.values(), m.values_mut(), v.values_mut());
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                if wd != 0.0 {
                    p[i] -= lr * wd * p[i];
                }
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        _ => return Err(Error::InvalidConfig("optimizer state does not match optimizer kind".into())),
    }
    Ok(lr)
}
