//! Minibatch training loop shared by pretraining, probing and fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::nll_and_grad_on;
use super::mlp::ModelState;
use super::optim::{optimizer_step, OptimizerConfig, OptimizerState};
use super::params::ParamVector;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size.max(1))
    }

    /// Optimizer config with `total_steps` set for a dataset of `n` rows.
    pub fn resolved_optimizer(&self, n: usize) -> OptimizerConfig {
        let mut opt = self.optimizer.clone();
        opt.total_steps = (self.epochs * self.steps_per_epoch(n)).max(1);
        if opt.warmup_steps >= opt.total_steps {
            opt.warmup_steps = 0;
        }
        opt
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Per-step callbacks of [`train_loop`].
pub trait StepHooks {
    /// Loss and gradient on the minibatch `indices`.
    fn loss_grad(&mut self, model: &ModelState, data: &LabeledDataset, indices: &[usize]) -> Result<(f64, ParamVector)> {
        nll_and_grad_on(model, data, indices)
    }

    /// Runs after each optimizer update with the learning rate just applied.
    fn after_step(&mut self, _params: &mut ParamVector, _lr: f64) -> Result<()> {
        Ok(())
    }
}

/// Plain NLL training.
pub struct Plain;

impl StepHooks for Plain {}

/// Trains `model` in place and returns the minibatch loss of every step.
///
/// Rows are reshuffled each epoch from a ChaCha stream seeded with `seed`; the
/// trajectory is a pure function of `(model, data, config, seed)`. Segments
/// listed in `frozen` are restored after every update.
pub fn train_loop<H: StepHooks>(model: &mut ModelState, data: &LabeledDataset, config: &TrainConfig, seed: u64, frozen: &[String], hooks: &mut H) -> Result<Vec<f64>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let opt = config.resolved_optimizer(data.len());
    let mut state = OptimizerState::new(&opt, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let frozen_values: Vec<(String, Vec<f64>)> = frozen
        .iter()
        .map(|name| {
            model
                .params()
                .segment(name)
                .map(|s| (name.clone(), s.to_vec()))
                .ok_or_else(|| Error::LayoutMismatch(format!("unknown frozen segment '{name}'")))
        })
        .collect::<Result<_>>()?;
    let mut losses = Vec::with_capacity(opt.total_steps);
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = hooks.loss_grad(model, data, batch)?;
            losses.push(loss);
            let params = model.params_mut();
            let lr = optimizer_step(&mut state, params, &grad, &opt, step)?;
            hooks.after_step(params, lr)?;
            for (name, vals) in &frozen_values {
                params.segment_mut(name).expect("checked above").copy_from_slice(vals);
            }
            step += 1;
        }
    }
    Ok(losses)
}
