//! Mean negative log-likelihood of a softmax classifier and its gradient.

use super::mlp::{log_softmax, softmax, ModelState, Tape};
use super::params::ParamVector;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};

fn check_batch(model: &ModelState, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if data.dim() != model.spec().input_dim {
        return Err(Error::DimensionMismatch { expected: model.spec().input_dim, got: data.dim() });
    }
    if data.num_classes() > model.spec().num_classes {
        return Err(Error::DimensionMismatch { expected: model.spec().num_classes, got: data.num_classes() });
    }
    Ok(())
}

/// Mean over the batch of `-log p(y_i | x_i)`.
pub fn nll_loss(model: &ModelState, batch: &LabeledDataset) -> Result<f64> {
    check_batch(model, batch)?;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let z = model.forward_logits(batch.row(i))?;
        total -= log_softmax(&z)[batch.label(i)];
    }
    Ok(total / batch.len() as f64)
}

pub fn grad_nll(model: &ModelState, batch: &LabeledDataset) -> Result<ParamVector> {
    let all: Vec<usize> = (0..batch.len()).collect();
    nll_and_grad_on(model, batch, &all).map(|(_, g)| g)
}

/// Loss and gradient over the rows `indices` of `data`.
pub fn nll_and_grad_on(model: &ModelState, data: &LabeledDataset, indices: &[usize]) -> Result<(f64, ParamVector)> {
    check_batch(model, data)?;
    if indices.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let scale = 1.0 / indices.len() as f64;
    let mut grad = model.params().zeros_like();
    let mut tape = Tape::default();
    let mut loss = 0.0;
    for &i in indices {
        let y = data.label(i);
        model.forward_tape(data.row(i), &mut tape);
        let logits = tape.logits();
        loss -= log_softmax(logits)[y];
        let mut d = softmax(logits);
        d[y] -= 1.0;
        model.backward(&tape, &d, scale, grad.values_mut());
    }
    Ok((loss * scale, grad))
}
