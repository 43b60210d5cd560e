//! Dense feed-forward networks split into a backbone and a head.
//!
//! Layer `i` owns the segments `layer{i}.weight` (row-major, `out x in`) and
//! `layer{i}.bias`. The activation follows every layer except the last, so the
//! backbone output is the activated output of layer `backbone_depth - 1` (or
//! the raw input when `backbone_depth == 0`).

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Layout, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
    /// Number of leading layers that form the backbone.
    pub backbone_depth: usize,
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerSlot {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize, activation: Activation, backbone_depth: usize) -> Result<Self> {
        let spec = Self { input_dim, hidden_dims, num_classes, activation, backbone_depth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::InvalidSpec(format!("hidden layer {i} has zero width")));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("num_classes must be at least 2".into()));
        }
        if self.backbone_depth >= self.num_layers() {
            return Err(Error::InvalidSpec(format!(
                "backbone_depth {} must leave the final layer in the head ({} layers)",
                self.backbone_depth,
                self.num_layers()
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// `(in, out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_layers());
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.num_classes));
        dims
    }

    pub fn backbone_output_dim(&self) -> usize {
        if self.backbone_depth == 0 {
            self.input_dim
        } else {
            self.hidden_dims[self.backbone_depth - 1]
        }
    }

    pub fn weight_name(layer: usize) -> String {
        format!("layer{layer}.weight")
    }

    pub fn bias_name(layer: usize) -> String {
        format!("layer{layer}.bias")
    }

    /// Canonical layout: weights then bias, layer by layer.
    pub fn layout(&self) -> Layout {
        let parts = self.layer_dims().into_iter().enumerate().flat_map(|(i, (fan_in, fan_out))| {
            [(Self::weight_name(i), fan_in * fan_out), (Self::bias_name(i), fan_out)]
        });
        Layout::from_lengths(parts).expect("canonical layout is contiguous")
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn backbone_layers(&self) -> Range<usize> {
        0..self.backbone_depth
    }

    pub fn head_layers(&self) -> Range<usize> {
        self.backbone_depth..self.num_layers()
    }

    /// Segment names belonging to the backbone.
    pub fn backbone_segments(&self) -> Vec<String> {
        self.backbone_layers().flat_map(|i| [Self::weight_name(i), Self::bias_name(i)]).collect()
    }

    pub fn head_segments(&self) -> Vec<String> {
        self.head_layers().flat_map(|i| [Self::weight_name(i), Self::bias_name(i)]).collect()
    }

    /// Same architecture with a different number of output classes.
    pub fn with_num_classes(&self, num_classes: usize) -> Result<Self> {
        let mut s = self.clone();
        s.num_classes = num_classes;
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn slots(&self) -> Vec<LayerSlot> {
        let mut off = 0;
        self.layer_dims()
            .into_iter()
            .map(|(in_dim, out_dim)| {
                let slot = LayerSlot { in_dim, out_dim, w_off: off, b_off: off + in_dim * out_dim };
                off += in_dim * out_dim + out_dim;
                slot
            })
            .collect()
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// `inputs[l]` is the input to layer `l`; `inputs[L]` is the logits.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn logits(&self) -> &[f64] {
        self.inputs.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn layer_input(&self, layer: usize) -> &[f64] {
        &self.inputs[layer]
    }
}

#[inline]
fn dense(slot: &LayerSlot, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let w = &params[slot.w_off..slot.w_off + slot.in_dim * slot.out_dim];
    let b = &params[slot.b_off..slot.b_off + slot.out_dim];
    for o in 0..slot.out_dim {
        let row = &w[o * slot.in_dim..(o + 1) * slot.in_dim];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(input) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

/// Forward pass over a subrange of layers with a raw parameter slice.
pub(crate) fn forward_layers(spec: &MlpSpec, slots: &[LayerSlot], params: &[f64], input: &[f64], layers: Range<usize>) -> Vec<f64> {
    let last = spec.num_layers() - 1;
    let mut cur = input.to_vec();
    let mut next = Vec::new();
    for l in layers {
        dense(&slots[l], params, &cur, &mut next);
        if l != last {
            for v in next.iter_mut() {
                *v = spec.activation.apply(*v);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Full forward pass recording the tape.
pub(crate) fn forward_tape(spec: &MlpSpec, slots: &[LayerSlot], params: &[f64], x: &[f64], tape: &mut Tape) {
    let n = spec.num_layers();
    tape.inputs.resize_with(n + 1, Vec::new);
    tape.pre.resize_with(n, Vec::new);
    tape.inputs[0].clear();
    tape.inputs[0].extend_from_slice(x);
    for l in 0..n {
        let (head, tail) = tape.inputs.split_at_mut(l + 1);
        let mut pre = std::mem::take(&mut tape.pre[l]);
        dense(&slots[l], params, &head[l], &mut pre);
        let out = &mut tail[0];
        out.clear();
        if l + 1 == n {
            out.extend_from_slice(&pre);
        } else {
            out.extend(pre.iter().map(|&z| spec.activation.apply(z)));
        }
        tape.pre[l] = pre;
    }
}

/// Accumulates `scale * d(loss)/d(params)` into `grad` given `d(loss)/d(logits)`.
pub(crate) fn backward_tape(spec: &MlpSpec, slots: &[LayerSlot], params: &[f64], tape: &Tape, dlogits: &[f64], scale: f64, grad: &mut [f64]) {
    let n = spec.num_layers();
    let mut delta: Vec<f64> = dlogits.to_vec();
    let mut prev = Vec::new();
    for l in (0..n).rev() {
        let slot = &slots[l];
        let input = &tape.inputs[l];
        for o in 0..slot.out_dim {
            let d = scale * delta[o];
            if d != 0.0 {
                let row = &mut grad[slot.w_off + o * slot.in_dim..slot.w_off + (o + 1) * slot.in_dim];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            grad[slot.b_off + o] += d;
        }
        if l == 0 {
            break;
        }
        prev.clear();
        prev.resize(slot.in_dim, 0.0);
        let w = &params[slot.w_off..slot.w_off + slot.in_dim * slot.out_dim];
        for o in 0..slot.out_dim {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            for (p, wi) in prev.iter_mut().zip(&w[o * slot.in_dim..(o + 1) * slot.in_dim]) {
                *p += wi * d;
            }
        }
        let z = &tape.pre[l - 1];
        let a = &tape.inputs[l];
        for i in 0..slot.in_dim {
            prev[i] *= spec.activation.derivative(z[i], a[i]);
        }
        std::mem::swap(&mut delta, &mut prev);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    spec: MlpSpec,
    params: ParamVector,
    slots: Arc<[LayerSlot]>,
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
pub fn init_model(spec: &MlpSpec, seed: u64) -> Result<ModelState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = Arc::new(spec.layout());
    let mut params = ParamVector::zeros(layout);
    let slots = spec.slots();
    let values = params.values_mut();
    for slot in &slots {
        let bound = 1.0 / (slot.in_dim as f64).sqrt();
        for w in &mut values[slot.w_off..slot.w_off + slot.in_dim * slot.out_dim] {
            *w = rng.random_range(-bound..bound);
        }
    }
    ModelState::new(spec.clone(), params)
}

impl ModelState {
    pub fn new(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        let canonical = spec.layout();
        if **params.layout() != canonical {
            return Err(Error::LayoutMismatch("parameters do not follow the canonical layout of the spec".into()));
        }
        let slots = spec.slots().into();
        Ok(Self { spec, params, slots })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    /// Replaces the parameters, keeping the spec.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        self.params.ensure_same_layout(&params)?;
        Ok(Self { spec: self.spec.clone(), params, slots: self.slots.clone() })
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch { expected: self.spec.input_dim, got: x.len() });
        }
        Ok(())
    }

    pub fn forward_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(forward_layers(&self.spec, &self.slots, self.params.values(), x, 0..self.spec.num_layers()))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward_logits(x)?))
    }

    /// Backbone features `f(x)`.
    pub fn backbone_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(forward_layers(&self.spec, &self.slots, self.params.values(), x, self.spec.backbone_layers()))
    }

    /// Head `g(h)` applied to backbone features.
    pub fn head_forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let d = self.spec.backbone_output_dim();
        if features.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: features.len() });
        }
        Ok(forward_layers(&self.spec, &self.slots, self.params.values(), features, self.spec.head_layers()))
    }

    pub(crate) fn forward_tape(&self, x: &[f64], tape: &mut Tape) {
        forward_tape(&self.spec, &self.slots, self.params.values(), x, tape);
    }

    pub(crate) fn backward(&self, tape: &Tape, dlogits: &[f64], scale: f64, grad: &mut [f64]) {
        backward_tape(&self.spec, &self.slots, self.params.values(), tape, dlogits, scale, grad);
    }

    /// Gradient of a scalar loss given its derivative with respect to the logits at `x`.
    pub fn backprop(&self, x: &[f64], dlogits: &[f64]) -> Result<ParamVector> {
        self.check_input(x)?;
        if dlogits.len() != self.spec.num_classes {
            return Err(Error::DimensionMismatch { expected: self.spec.num_classes, got: dlogits.len() });
        }
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape);
        let mut grad = self.params.zeros_like();
        self.backward(&tape, dlogits, 1.0, grad.values_mut());
        Ok(grad)
    }

    /// Index of the largest logit; ties go to the lowest class index.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward_logits(x)?))
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Temperature-scaled softmax, `softmax(z / t)`.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    softmax(&scaled)
}

/// `log softmax(z)_c` for every c.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
