//! Toy self-distillation pretraining with an EMA teacher and centering, plus a
//! supervised control path and linear probing.
//!
//! The student sees one augmented view, the teacher the other:
//! `s(x) = softmax(g(f(x)) / tau_s)` and `t(x) = softmax(g_t(f_t(x) - c) / tau_t)`.
//! The loss is `H(t(x2), s(x1))` averaged with its view swap. Only the student
//! is optimized; the teacher follows it by EMA and the center `c` tracks the
//! teacher's backbone outputs by EMA of batch means.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureRows, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{init_model, optimizer_step, softmax_t, train_loop, MlpSpec, ModelState, OptimizerConfig, OptimizerState, ParamVector, Plain, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub noise_std: f64,
    /// Probability that a coordinate is zeroed.
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { noise_std: 0.3, mask_prob: 0.1, seed: 0 }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidConfig(format!("noise_std must be finite and nonnegative, got {}", self.noise_std)));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::InvalidConfig(format!("mask_prob must lie in [0, 1), got {}", self.mask_prob)));
        }
        Ok(())
    }
}

/// Noisy, masked copy of `x`. Each `draw_index` reads its own ChaCha stream, so
/// views can be generated in any order or in parallel.
pub fn augment(x: &[f64], spec: &AugmentationSpec, draw_index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(draw_index);
    x.iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            let masked = spec.mask_prob > 0.0 && rng.random_bool(spec.mask_prob);
            if masked {
                0.0
            } else {
                v + spec.noise_std * z
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState {
    pub params: ParamVector,
    pub center: Vec<f64>,
    pub ema_momentum: f64,
    pub center_momentum: f64,
}

impl TeacherState {
    /// Teacher initialized as a copy of the student with a zero center.
    pub fn from_student(student: &ModelState, ema_momentum: f64, center_momentum: f64) -> Self {
        Self {
            params: student.params().clone(),
            center: vec![0.0; student.spec().backbone_output_dim()],
            ema_momentum,
            center_momentum,
        }
    }
}

/// Teacher probabilities at temperature `temperature` for input `x`.
pub fn teacher_forward(teacher: &TeacherState, spec: &MlpSpec, x: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if teacher.center.len() != spec.backbone_output_dim() {
        return Err(Error::DimensionMismatch { expected: spec.backbone_output_dim(), got: teacher.center.len() });
    }
    let model = ModelState::new(spec.clone(), teacher.params.clone())?;
    teacher_forward_model(&model, &teacher.center, x, temperature)
}

fn teacher_forward_model(model: &ModelState, center: &[f64], x: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let mut h = model.backbone_forward(x)?;
    h.iter_mut().zip(center).for_each(|(a, c)| *a -= c);
    Ok(softmax_t(&model.head_forward(&h)?, temperature))
}

/// `center <- c_m * center + (1 - c_m) * mean(batch)`.
pub fn update_center(center: &[f64], batch_outputs: &[Vec<f64>], center_momentum: f64) -> Result<Vec<f64>> {
    if batch_outputs.is_empty() {
        return Err(Error::Empty("center batch"));
    }
    let d = center.len();
    let mut mean = vec![0.0; d];
    for row in batch_outputs {
        if row.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: row.len() });
        }
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    let inv = 1.0 / batch_outputs.len() as f64;
    Ok(center.iter().zip(&mean).map(|(c, m)| center_momentum * c + (1.0 - center_momentum) * m * inv).collect())
}

/// `teacher <- m * teacher + (1 - m) * student`.
pub fn ema_update(teacher: &ParamVector, student: &ParamVector, m: f64) -> Result<ParamVector> {
    teacher.ensure_same_layout(student)?;
    let values = teacher.values().iter().zip(student.values()).map(|(t, s)| m * t + (1.0 - m) * s).collect();
    ParamVector::new(values, teacher.layout().clone())
}

/// Unlabeled inputs with the final teacher's soft labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelDataset {
    dim: usize,
    inputs: Vec<f64>,
    soft_labels: Vec<Vec<f64>>,
}

impl PseudoLabelDataset {
    pub fn soft_labels(&self) -> &[Vec<f64>] {
        &self.soft_labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        self.soft_labels.iter().map(|p| crate::nn::argmax(p)).collect()
    }
}

impl FeatureRows for PseudoLabelDataset {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.soft_labels.len()
    }
    fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DinoConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_student_temp")]
    pub student_temp: f64,
    #[serde(default = "default_teacher_temp")]
    pub teacher_temp: f64,
    #[serde(default = "default_ema")]
    pub ema_momentum: f64,
    #[serde(default = "default_center")]
    pub center_momentum: f64,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    /// Keep the head biases at their initial zeros. Centering acts on backbone
    /// features, so a trainable bias would add back an uncentered offset to
    /// every prototype logit; with a linear head and zero bias, feature
    /// centering equals centering the teacher logits.
    #[serde(default = "default_true")]
    pub freeze_head_bias: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_student_temp() -> f64 {
    0.1
}
fn default_teacher_temp() -> f64 {
    0.04
}
fn default_ema() -> f64 {
    0.99
}
fn default_center() -> f64 {
    0.9
}

impl DinoConfig {
    pub fn new(steps: usize, batch_size: usize, optimizer: OptimizerConfig, seed: u64) -> Self {
        Self {
            steps,
            batch_size,
            optimizer,
            student_temp: default_student_temp(),
            teacher_temp: default_teacher_temp(),
            ema_momentum: default_ema(),
            center_momentum: default_center(),
            augmentation: AugmentationSpec { seed, ..AugmentationSpec::default() },
            freeze_head_bias: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("student_temp", self.student_temp), ("teacher_temp", self.teacher_temp)] {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {t}")));
            }
        }
        for (name, m) in [("ema_momentum", self.ema_momentum), ("center_momentum", self.center_momentum)] {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {m}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        self.augmentation.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone)]
pub struct DinoOutput {
    /// Final student; its parameters are the reference `theta_ssl`.
    pub student: ModelState,
    pub teacher: TeacherState,
    pub pseudo_labels: PseudoLabelDataset,
    /// Symmetrized self-distillation loss of every step.
    pub losses: Vec<f64>,
}

/// Cross-entropy `H(t, softmax(z / tau))` and its gradient with respect to `z`.
fn distill_loss_grad(target: &[f64], logits: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let s = softmax_t(logits, tau);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max / tau + logits.iter().map(|z| ((z - max) / tau).exp()).sum::<f64>().ln();
    let loss = target.iter().zip(logits).map(|(t, z)| -t * (z / tau - lse)).sum();
    let grad = s.iter().zip(target).map(|(s, t)| (s - t) / tau).collect();
    (loss, grad)
}

/// Runs the student/teacher loop on `inputs` starting from `init_model(spec, config.seed)`.
pub fn dino_pretrain<R: FeatureRows + ?Sized>(inputs: &R, spec: &MlpSpec, config: &DinoConfig) -> Result<DinoOutput> {
    config.validate()?;
    let n = inputs.len();
    if n == 0 {
        return Err(Error::Empty("pretraining inputs"));
    }
    if inputs.dim() != spec.input_dim {
        return Err(Error::DimensionMismatch { expected: spec.input_dim, got: inputs.dim() });
    }
    let mut student = init_model(spec, config.seed)?;
    let mut teacher = TeacherState::from_student(&student, config.ema_momentum, config.center_momentum);
    let mut opt = config.optimizer.clone();
    opt.total_steps = config.steps.max(1);
    if opt.warmup_steps >= opt.total_steps {
        opt.warmup_steps = 0;
    }
    let mut state = OptimizerState::new(&opt, student.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d1d0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut losses = Vec::with_capacity(config.steps);
    let mut draw: u64 = 0;
    let head_biases: Vec<String> = spec.head_layers().map(MlpSpec::bias_name).collect();

    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(n) {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let teacher_model = student.with_params(teacher.params.clone())?;
        let mut grad = student.params().zeros_like();
        let mut loss = 0.0;
        let mut teacher_outputs = Vec::with_capacity(2 * batch.len());
        let scale = 0.5 / batch.len() as f64;
        for &i in &batch {
            let views = [augment(inputs.row(i), &config.augmentation, draw), augment(inputs.row(i), &config.augmentation, draw + 1)];
            draw += 2;
            for (s_view, t_view) in [(0, 1), (1, 0)] {
                let target = teacher_forward_model(&teacher_model, &teacher.center, &views[t_view], config.teacher_temp)?;
                let logits = student.forward_logits(&views[s_view])?;
                let (l, dz) = distill_loss_grad(&target, &logits, config.student_temp);
                loss += scale * l;
                let dz: Vec<f64> = dz.iter().map(|g| g * scale).collect();
                grad.axpy(1.0, &student.backprop(&views[s_view], &dz)?)?;
            }
            for v in &views {
                teacher_outputs.push(teacher_model.backbone_forward(v)?);
            }
        }
        losses.push(loss);
        let mut params = student.params().clone();
        if config.freeze_head_bias {
            for name in &head_biases {
                grad.segment_mut(name).expect("head bias exists").iter_mut().for_each(|g| *g = 0.0);
            }
        }
        optimizer_step(&mut state, &mut params, &grad, &opt, step)?;
        if config.freeze_head_bias {
            for name in &head_biases {
                let init = student.params().segment(name).expect("head bias exists").to_vec();
                params.segment_mut(name).expect("head bias exists").copy_from_slice(&init);
            }
        }
        student = student.with_params(params)?;
        teacher.params = ema_update(&teacher.params, student.params(), teacher.ema_momentum)?;
        teacher.center = update_center(&teacher.center, &teacher_outputs, teacher.center_momentum)?;
    }

    let teacher_model = student.with_params(teacher.params.clone())?;
    let mut flat = Vec::with_capacity(n * spec.input_dim);
    let mut soft = Vec::with_capacity(n);
    for i in 0..n {
        let x = inputs.row(i);
        flat.extend_from_slice(x);
        soft.push(teacher_forward_model(&teacher_model, &teacher.center, x, config.teacher_temp)?);
    }
    let pseudo_labels = PseudoLabelDataset { dim: spec.input_dim, inputs: flat, soft_labels: soft };
    Ok(DinoOutput { student, teacher, pseudo_labels, losses })
}

/// Plain NLL training from `init_model(spec, seed)`.
pub fn supervised_pretrain(data: &LabeledDataset, spec: &MlpSpec, config: &TrainConfig, seed: u64) -> Result<ModelState> {
    let mut model = init_model(spec, seed)?;
    train_loop(&mut model, data, config, seed, &[], &mut Plain)?;
    Ok(model)
}

/// Copies the backbone of `source` into a model with a fresh head for
/// `num_classes` classes, initialized from `seed`.
pub fn attach_head(source: &ModelState, num_classes: usize, seed: u64) -> Result<ModelState> {
    let spec = source.spec().with_num_classes(num_classes)?;
    let fresh = init_model(&spec, seed)?;
    let mut params = fresh.params().clone();
    for name in spec.backbone_segments() {
        let src = source.params().segment(&name).ok_or_else(|| Error::LayoutMismatch(format!("missing segment '{name}'")))?;
        params.segment_mut(&name).expect("same backbone").copy_from_slice(src);
    }
    fresh.with_params(params)
}

/// Trains a new head on top of the frozen backbone of `backbone`.
pub fn linear_probe(backbone: &ModelState, data: &LabeledDataset, config: &TrainConfig, seed: u64) -> Result<ModelState> {
    let mut model = attach_head(backbone, data.num_classes(), seed)?;
    let frozen = model.spec().backbone_segments();
    train_loop(&mut model, data, config, seed, &frozen, &mut Plain)?;
    Ok(model)
}
