//! Experiment pipeline: pretrain, estimate the Fisher, fine-tune with a
//! penalty, evaluate. Sweeps sample hyperparameter combinations without
//! replacement and select by validation accuracy alone.

pub mod cli;

use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_task_pair_with, split, LabeledDataset, TaskPairSpec};
use crate::error::{Error, Result};
use crate::eval::{reverse_transfer_eval, top1_accuracy, worst_group_accuracy, FrontMode, ParetoPoint};
use crate::fim::{compute_fim_empirical, compute_fim_exact_sharded, compute_fim_sampled, DiagFim, FimMode, LabelSource};
use crate::nn::{train_loop, MlpSpec, ModelState, OptimizerConfig, TrainConfig};
use crate::regularization::{Integration, Penalty, PenaltyHooks, PenaltyKind};
use crate::ssl::{attach_head, dino_pretrain, linear_probe, supervised_pretrain, DinoConfig};

/// Salt mixed into the trial seed for the new head's initialization.
const HEAD_SEED_SALT: u64 = 0x4ead;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default)]
    pub task: TaskPairSpec,
    pub seed: u64,
    /// Train/validation/test fractions of the fine-tune task.
    #[serde(default = "default_finetune_split")]
    pub finetune_split: (f64, f64, f64),
    /// Held-out fraction of the pretrain task used for reverse transfer.
    #[serde(default = "default_pretrain_test")]
    pub pretrain_test_fraction: f64,
}

fn default_finetune_split() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}
fn default_pretrain_test() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PretrainConfig {
    Supervised {
        train: TrainConfig,
        seed: u64,
    },
    /// Self-distillation with `prototypes` output units, then a linear probe
    /// on the frozen backbone for the pretrain classes.
    Dino {
        dino: DinoConfig,
        prototypes: usize,
        probe: TrainConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimConfig {
    pub mode: FimMode,
    #[serde(default = "default_fim_samples")]
    pub n_samples: usize,
    #[serde(default = "default_shards")]
    pub shards: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_fim_samples() -> usize {
    10_000
}
fn default_shards() -> usize {
    1
}

impl Default for FimConfig {
    fn default() -> Self {
        Self { mode: FimMode::Exact, n_samples: default_fim_samples(), shards: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyName {
    Erm,
    L2,
    Fim,
    AdjustedFim,
}

impl PenaltyName {
    pub fn needs_fim(self) -> bool {
        matches!(self, Self::Fim | Self::AdjustedFim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub kind: PenaltyName,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Segment names; defaults to the backbone (fresh head) or every segment (reused head).
    #[serde(default)]
    pub scope: Option<Vec<String>>,
    #[serde(default)]
    pub integration: Integration,
}

impl PenaltyConfig {
    pub fn erm() -> Self {
        Self { kind: PenaltyName::Erm, lambda: 0.0, alpha: None, scope: None, integration: Integration::default() }
    }
}

/// Whether fine-tuning attaches a new head or keeps the pretrained one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    #[default]
    Fresh,
    Reuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Pretrain model; fine-tuning swaps the head for the fine-tune class count.
    pub model: MlpSpec,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub fim: FimConfig,
    pub penalty: PenaltyConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fine-tuning seed: head initialization and batch order.
    pub seed: u64,
    #[serde(default)]
    pub head: HeadMode,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.penalty.lambda >= 0.0) || !self.penalty.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda must be finite and nonnegative, got {}", self.penalty.lambda)));
        }
        if self.penalty.kind == PenaltyName::AdjustedFim && self.penalty.alpha.is_none() {
            return Err(Error::InvalidConfig("adjusted_fim needs alpha".into()));
        }
        if self.fim.n_samples == 0 || self.fim.shards == 0 {
            return Err(Error::InvalidConfig("fim n_samples and shards must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs, batch_size: self.batch_size, optimizer: self.optimizer.clone() }
    }

    pub fn from_json_reader(r: impl Read) -> Result<Self> {
        let cfg: Self = serde_json::from_reader(r)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits of the two tasks used by a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub pretrain_train: LabeledDataset,
    pub pretrain_test: LabeledDataset,
    pub finetune_train: LabeledDataset,
    pub finetune_val: LabeledDataset,
    pub finetune_test: LabeledDataset,
}

/// Everything a trial reads but never modifies.
#[derive(Debug, Clone)]
pub struct TrialArtifacts {
    /// Reference parameters with the pretrain classification head.
    pub reference: ModelState,
    pub fim: Option<DiagFim>,
    pub data: TaskData,
}

pub fn build_task_data(config: &DataConfig) -> Result<TaskData> {
    let (pre, ft) = gen_task_pair_with(&config.task, config.seed)?;
    let f = config.pretrain_test_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidConfig(format!("pretrain_test_fraction must lie in (0, 1), got {f}")));
    }
    // pretrain rows are i.i.d., so a prefix/suffix cut is an unbiased split
    let n_test = ((pre.len() as f64) * f).round() as usize;
    if n_test == 0 || n_test >= pre.len() {
        return Err(Error::InvalidConfig("pretrain split leaves an empty part".into()));
    }
    let cut = pre.len() - n_test;
    let pretrain_train = pre.select(&(0..cut).collect::<Vec<_>>(), format!("{}/train", pre.name()));
    let pretrain_test = pre.select(&(cut..pre.len()).collect::<Vec<_>>(), format!("{}/test", pre.name()));
    let (finetune_train, finetune_val, finetune_test) = split(&ft, config.finetune_split, config.seed ^ 0x7f4a)?;
    Ok(TaskData { pretrain_train, pretrain_test, finetune_train, finetune_val, finetune_test })
}

/// Reference model: supervised training, or self-distillation followed by a linear probe.
pub fn pretrain_reference(config: &RunConfig, data: &TaskData) -> Result<ModelState> {
    match &config.pretrain {
        PretrainConfig::Supervised { train, seed } => supervised_pretrain(&data.pretrain_train, &config.model, train, *seed),
        PretrainConfig::Dino { dino, prototypes, probe } => {
            let student_spec = config.model.with_num_classes(*prototypes)?;
            let out = dino_pretrain(&data.pretrain_train, &student_spec, dino)?;
            linear_probe(&out.student, &data.pretrain_train, probe, dino.seed ^ HEAD_SEED_SALT)
        }
    }
}

/// Diagonal Fisher of the reference model over the first `n_samples` pretrain rows.
pub fn compute_reference_fim(config: &FimConfig, reference: &ModelState, data: &TaskData) -> Result<DiagFim> {
    let n = config.n_samples.min(data.pretrain_train.len());
    let inputs = data.pretrain_train.head(n);
    match config.mode {
        FimMode::Exact => compute_fim_exact_sharded(reference, &inputs, config.shards),
        FimMode::EmpiricalSampled => compute_fim_sampled(reference, &inputs, config.seed),
        FimMode::EmpiricalLabels => compute_fim_empirical(reference, &inputs, LabelSource::DatasetLabels),
    }
}

/// Builds data, pretrains, and computes the Fisher when the penalty needs it.
pub fn prepare_artifacts(config: &RunConfig) -> Result<TrialArtifacts> {
    config.validate()?;
    let data = build_task_data(&config.data)?;
    let reference = pretrain_reference(config, &data)?;
    let fim = if config.penalty.kind.needs_fim() { Some(compute_reference_fim(&config.fim, &reference, &data)?) } else { None };
    Ok(TrialArtifacts { reference, fim, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config_id: usize,
    pub seed: u64,
    pub lr: f64,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub penalty_kind: PenaltyName,
    pub val_top1: f64,
    pub test_top1: f64,
    /// `None` when the fine-tune test set carries no group ids.
    pub test_wga: Option<f64>,
    pub reverse_top1: f64,
    /// Not written to reports, which must be byte-reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrialResult {
    /// Equality of everything except timing.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let bits = |o: Option<f64>| o.map(f64::to_bits);
        self.config_id == other.config_id
            && self.seed == other.seed
            && self.val_top1.to_bits() == other.val_top1.to_bits()
            && self.test_top1.to_bits() == other.test_top1.to_bits()
            && bits(self.test_wga) == bits(other.test_wga)
            && self.reverse_top1.to_bits() == other.reverse_top1.to_bits()
            && self.lr.to_bits() == other.lr.to_bits()
            && bits(self.lambda) == bits(other.lambda)
            && bits(self.alpha) == bits(other.alpha)
            && self.penalty_kind == other.penalty_kind
    }

    pub fn validation_record(&self) -> ValidationRecord {
        ValidationRecord { config_id: self.config_id, val_top1: self.val_top1 }
    }

    pub fn pareto_point(&self) -> ParetoPoint {
        ParetoPoint { x: self.test_top1, y: self.reverse_top1, config_id: self.config_id, seed: self.seed }
    }
}

/// Resolves the configured penalty against the reference and its Fisher.
pub fn build_penalty(config: &RunConfig, artifacts: &TrialArtifacts) -> Result<Penalty> {
    let pc = &config.penalty;
    let scope = match (&pc.scope, config.head) {
        (Some(s), _) => s.clone(),
        (None, HeadMode::Fresh) => config.model.backbone_segments(),
        (None, HeadMode::Reuse) => artifacts.reference.params().layout().segments().iter().map(|s| s.name.clone()).collect(),
    };
    let fim = || -> Result<DiagFim> {
        let f = artifacts.fim.clone().ok_or_else(|| Error::InvalidConfig(format!("penalty '{:?}' needs a Fisher artifact", pc.kind)))?;
        f.bind(&artifacts.reference)?;
        Ok(f)
    };
    let kind = match pc.kind {
        PenaltyName::Erm => PenaltyKind::Erm,
        PenaltyName::L2 => PenaltyKind::L2,
        PenaltyName::Fim => PenaltyKind::Fim(fim()?),
        PenaltyName::AdjustedFim => PenaltyKind::AdjustedFim(fim()?, pc.alpha.ok_or_else(|| Error::InvalidConfig("adjusted_fim needs alpha".into()))?),
    };
    Penalty::new(kind, pc.lambda, scope)
}

/// Starting point of fine-tuning.
pub fn finetune_init(config: &RunConfig, artifacts: &TrialArtifacts) -> Result<ModelState> {
    match config.head {
        HeadMode::Fresh => attach_head(&artifacts.reference, artifacts.data.finetune_train.num_classes(), config.seed ^ HEAD_SEED_SALT),
        HeadMode::Reuse => {
            if artifacts.data.finetune_train.num_classes() != artifacts.reference.spec().num_classes {
                return Err(Error::InvalidConfig("a reused head needs equal class counts on both tasks".into()));
            }
            Ok(artifacts.reference.clone())
        }
    }
}

/// Fine-tunes and returns the trained model.
pub fn finetune(config: &RunConfig, artifacts: &TrialArtifacts) -> Result<ModelState> {
    config.validate()?;
    if *artifacts.reference.spec() != config.model {
        return Err(Error::LayoutMismatch("reference model does not match the configured model spec".into()));
    }
    let penalty = build_penalty(config, artifacts)?;
    let mut model = finetune_init(config, artifacts)?;
    let bound = penalty.bind(artifacts.reference.params(), model.params().layout())?;
    let mut hooks = PenaltyHooks { penalty: &bound, integration: config.penalty.integration };
    train_loop(&mut model, &artifacts.data.finetune_train, &config.train_config(), config.seed, &[], &mut hooks)?;
    Ok(model)
}

/// Metrics of a fine-tuned model.
pub fn evaluate(config: &RunConfig, artifacts: &TrialArtifacts, model: &ModelState) -> Result<TrialResult> {
    let d = &artifacts.data;
    let test_wga = match d.finetune_test.groups() {
        Some(_) => Some(worst_group_accuracy(model, &d.finetune_test)?.worst_group_accuracy),
        None => None,
    };
    let erm = config.penalty.kind == PenaltyName::Erm;
    Ok(TrialResult {
        config_id: 0,
        seed: config.seed,
        lr: config.optimizer.learning_rate,
        lambda: (!erm).then_some(config.penalty.lambda),
        alpha: if config.penalty.kind == PenaltyName::AdjustedFim { config.penalty.alpha } else { None },
        penalty_kind: config.penalty.kind,
        val_top1: top1_accuracy(model, &d.finetune_val)?,
        test_top1: top1_accuracy(model, &d.finetune_test)?,
        test_wga,
        reverse_top1: reverse_transfer_eval(model, &artifacts.reference, &d.pretrain_test)?,
        wall_clock_secs: 0.0,
    })
}

/// One fine-tuning run with full evaluation; deterministic given its inputs.
pub fn run_trial(config: &RunConfig, artifacts: &TrialArtifacts) -> Result<TrialResult> {
    let start = Instant::now();
    let model = finetune(config, artifacts)?;
    let mut result = evaluate(config, artifacts, &model)?;
    result.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Candidate lists; an empty list keeps the base config's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default)]
    pub learning_rate: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub batch_size: Vec<usize>,
    #[serde(default)]
    pub weight_decay: Vec<f64>,
    pub num_samples: usize,
    pub replicates: usize,
    pub master_seed: u64,
}

impl SweepSpec {
    /// Default grid for `kind`: learning rates {1e-3, 1e-2, 1e-1} crossed with
    /// λ ∈ {1e0..1e4} for Fisher penalties or {1e-3..1e1} for L2, α = 1e-3 for
    /// the adjusted Fisher. Every combination is run once.
    pub fn default_grid(kind: PenaltyName, master_seed: u64) -> SweepSpec {
        let decades = |lo: i32, hi: i32| (lo..=hi).map(|e| 10f64.powi(e)).collect::<Vec<_>>();
        let lambda = match kind {
            PenaltyName::Erm => vec![],
            PenaltyName::L2 => decades(-3, 1),
            PenaltyName::Fim | PenaltyName::AdjustedFim => decades(0, 4),
        };
        let alpha = if kind == PenaltyName::AdjustedFim { vec![1e-3] } else { vec![] };
        let mut spec = SweepSpec { learning_rate: decades(-3, -1), lambda, alpha, batch_size: vec![], weight_decay: vec![], num_samples: 0, replicates: 1, master_seed };
        spec.num_samples = spec.grid_size();
        spec
    }

    fn radices(&self) -> [usize; 5] {
        [self.learning_rate.len(), self.lambda.len(), self.alpha.len(), self.batch_size.len(), self.weight_decay.len()].map(|n| n.max(1))
    }

    /// Size of the cartesian grid.
    pub fn grid_size(&self) -> usize {
        self.radices().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 || self.replicates == 0 {
            return Err(Error::InvalidConfig("num_samples and replicates must be positive".into()));
        }
        if self.num_samples > self.grid_size() {
            return Err(Error::InvalidConfig(format!("num_samples {} exceeds the {} available combinations", self.num_samples, self.grid_size())));
        }
        Ok(())
    }

    /// Config for grid index `id`; the last hyperparameter varies fastest.
    pub fn combination(&self, base: &RunConfig, id: usize) -> Result<RunConfig> {
        if id >= self.grid_size() {
            return Err(Error::OutOfRange(format!("config_id {id} outside a grid of {}", self.grid_size())));
        }
        let r = self.radices();
        let mut digits = [0usize; 5];
        let mut rest = id;
        for k in (0..5).rev() {
            digits[k] = rest % r[k];
            rest /= r[k];
        }
        let mut cfg = base.clone();
        if let Some(&v) = self.learning_rate.get(digits[0]) {
            cfg.optimizer.learning_rate = v;
        }
        if let Some(&v) = self.lambda.get(digits[1]) {
            cfg.penalty.lambda = v;
        }
        if let Some(&v) = self.alpha.get(digits[2]) {
            cfg.penalty.alpha = Some(v);
        }
        if let Some(&v) = self.batch_size.get(digits[3]) {
            cfg.batch_size = v;
        }
        if let Some(&v) = self.weight_decay.get(digits[4]) {
            cfg.optimizer.weight_decay = v;
        }
        Ok(cfg)
    }

    /// The `num_samples` grid indices drawn by a seeded shuffle.
    pub fn sampled_ids(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let mut ids: Vec<usize> = (0..self.grid_size()).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(self.master_seed));
        ids.truncate(self.num_samples);
        Ok(ids)
    }

    pub fn replicate_seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|r| self.master_seed.wrapping_add(r)).collect()
    }
}

/// Runs every sampled combination with every replicate seed. Results are
/// sorted by `(config_id, seed)` regardless of execution order.
pub fn random_sweep(spec: &SweepSpec, base: &RunConfig, artifacts: &TrialArtifacts) -> Result<Vec<TrialResult>> {
    let ids = spec.sampled_ids()?;
    let seeds = spec.replicate_seeds();
    let jobs: Vec<(usize, u64)> = ids.iter().flat_map(|&id| seeds.iter().map(move |&s| (id, s))).collect();
    let mut results = jobs
        .par_iter()
        .map(|&(id, seed)| {
            let mut cfg = spec.combination(base, id)?;
            cfg.seed = seed;
            let mut r = run_trial(&cfg, artifacts)?;
            r.config_id = id;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|r| (r.config_id, r.seed));
    Ok(results)
}

/// The only view of a trial that model selection may read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRecord {
    pub config_id: usize,
    pub val_top1: f64,
}

fn mean_by_config(records: &[ValidationRecord]) -> Vec<(usize, f64)> {
    let mut ids: Vec<usize> = records.iter().map(|r| r.config_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let mut v: Vec<f64> = records.iter().filter(|r| r.config_id == id).map(|r| r.val_top1).collect();
            // fixed summation order so ties do not depend on record order
            v.sort_by(f64::total_cmp);
            (id, aggregate(&v).expect("every id has a record").0)
        })
        .collect()
}

/// Config with the highest mean validation top-1; ties go to the lowest id.
pub fn select_by_validation(records: &[ValidationRecord]) -> Result<usize> {
    let means = mean_by_config(records);
    let mut best: Option<(usize, f64)> = None;
    for (id, m) in means {
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((id, m));
        }
    }
    best.map(|(id, _)| id).ok_or(Error::Empty("selection records"))
}

/// Sample mean and standard deviation (n - 1 denominator, 0 for one value).
///
/// Welford's update keeps identical replicates at exactly zero spread.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("replicates"));
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &v) in values.iter().enumerate() {
        let d = v - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (v - mean);
    }
    let std = if values.len() == 1 { 0.0 } else { (m2 / (values.len() - 1) as f64).sqrt() };
    Ok((mean, std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected_config_id: usize,
    pub val_top1_mean: f64,
    pub test_wga_mean: Option<f64>,
    pub test_wga_std: Option<f64>,
}

/// Selects by validation top-1 and summarizes the chosen config's replicates.
pub fn select_and_summarize(results: &[TrialResult]) -> Result<Selection> {
    let records: Vec<ValidationRecord> = results.iter().map(TrialResult::validation_record).collect();
    let id = select_by_validation(&records)?;
    let chosen: Vec<&TrialResult> = results.iter().filter(|r| r.config_id == id).collect();
    let (val_top1_mean, _) = aggregate(&chosen.iter().map(|r| r.val_top1).collect::<Vec<_>>())?;
    let wga: Option<Vec<f64>> = chosen.iter().map(|r| r.test_wga).collect();
    let (test_wga_mean, test_wga_std) = match wga {
        Some(v) => {
            let (m, s) = aggregate(&v)?;
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Ok(Selection { selected_config_id: id, val_top1_mean, test_wga_mean, test_wga_std })
}

pub fn write_results_csv(results: &[TrialResult], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in results {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_results_csv(r: impl Read) -> Result<Vec<TrialResult>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrontRow {
    mode: FrontMode,
    config_id: usize,
    seed: u64,
    x: f64,
    y: f64,
}

pub fn write_front_csv(fronts: &[(FrontMode, Vec<ParetoPoint>)], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for (mode, pts) in fronts {
        for p in pts {
            wtr.serialize(FrontRow { mode: *mode, config_id: p.config_id, seed: p.seed, x: p.x, y: p.y })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(config_id: usize, val_top1: f64) -> ValidationRecord {
        ValidationRecord { config_id, val_top1 }
    }

    #[test]
    fn aggregate_hand_values() {
        assert_eq!(aggregate(&[0.7, 0.7, 0.7]).unwrap(), (0.7, 0.0));
        let (m, s) = aggregate(&[0.6, 0.8]).unwrap();
        assert!((m - 0.7).abs() < 1e-15);
        assert!((s - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(aggregate(&[0.42]).unwrap(), (0.42, 0.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn selection_rule() {
        assert_eq!(select_by_validation(&[rec(4, 0.5)]).unwrap(), 4);
        assert_eq!(select_by_validation(&[rec(0, 0.91), rec(1, 0.93)]).unwrap(), 1);
        assert_eq!(select_by_validation(&[rec(3, 0.9), rec(1, 0.9)]).unwrap(), 1);
        assert_eq!(select_by_validation(&[rec(0, 0.8), rec(0, 1.0), rec(1, 0.85)]).unwrap(), 0);
        assert!(select_by_validation(&[]).is_err());
    }

    fn spec(k: usize) -> SweepSpec {
        SweepSpec {
            learning_rate: vec![1e-3, 1e-2, 1e-1],
            lambda: vec![1.0, 10.0],
            alpha: vec![],
            batch_size: vec![16, 32, 64],
            weight_decay: vec![],
            num_samples: k,
            replicates: 2,
            master_seed: 11,
        }
    }

    #[test]
    fn exhaustive_sampling_covers_grid() {
        let mut ids = spec(18).sampled_ids().unwrap();
        ids.sort_unstable();
        assert_eq!(ids, (0..18).collect::<Vec<_>>());
        assert!(spec(19).sampled_ids().is_err());
        assert_eq!(spec(5).sampled_ids().unwrap(), spec(5).sampled_ids().unwrap());
    }

    #[test]
    fn replicate_seeds_follow_master() {
        assert_eq!(spec(1).replicate_seeds(), vec![11, 12]);
    }

    #[test]
    fn default_grids() {
        let fim = SweepSpec::default_grid(PenaltyName::AdjustedFim, 3);
        assert_eq!(fim.grid_size(), 15);
        assert_eq!(fim.num_samples, 15);
        assert_eq!(fim.lambda, vec![1.0, 10.0, 100.0, 1000.0, 10000.0]);
        assert_eq!(fim.alpha, vec![1e-3]);
        assert_eq!(SweepSpec::default_grid(PenaltyName::L2, 3).lambda[0], 1e-3);
        assert_eq!(SweepSpec::default_grid(PenaltyName::Erm, 3).grid_size(), 3);
    }
}
