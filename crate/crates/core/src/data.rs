//! Synthetic datasets: spurious-correlation tasks with group ids, Gaussian
//! cluster tasks, and pretrain/fine-tune pairs built from them.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance between the two core class means, in units of `noise_std`.
pub const CORE_SEPARATION: f64 = 2.5;
/// Spurious means sit twice as far apart as the core means.
pub const SPURIOUS_SEPARATION: f64 = 2.0 * CORE_SEPARATION;

/// Anything that can hand out feature rows of a fixed width.
pub trait FeatureRows {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn row(&self, i: usize) -> &[f64];
}

impl FeatureRows for LabeledDataset {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.labels.len()
    }
    fn row(&self, i: usize) -> &[f64] {
        LabeledDataset::row(self, i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    groups: Option<Vec<usize>>,
    num_groups: usize,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, features: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize, groups: Option<Vec<usize>>, num_groups: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch { expected: labels.len() * dim, got: features.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::OutOfRange(format!("label {bad} >= num_classes {num_classes}")));
        }
        if let Some(g) = &groups {
            if g.len() != labels.len() {
                return Err(Error::DimensionMismatch { expected: labels.len(), got: g.len() });
            }
            if let Some(&bad) = g.iter().find(|&&id| id >= num_groups) {
                return Err(Error::OutOfRange(format!("group {bad} >= num_groups {num_groups}")));
            }
        }
        Ok(Self { name: name.into(), dim, features, labels, num_classes, groups, num_groups })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn group_counts(&self) -> Option<Vec<usize>> {
        self.groups.as_ref().map(|g| {
            let mut counts = vec![0; self.num_groups];
            for &id in g {
                counts[id] += 1;
            }
            counts
        })
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            name: name.into(),
            dim: self.dim,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            groups: self.groups.as_ref().map(|g| indices.iter().map(|&i| g[i]).collect()),
            num_groups: self.num_groups,
        }
    }

    /// First `n` rows (all of them when `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, self.name.clone())
    }

    /// Same rows with a different label set.
    pub fn relabel(&self, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        Self::new(name, self.features.clone(), self.dim, labels, num_classes, self.groups.clone(), self.num_groups)
    }

    /// Same rows with features replaced by `f(row)`; the output width may differ.
    pub fn map_features(&self, name: impl Into<String>, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut features = Vec::new();
        let mut dim = 0;
        for row in self.rows() {
            let out = f(row);
            dim = out.len();
            features.extend(out);
        }
        Self::new(name, features, dim, self.labels.clone(), self.num_classes, self.groups.clone(), self.num_groups)
    }

    /// Adds `offset` to every row.
    pub fn translate(&self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: offset.len() });
        }
        self.map_features(format!("{}+shift", self.name), |r| r.iter().zip(offset).map(|(a, b)| a + b).collect())
    }

    /// Permutes feature columns: output column `j` is input column `perm[j]`.
    pub fn permute_features(&self, perm: &[usize], name: impl Into<String>) -> Result<Self> {
        let mut seen = vec![false; self.dim];
        if perm.len() != self.dim || perm.iter().any(|&p| p >= self.dim || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidConfig("feature permutation is not a permutation of the columns".into()));
        }
        self.map_features(name, |r| perm.iter().map(|&p| r[p]).collect())
    }

    /// Writes `feature_0..feature_{d-1},label,group`; the group cell is empty
    /// when the dataset has no groups.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("feature_{j}")).collect();
        header.push("label".into());
        header.push("group".into());
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[i].to_string());
            rec.push(self.groups.as_ref().map(|g| g[i].to_string()).unwrap_or_default());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousSpec {
    pub n: usize,
    pub d_core: usize,
    pub d_spurious: usize,
    /// Probability that the spurious attribute agrees with the label.
    pub correlation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SpuriousSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d_core == 0 || self.d_spurious == 0 {
            return Err(Error::InvalidConfig("n, d_core and d_spurious must be positive".into()));
        }
        if !(0.5..=1.0).contains(&self.correlation) {
            return Err(Error::InvalidConfig(format!("correlation must lie in [0.5, 1], got {}", self.correlation)));
        }
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidConfig(format!("noise_std must be positive, got {}", self.noise_std)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d_core + self.d_spurious
    }
}

/// Group id for label `y` and spurious attribute `a`.
pub fn group_id(y: usize, a: usize) -> usize {
    2 * y + a
}

/// Inverse of [`group_id`]: `(label, attribute)`.
pub fn split_group_id(g: usize) -> (usize, usize) {
    (g / 2, g % 2)
}

fn unit_diagonal(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

/// Binary task whose first `d_core` columns carry the label and whose last
/// `d_spurious` columns carry an attribute agreeing with it with probability
/// `correlation`. Group id is `2 * label + attribute`.
pub fn gen_spurious_dataset(spec: &SpuriousSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim();
    let core_half = 0.5 * CORE_SEPARATION * spec.noise_std * unit_diagonal(spec.d_core);
    let sp_half = 0.5 * SPURIOUS_SEPARATION * spec.noise_std * unit_diagonal(spec.d_spurious);
    let mut features = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    let mut groups = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let y = rng.random_range(0..2usize);
        let agree = rng.random_bool(spec.correlation);
        let a = if agree { y } else { 1 - y };
        let ys = if y == 1 { 1.0 } else { -1.0 };
        let as_ = if a == 1 { 1.0 } else { -1.0 };
        for _ in 0..spec.d_core {
            let z: f64 = rng.sample(StandardNormal);
            features.push(ys * core_half + spec.noise_std * z);
        }
        for _ in 0..spec.d_spurious {
            let z: f64 = rng.sample(StandardNormal);
            features.push(as_ * sp_half + spec.noise_std * z);
        }
        labels.push(y);
        groups.push(group_id(y, a));
    }
    LabeledDataset::new(format!("spurious(rho={})", spec.correlation), features, d, labels, 2, Some(groups), 4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n: usize,
    pub num_classes: usize,
    pub dim: usize,
    /// Leading columns that carry the cluster means; the rest is noise.
    pub signal_dims: usize,
    pub radius: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// Mean of cluster `c`: `+radius * e_{c/2}` for even `c`, `-radius * e_{c/2}` for odd `c`.
/// Opposite pairs make every signal axis discriminative, including sums of axes.
pub fn cluster_mean(spec: &ClusterSpec, c: usize) -> Vec<f64> {
    let mut mean = vec![0.0; spec.dim];
    let axis = c / 2;
    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
    mean[axis] = sign * spec.radius;
    mean
}

/// Balanced-in-expectation Gaussian clusters.
pub fn gen_clusters(spec: &ClusterSpec) -> Result<LabeledDataset> {
    if spec.n == 0 || spec.dim == 0 || spec.signal_dims == 0 || spec.signal_dims > spec.dim {
        return Err(Error::InvalidConfig("cluster task needs n > 0 and 0 < signal_dims <= dim".into()));
    }
    if spec.num_classes < 2 || spec.num_classes > 2 * spec.signal_dims {
        return Err(Error::InvalidConfig(format!("num_classes must lie in [2, {}]", 2 * spec.signal_dims)));
    }
    let means: Vec<Vec<f64>> = (0..spec.num_classes).map(|c| cluster_mean(spec, c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features = Vec::with_capacity(spec.n * spec.dim);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c = rng.random_range(0..spec.num_classes);
        for &mu in &means[c] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(mu + spec.noise_std * z);
        }
        labels.push(c);
    }
    LabeledDataset::new(format!("clusters(k={})", spec.num_classes), features, spec.dim, labels, spec.num_classes, None, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPairSpec {
    pub d_core: usize,
    pub d_spurious: usize,
    pub pretrain_classes: usize,
    pub n_pretrain: usize,
    pub n_finetune: usize,
    pub correlation: f64,
    pub noise_std: f64,
    pub cluster_radius: f64,
}

impl Default for TaskPairSpec {
    fn default() -> Self {
        Self {
            d_core: 4,
            d_spurious: 4,
            pretrain_classes: 8,
            n_pretrain: 4000,
            n_finetune: 4000,
            correlation: 0.95,
            noise_std: 1.0,
            cluster_radius: 3.0,
        }
    }
}

pub fn gen_task_pair(seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    gen_task_pair_with(&TaskPairSpec::default(), seed)
}

/// Pretrain task: clusters whose means live in the core columns (spurious
/// columns are pure noise). Fine-tune task: the spurious-correlation dataset
/// over the same columns.
pub fn gen_task_pair_with(spec: &TaskPairSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let dim = spec.d_core + spec.d_spurious;
    let pretrain = gen_clusters(&ClusterSpec {
        n: spec.n_pretrain,
        num_classes: spec.pretrain_classes,
        dim,
        signal_dims: spec.d_core,
        radius: spec.cluster_radius,
        noise_std: spec.noise_std,
        seed: seed.wrapping_mul(2).wrapping_add(1),
    })?;
    let finetune = gen_spurious_dataset(&SpuriousSpec {
        n: spec.n_finetune,
        d_core: spec.d_core,
        d_spurious: spec.d_spurious,
        correlation: spec.correlation,
        noise_std: spec.noise_std,
        seed: seed.wrapping_mul(2).wrapping_add(2),
    })?;
    Ok((pretrain, finetune))
}

/// Disjoint `(train, val, test)` partition. Rows are shuffled with `seed`;
/// when groups exist each group is split separately so every split keeps the
/// global group proportions to within one row per group.
pub fn split(data: &LabeledDataset, fractions: (f64, f64, f64), seed: u64) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|&f| !(f > 0.0)) || ((fr.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split fractions must be positive and sum to 1, got {fr:?}")));
    }
    let n = data.len();
    let mut targets = [(n as f64 * fr[0]).round() as usize, (n as f64 * fr[1]).round() as usize, 0];
    targets[1] = targets[1].min(n - targets[0].min(n));
    targets[0] = targets[0].min(n);
    targets[2] = n - targets[0] - targets[1];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = match data.groups() {
        Some(g) => {
            let mut s = vec![Vec::new(); data.num_groups()];
            for (i, &id) in g.iter().enumerate() {
                s[id].push(i);
            }
            s
        }
        None => vec![(0..n).collect()],
    };
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut counts = [0usize; 3];
    let mut allocations = Vec::with_capacity(strata.len());
    for stratum in &strata {
        let ng = stratum.len() as f64;
        let base: [usize; 3] = std::array::from_fn(|k| (ng * fr[k]).floor() as usize);
        for k in 0..3 {
            counts[k] += base[k];
        }
        allocations.push(base);
    }
    for (stratum, alloc) in strata.iter().zip(allocations.iter_mut()) {
        let leftover = stratum.len() - alloc.iter().sum::<usize>();
        let mut given = [false; 3];
        for _ in 0..leftover {
            let k = (0..3)
                .filter(|&k| !given[k])
                .max_by(|&a, &b| {
                    let da = targets[a] as i64 - counts[a] as i64;
                    let db = targets[b] as i64 - counts[b] as i64;
                    da.cmp(&db).then(b.cmp(&a))
                })
                .expect("at most two leftovers per stratum");
            given[k] = true;
            alloc[k] += 1;
            counts[k] += 1;
        }
    }
    for (stratum, alloc) in strata.iter().zip(&allocations) {
        let mut idx = stratum.clone();
        idx.shuffle(&mut rng);
        let mut start = 0;
        for k in 0..3 {
            parts[k].extend_from_slice(&idx[start..start + alloc[k]]);
            start += alloc[k];
        }
    }
    for p in parts.iter_mut() {
        p.shuffle(&mut rng);
        if p.is_empty() {
            return Err(Error::Empty("split produced an empty part"));
        }
    }
    let base = data.name();
    Ok((
        data.select(&parts[0], format!("{base}/train")),
        data.select(&parts[1], format!("{base}/val")),
        data.select(&parts[2], format!("{base}/test")),
    ))
}
