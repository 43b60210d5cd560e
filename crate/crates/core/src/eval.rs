//! Accuracy metrics, reverse transfer and Pareto fronts.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::ModelState;

/// Fraction of rows whose predicted class equals the label. Ties in the
/// logits go to the lowest class index.
pub fn top1_accuracy(model: &ModelState, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        if model.predict_class(data.row(i))? == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: usize,
    pub count: usize,
    /// `None` when the group has no rows.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub groups: Vec<GroupStat>,
    pub top1: f64,
    pub worst_group_accuracy: f64,
}

pub fn worst_group_accuracy(model: &ModelState, data: &LabeledDataset) -> Result<GroupReport> {
    let ids = data.groups().ok_or(Error::MissingGroups)?;
    let mut count = vec![0usize; data.num_groups()];
    let mut correct = vec![0usize; data.num_groups()];
    for (i, &g) in ids.iter().enumerate() {
        count[g] += 1;
        if model.predict_class(data.row(i))? == data.label(i) {
            correct[g] += 1;
        }
    }
    let total: usize = correct.iter().sum();
    let groups: Vec<GroupStat> = (0..count.len())
        .map(|g| GroupStat { group: g, count: count[g], accuracy: (count[g] > 0).then(|| correct[g] as f64 / count[g] as f64) })
        .collect();
    let worst = groups.iter().filter_map(|g| g.accuracy).fold(f64::INFINITY, f64::min);
    if !worst.is_finite() {
        return Err(Error::Empty("groups"));
    }
    Ok(GroupReport { groups, top1: total as f64 / data.len() as f64, worst_group_accuracy: worst })
}

/// Fine-tuned backbone followed by the pretrained head.
pub fn compose_reverse(finetuned: &ModelState, pretrained: &ModelState) -> Result<ModelState> {
    let (fs, ps) = (finetuned.spec(), pretrained.spec());
    if fs.input_dim != ps.input_dim || fs.hidden_dims != ps.hidden_dims || fs.backbone_depth != ps.backbone_depth || fs.activation != ps.activation {
        return Err(Error::LayoutMismatch("fine-tuned and pretrained backbones differ in shape".into()));
    }
    let mut params = pretrained.params().clone();
    for name in ps.backbone_segments() {
        let src = finetuned.params().segment(&name).ok_or_else(|| Error::LayoutMismatch(format!("fine-tuned model has no segment '{name}'")))?;
        let dst = params.segment_mut(&name).ok_or_else(|| Error::LayoutMismatch(format!("pretrained model has no segment '{name}'")))?;
        if src.len() != dst.len() {
            return Err(Error::LayoutMismatch(format!("segment '{name}' differs in length")));
        }
        dst.copy_from_slice(src);
    }
    pretrained.with_params(params)
}

/// Top-1 on the pretrain task of the fine-tuned backbone under the pretrained head.
pub fn reverse_transfer_eval(finetuned: &ModelState, pretrained: &ModelState, pretrain_test: &LabeledDataset) -> Result<f64> {
    top1_accuracy(&compose_reverse(finetuned, pretrained)?, pretrain_test)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    /// Fine-tune task top-1.
    pub x: f64,
    /// Reverse-transfer top-1.
    pub y: f64,
    pub config_id: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontMode {
    Nondominated,
    ConvexHull,
}

/// `a` is at least as good on both axes and better on one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.x >= b.x && a.y >= b.y && (a.x > b.x || a.y > b.y)
}

/// Maximal points sorted by `x` ascending. In hull mode only the vertices of
/// the upper-right hull of that staircase are kept; points lying exactly on a
/// hull edge are kept too.
pub fn pareto_front(points: &[ParetoPoint], mode: FrontMode) -> Result<Vec<ParetoPoint>> {
    if points.is_empty() {
        return Err(Error::Empty("pareto points"));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| b.x.total_cmp(&a.x).then(b.y.total_cmp(&a.y)).then(a.config_id.cmp(&b.config_id)).then(a.seed.cmp(&b.seed)));
    // sweep from the largest x: a point survives iff its y beats every point to its right
    let mut front: Vec<ParetoPoint> = Vec::new();
    let mut best_y = f64::NEG_INFINITY;
    for p in sorted {
        let duplicate = front.last().is_some_and(|q| q.x == p.x && q.y == p.y);
        if p.y > best_y || duplicate {
            best_y = best_y.max(p.y);
            front.push(p);
        }
    }
    front.reverse();
    if mode == FrontMode::Nondominated {
        return Ok(front);
    }
    // monotone chain over the distinct staircase points (x ascending, y
    // descending), keeping collinear points and removing only strict left
    // turns; duplicates of a surviving vertex are restored afterwards
    let mut groups: Vec<Vec<ParetoPoint>> = Vec::new();
    for p in front {
        match groups.last_mut() {
            Some(g) if g[0].x == p.x && g[0].y == p.y => g.push(p),
            _ => groups.push(vec![p]),
        }
    }
    let mut hull: Vec<Vec<ParetoPoint>> = Vec::new();
    for g in groups {
        let p = g[0];
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2][0], hull[hull.len() - 1][0]);
            let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
            if cross > 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(g);
    }
    Ok(hull.into_iter().flatten().collect())
}

/// Height of the piecewise-linear front at `x`, or `None` outside its x-range.
pub fn front_height(front: &[ParetoPoint], x: f64) -> Option<f64> {
    let first = front.first()?;
    let last = front.last()?;
    if x < first.x || x > last.x {
        return None;
    }
    let mut best = f64::NEG_INFINITY;
    for w in front.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.x <= x && x <= b.x {
            let y = if b.x == a.x { a.y.max(b.y) } else { a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x) };
            best = best.max(y);
        }
    }
    if front.len() == 1 {
        best = first.y;
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec, ParamVector};
    use std::sync::Arc;

    fn pt(x: f64, y: f64) -> ParetoPoint {
        ParetoPoint { x, y, config_id: 0, seed: 0 }
    }

    /// Linear 1-d model predicting class 1 iff `x > 0`.
    fn sign_model() -> ModelState {
        let spec = MlpSpec::new(1, vec![], 2, Activation::Relu, 0).unwrap();
        let p = ParamVector::new(vec![-1.0, 1.0, 0.0, 0.0], Arc::new(spec.layout())).unwrap();
        ModelState::new(spec, p).unwrap()
    }

    #[test]
    fn three_of_four() {
        let d = LabeledDataset::new("t", vec![1.0, -1.0, 2.0, 3.0], 1, vec![1, 0, 1, 0], 2, None, 0).unwrap();
        assert_eq!(top1_accuracy(&sign_model(), &d).unwrap(), 0.75);
    }

    #[test]
    fn constant_model_scores_base_rate() {
        let spec = MlpSpec::new(1, vec![], 2, Activation::Relu, 0).unwrap();
        let m = ModelState::new(spec.clone(), ParamVector::zeros(Arc::new(spec.layout()))).unwrap();
        let d = LabeledDataset::new("t", vec![1.0, -1.0, 2.0, 3.0], 1, vec![1, 0, 1, 0], 2, None, 0).unwrap();
        assert_eq!(top1_accuracy(&m, &d).unwrap(), 0.5);
    }

    #[test]
    fn group_report() {
        let d = LabeledDataset::new("t", vec![1.0, -1.0, 2.0, 3.0], 1, vec![1, 0, 1, 0], 2, Some(vec![3, 0, 3, 1]), 4).unwrap();
        let r = worst_group_accuracy(&sign_model(), &d).unwrap();
        assert_eq!(r.worst_group_accuracy, 0.0);
        assert_eq!(r.top1, 0.75);
        assert_eq!(r.groups[2].accuracy, None);
        let plain = LabeledDataset::new("t", vec![1.0], 1, vec![1], 2, None, 0).unwrap();
        assert!(matches!(worst_group_accuracy(&sign_model(), &plain), Err(Error::MissingGroups)));
    }

    #[test]
    fn single_group_equals_overall() {
        let d = LabeledDataset::new("t", vec![1.0, -1.0, 2.0, 3.0], 1, vec![1, 0, 1, 0], 2, Some(vec![2; 4]), 4).unwrap();
        let r = worst_group_accuracy(&sign_model(), &d).unwrap();
        assert_eq!(r.worst_group_accuracy, r.top1);
    }

    #[test]
    fn dominated_point_is_dropped() {
        let f = pareto_front(&[pt(0.9, 0.5), pt(0.8, 0.4)], FrontMode::Nondominated).unwrap();
        assert_eq!(f, vec![pt(0.9, 0.5)]);
    }

    #[test]
    fn collinear_middle_point_is_kept() {
        let pts = [pt(0.0, 1.0), pt(0.5, 0.5), pt(1.0, 0.0)];
        for mode in [FrontMode::Nondominated, FrontMode::ConvexHull] {
            assert_eq!(pareto_front(&pts, mode).unwrap(), pts.to_vec());
        }
    }

    #[test]
    fn point_below_chord_leaves_hull() {
        let pts = [pt(0.0, 1.0), pt(0.5, 0.4), pt(1.0, 0.0)];
        assert_eq!(pareto_front(&pts, FrontMode::Nondominated).unwrap().len(), 3);
        assert_eq!(pareto_front(&pts, FrontMode::ConvexHull).unwrap(), vec![pt(0.0, 1.0), pt(1.0, 0.0)]);
    }

    #[test]
    fn duplicate_point_below_chord_leaves_hull() {
        let pts = [pt(0.0, 1.0), pt(0.5, 0.4), pt(0.5, 0.4), pt(1.0, 0.0), pt(1.0, 0.0)];
        assert_eq!(pareto_front(&pts, FrontMode::ConvexHull).unwrap(), vec![pt(0.0, 1.0), pt(1.0, 0.0), pt(1.0, 0.0)]);
    }

    #[test]
    fn front_height_interpolates() {
        let f = [pt(0.0, 1.0), pt(1.0, 0.0)];
        assert_eq!(front_height(&f, 0.25), Some(0.75));
        assert_eq!(front_height(&f, 1.5), None);
        assert_eq!(front_height(&[pt(0.3, 0.6)], 0.3), Some(0.6));
    }
}
