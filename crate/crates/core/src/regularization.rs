//! Quadratic penalties that anchor fine-tuning at a reference parameter vector.
//!
//! Every penalty has the form `lambda * sum_{i in scope} w_i (theta_i - ref_i)^2`
//! with `w = 1` (L2), `w = F` (Fisher) or `w = F_alpha` (adjusted Fisher).
//! The scope is a list of segment names that must exist, with equal lengths,
//! in both the reference and the fine-tuned model. A freshly attached head has
//! no reference values and is simply left out of the scope.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fim::{adjust_fim, DiagFim};
use crate::nn::{nll_and_grad_on, Layout, ModelState, ParamVector, StepHooks};

#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyKind {
    Erm,
    L2,
    Fim(DiagFim),
    AdjustedFim(DiagFim, f64),
}

impl PenaltyKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Erm => "erm",
            Self::L2 => "l2",
            Self::Fim(_) => "fim",
            Self::AdjustedFim(..) => "adjusted_fim",
        }
    }
}

/// How the penalty enters the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Implicit step after each optimizer update: `theta <- (theta + c ref) / (1 + c)`
    /// with `c = 2 lr lambda w`. Stable for any lambda.
    #[default]
    Proximal,
    /// Penalty gradient added to the minibatch gradient.
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    kind: PenaltyKind,
    lambda: f64,
    scope: Vec<String>,
}

impl Penalty {
    pub fn new(kind: PenaltyKind, lambda: f64, scope: Vec<String>) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        if let PenaltyKind::AdjustedFim(_, alpha) = &kind {
            if !(0.0..=1.0).contains(alpha) {
                return Err(Error::OutOfRange(format!("alpha must lie in [0, 1], got {alpha}")));
            }
        }
        let lambda = if kind == PenaltyKind::Erm { 0.0 } else { lambda };
        Ok(Self { kind, lambda, scope })
    }

    pub fn erm() -> Self {
        Self { kind: PenaltyKind::Erm, lambda: 0.0, scope: Vec::new() }
    }

    pub fn kind(&self) -> &PenaltyKind {
        &self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scope(&self) -> &[String] {
        &self.scope
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            PenaltyKind::AdjustedFim(_, a) => Some(a),
            _ => None,
        }
    }

    /// Resolves weights and anchor values against a model layout.
    pub fn bind(&self, theta_ref: &ParamVector, model_layout: &Layout) -> Result<BoundPenalty> {
        let n = model_layout.len();
        let mut bound = BoundPenalty { lambda: self.lambda, ranges: Vec::new(), anchor: vec![0.0; n], weight: vec![0.0; n] };
        if self.kind == PenaltyKind::Erm {
            return Ok(bound);
        }
        let weights = match &self.kind {
            PenaltyKind::Fim(f) => Some(f.values().clone()),
            PenaltyKind::AdjustedFim(f, alpha) => Some(adjust_fim(f, *alpha)?.values().clone()),
            _ => None,
        };
        if let Some(w) = &weights {
            if **w.layout() != **theta_ref.layout() {
                return Err(Error::LayoutMismatch("Fisher layout differs from the reference parameters".into()));
            }
        }
        for name in &self.scope {
            let dst = model_layout.segment(name).ok_or_else(|| Error::LayoutMismatch(format!("scope segment '{name}' is not in the model")))?;
            let src = theta_ref.layout().segment(name).ok_or_else(|| Error::LayoutMismatch(format!("scope segment '{name}' is not in the reference")))?;
            if src.len != dst.len {
                return Err(Error::LayoutMismatch(format!("scope segment '{name}' has {} entries in the reference and {} in the model", src.len, dst.len)));
            }
            let range = dst.offset..dst.offset + dst.len;
            bound.anchor[range.clone()].copy_from_slice(&theta_ref.values()[src.offset..src.offset + src.len]);
            match &weights {
                Some(w) => bound.weight[range.clone()].copy_from_slice(&w.values()[src.offset..src.offset + src.len]),
                None => bound.weight[range.clone()].iter_mut().for_each(|v| *v = 1.0),
            }
            bound.ranges.push(range);
        }
        Ok(bound)
    }
}

/// A penalty resolved against one model layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPenalty {
    lambda: f64,
    ranges: Vec<Range<usize>>,
    anchor: Vec<f64>,
    weight: Vec<f64>,
}

impl BoundPenalty {
    fn check(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.anchor.len() {
            return Err(Error::LayoutMismatch(format!("penalty bound to {} parameters, got {}", self.anchor.len(), theta.len())));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Weight of every coordinate (zero outside the scope).
    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn in_scope(&self, i: usize) -> bool {
        self.ranges.iter().any(|r| r.contains(&i))
    }

    pub fn value(&self, theta: &ParamVector) -> Result<f64> {
        self.check(theta)?;
        let t = theta.values();
        let mut sum = 0.0;
        for r in &self.ranges {
            for i in r.clone() {
                let d = t[i] - self.anchor[i];
                sum += self.weight[i] * d * d;
            }
        }
        Ok(self.lambda * sum)
    }

    /// Adds the penalty gradient into `grad`; coordinates outside the scope are untouched.
    pub fn add_grad(&self, theta: &ParamVector, grad: &mut ParamVector) -> Result<()> {
        self.check(theta)?;
        self.check(grad)?;
        if self.lambda == 0.0 {
            return Ok(());
        }
        let (t, g) = (theta.values(), grad.values_mut());
        for r in &self.ranges {
            for i in r.clone() {
                g[i] += 2.0 * self.lambda * self.weight[i] * (t[i] - self.anchor[i]);
            }
        }
        Ok(())
    }

    pub fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        let mut g = theta.zeros_like();
        self.add_grad(theta, &mut g)?;
        Ok(g)
    }

    /// Exact minimizer of `|theta - p|^2 / (2 lr) + penalty(theta)`, applied in place.
    pub fn prox(&self, theta: &mut ParamVector, lr: f64) -> Result<()> {
        self.check(theta)?;
        let t = theta.values_mut();
        for r in &self.ranges {
            for i in r.clone() {
                let c = 2.0 * lr * self.lambda * self.weight[i];
                if c != 0.0 {
                    t[i] = (t[i] + c * self.anchor[i]) / (1.0 + c);
                }
            }
        }
        Ok(())
    }
}

pub fn penalty_value(theta: &ParamVector, theta_ref: &ParamVector, penalty: &Penalty) -> Result<f64> {
    penalty.bind(theta_ref, theta.layout())?.value(theta)
}

/// `2 lambda w_i (theta_i - ref_i)` inside the scope, exactly zero elsewhere.
pub fn penalty_grad(theta: &ParamVector, theta_ref: &ParamVector, penalty: &Penalty) -> Result<ParamVector> {
    penalty.bind(theta_ref, theta.layout())?.grad(theta)
}

/// Mean NLL on `batch` plus the penalty, and the gradient of their sum.
pub fn objective_grad(model: &ModelState, batch: &LabeledDataset, theta_ref: &ParamVector, penalty: &Penalty) -> Result<(f64, ParamVector)> {
    let bound = penalty.bind(theta_ref, model.params().layout())?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    objective_on(model, batch, &idx, &bound)
}

fn objective_on(model: &ModelState, data: &LabeledDataset, indices: &[usize], bound: &BoundPenalty) -> Result<(f64, ParamVector)> {
    let (loss, mut grad) = nll_and_grad_on(model, data, indices)?;
    let pen = bound.value(model.params())?;
    bound.add_grad(model.params(), &mut grad)?;
    Ok((loss + pen, grad))
}

/// Training hooks that apply a bound penalty.
pub struct PenaltyHooks<'a> {
    pub penalty: &'a BoundPenalty,
    pub integration: Integration,
}

impl StepHooks for PenaltyHooks<'_> {
    fn loss_grad(&mut self, model: &ModelState, data: &LabeledDataset, indices: &[usize]) -> Result<(f64, ParamVector)> {
        match self.integration {
            Integration::Gradient => objective_on(model, data, indices, self.penalty),
            Integration::Proximal => {
                let (loss, grad) = nll_and_grad_on(model, data, indices)?;
                Ok((loss + self.penalty.value(model.params())?, grad))
            }
        }
    }

    fn after_step(&mut self, params: &mut ParamVector, lr: f64) -> Result<()> {
        match self.integration {
            Integration::Proximal => self.penalty.prox(params, lr),
            Integration::Gradient => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fim::FimMode;
    use std::sync::Arc;

    fn pv(layout: &Arc<Layout>, v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec(), layout.clone()).unwrap()
    }

    fn two() -> Arc<Layout> {
        Arc::new(Layout::from_lengths([("a", 1), ("b", 1)]).unwrap())
    }

    fn fim_of(p: &ParamVector) -> DiagFim {
        DiagFim::from_parts(p.clone(), FimMode::Exact, 1, String::new()).unwrap()
    }

    fn all() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn zero_fisher_entry_hides_displacement() {
        let l = two();
        let f = fim_of(&pv(&l, &[0.0, 1.0]));
        let p = Penalty::new(PenaltyKind::Fim(f), 1.0, all()).unwrap();
        assert_eq!(penalty_value(&pv(&l, &[5.0, 0.0]), &pv(&l, &[0.0, 0.0]), &p).unwrap(), 0.0);
    }

    #[test]
    fn l2_gradient_is_two_lambda_delta() {
        let l = two();
        let p = Penalty::new(PenaltyKind::L2, 0.5, all()).unwrap();
        let g = penalty_grad(&pv(&l, &[1.0, -2.0]), &pv(&l, &[0.0, 0.0]), &p).unwrap();
        assert_eq!(g.values(), &[1.0, -2.0]);
    }

    #[test]
    fn anchor_point_has_zero_penalty() {
        let l = two();
        let theta = pv(&l, &[0.3, -1.2]);
        let f = fim_of(&pv(&l, &[2.0, 0.0]));
        for kind in [PenaltyKind::Erm, PenaltyKind::L2, PenaltyKind::Fim(f.clone()), PenaltyKind::AdjustedFim(f, 0.1)] {
            let p = Penalty::new(kind, 3.0, all()).unwrap();
            assert_eq!(penalty_value(&theta, &theta, &p).unwrap(), 0.0);
            assert!(penalty_grad(&theta, &theta, &p).unwrap().values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn erm_forces_zero_lambda() {
        assert_eq!(Penalty::new(PenaltyKind::Erm, 7.0, all()).unwrap().lambda(), 0.0);
    }

    #[test]
    fn out_of_scope_gradient_is_bitwise_zero() {
        let l = two();
        let p = Penalty::new(PenaltyKind::L2, 2.0, vec!["b".into()]).unwrap();
        let g = penalty_grad(&pv(&l, &[-4.0, 1.0]), &pv(&l, &[0.0, 0.0]), &p).unwrap();
        assert_eq!(g.values()[0].to_bits(), 0.0f64.to_bits());
        assert_eq!(g.values()[1], 4.0);
    }

    #[test]
    fn scope_must_exist_in_both_layouts() {
        let l = two();
        let p = Penalty::new(PenaltyKind::L2, 1.0, vec!["head".into()]).unwrap();
        assert!(matches!(penalty_value(&pv(&l, &[0.0, 0.0]), &pv(&l, &[0.0, 0.0]), &p), Err(Error::LayoutMismatch(_))));
    }

    #[test]
    fn prox_matches_closed_form() {
        let l = two();
        let p = Penalty::new(PenaltyKind::L2, 2.0, vec!["a".into()]).unwrap();
        let b = p.bind(&pv(&l, &[1.0, 1.0]), &l).unwrap();
        let mut t = pv(&l, &[3.0, 5.0]);
        b.prox(&mut t, 0.25).unwrap();
        // c = 2 * 0.25 * 2 = 1, so (3 + 1) / 2
        assert_eq!(t.values(), &[2.0, 5.0]);
    }
}
