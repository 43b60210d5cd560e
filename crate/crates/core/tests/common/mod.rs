//! Independent oracles shared by the integration tests: hyper-dual numbers
//! driving a from-scratch forward pass, finite differences and random fixtures.
#![allow(dead_code)]

use std::ops::{Add, Mul, Neg, Sub};

use ewc_lab::data::LabeledDataset;
use ewc_lab::nn::{init_model, Activation, MlpSpec, ModelState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `re + e1·ε1 + e2·ε2 + e12·ε1ε2` with ε1² = ε2² = 0. Seeding ε1 and ε2 on
/// the same coordinate makes `e12` the exact second derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl Dual {
    pub fn c(re: f64) -> Self {
        Dual { re, e1: 0.0, e2: 0.0, e12: 0.0 }
    }

    pub fn var(re: f64) -> Self {
        Dual { re, e1: 1.0, e2: 1.0, e12: 0.0 }
    }

    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        Dual { re: f, e1: df * self.e1, e2: df * self.e2, e12: df * self.e12 + d2f * self.e1 * self.e2 }
    }

    pub fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re, -1.0 / (self.re * self.re))
    }

    pub fn tanh(self) -> Self {
        let t = self.re.tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }

    pub fn relu(self) -> Self {
        if self.re > 0.0 {
            self
        } else {
            Dual::c(0.0)
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { re: self.re + o.re, e1: self.e1 + o.e1, e2: self.e2 + o.e2, e12: self.e12 + o.e12 }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        self + (-o)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { re: -self.re, e1: -self.e1, e2: -self.e2, e12: -self.e12 }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            re: self.re * o.re,
            e1: self.re * o.e1 + self.e1 * o.re,
            e2: self.re * o.e2 + self.e2 * o.re,
            e12: self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        }
    }
}

/// Parameters as duals with coordinate `seed` (if any) as the variable.
pub fn seeded(values: &[f64], seed: Option<usize>) -> Vec<Dual> {
    values.iter().enumerate().map(|(i, &v)| if Some(i) == seed { Dual::var(v) } else { Dual::c(v) }).collect()
}

/// Logits of `spec` at `x`, reading weights as row-major `out x in` blocks
/// named `layer{l}.weight` / `layer{l}.bias`.
pub fn dual_logits(model: &ModelState, params: &[Dual], x: &[f64]) -> Vec<Dual> {
    let spec = model.spec();
    let layout = model.params().layout();
    let dims = spec.layer_dims();
    let mut cur: Vec<Dual> = x.iter().map(|&v| Dual::c(v)).collect();
    for (l, &(din, dout)) in dims.iter().enumerate() {
        let w = layout.segment(&MlpSpec::weight_name(l)).unwrap();
        let b = layout.segment(&MlpSpec::bias_name(l)).unwrap();
        let mut next = Vec::with_capacity(dout);
        for o in 0..dout {
            let mut acc = params[b.offset + o];
            for i in 0..din {
                acc = acc + params[w.offset + o * din + i] * cur[i];
            }
            next.push(acc);
        }
        if l + 1 < dims.len() {
            for v in next.iter_mut() {
                *v = match spec.activation {
                    Activation::Relu => v.relu(),
                    Activation::Tanh => v.tanh(),
                };
            }
        }
        cur = next;
    }
    cur
}

pub fn dual_log_softmax(z: &[Dual]) -> Vec<Dual> {
    let m = z.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
    let mut s = Dual::c(0.0);
    for &v in z {
        s = s + (v - Dual::c(m)).exp();
    }
    let lse = s.ln() + Dual::c(m);
    z.iter().map(|&v| v - lse).collect()
}

/// Mean NLL over `data` with parameter `seed` as the dual variable.
pub fn dual_mean_nll(model: &ModelState, data: &LabeledDataset, seed: Option<usize>) -> Dual {
    let params = seeded(model.params().values(), seed);
    let mut total = Dual::c(0.0);
    for i in 0..data.len() {
        let lp = dual_log_softmax(&dual_logits(model, &params, data.row(i)));
        total = total - lp[data.label(i)];
    }
    total * Dual::c(1.0 / data.len() as f64)
}

/// Fourth-order central difference of `f` along every coordinate of `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let mut at = |d: f64| {
                probe[i] = x[i] + d;
                let v = f(&probe);
                probe[i] = x[i];
                v
            };
            let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small random architecture with at most `max_params` parameters.
pub fn random_spec(rng: &mut ChaCha8Rng, max_params: usize) -> MlpSpec {
    loop {
        let depth = rng.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=6)).collect();
        let act = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
        let spec = MlpSpec::new(rng.random_range(2..=5), hidden, rng.random_range(2..=4), act, depth).unwrap();
        if spec.num_params() <= max_params {
            return spec;
        }
    }
}

/// Model with its initialization rescaled so logits stay moderate.
pub fn random_model(rng: &mut ChaCha8Rng, max_params: usize) -> ModelState {
    let spec = random_spec(rng, max_params);
    let m = init_model(&spec, rng.random()).unwrap();
    let mut p = m.params().clone();
    for v in p.values_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    m.with_params(p).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, dim: usize, classes: usize, n: usize) -> LabeledDataset {
    let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    LabeledDataset::new("batch", x, dim, y, classes, None, 0).unwrap()
}
