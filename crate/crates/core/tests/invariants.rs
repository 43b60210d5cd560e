//! Property tests over randomly generated models, data and parameter vectors.

mod common;

use std::sync::Arc;

use common::*;
use ewc_lab::data::{FeatureRows, LabeledDataset};
use ewc_lab::eval::*;
use ewc_lab::fim::*;
use ewc_lab::harness::*;
use ewc_lab::nn::*;
use ewc_lab::regularization::*;
use ewc_lab::ssl::*;
use proptest::prelude::*;
use rand::Rng;

fn layout_of(lengths: &[usize]) -> Arc<Layout> {
    Arc::new(Layout::from_lengths(lengths.iter().enumerate().map(|(i, &n)| (format!("s{i}"), n))).unwrap())
}

fn pv(layout: &Arc<Layout>, v: Vec<f64>) -> ParamVector {
    ParamVector::new(v, layout.clone()).unwrap()
}

fn fisher(values: ParamVector) -> DiagFim {
    DiagFim::from_parts(values, FimMode::Exact, 1, String::new()).unwrap()
}

fn segment_lengths() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..8, 1..5)
}

/// Two parameter vectors and a nonnegative weight vector on the same layout.
fn theta_ref_weights() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    segment_lengths().prop_flat_map(|lens| {
        let n: usize = lens.iter().sum();
        (
            Just(lens),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(prop_oneof![Just(0.0), 0.0..3.0f64], n),
        )
    })
}

fn all_segments(layout: &Layout) -> Vec<String> {
    layout.segments().iter().map(|s| s.name.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // ---- parameter containers and the MLP

    #[test]
    fn layouts_tile_the_vector(lens in segment_lengths()) {
        let layout = layout_of(&lens);
        let mut next = 0;
        for s in layout.segments() {
            prop_assert_eq!(s.offset, next);
            next += s.len;
        }
        prop_assert_eq!(next, layout.len());
    }

    #[test]
    fn algebra_rejects_foreign_layouts(lens in segment_lengths(), extra in 1usize..4) {
        let a = pv(&layout_of(&lens), vec![1.0; lens.iter().sum()]);
        let mut other = lens.clone();
        other[0] += extra;
        let b = pv(&layout_of(&other), vec![1.0; other.iter().sum()]);
        prop_assert!(a.add(&b).is_err());
        prop_assert!(a.sub(&b).is_err());
        prop_assert!(a.mul(&b).is_err());
        prop_assert!(a.dot(&b).is_err());
        prop_assert!(a.clone().axpy(2.0, &b).is_err());
    }

    #[test]
    fn softmax_is_normalized_for_large_logits(z in prop::collection::vec(-1e3..1e3f64, 2..10)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn canonical_layout_and_deterministic_init(seed in any::<u64>()) {
        let spec = random_spec(&mut rng(seed), 500);
        let a = init_model(&spec, seed).unwrap();
        prop_assert_eq!(&**a.params().layout(), &spec.layout());
        let again = init_model(&spec, seed).unwrap();
        prop_assert_eq!(a.params(), again.params());
        prop_assert!(spec.backbone_depth < spec.num_layers());
        let p = a.predict_proba(&vec![0.5; spec.input_dim]).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn backbone_cannot_swallow_the_output_layer(depth in 0usize..4) {
        let hidden = vec![3; depth];
        prop_assert!(MlpSpec::new(2, hidden.clone(), 2, Activation::Tanh, depth + 1).is_err());
        prop_assert!(MlpSpec::new(2, hidden, 2, Activation::Tanh, depth).is_ok());
    }

    // ---- penalties

    #[test]
    fn fim_of_ones_equals_l2((lens, theta, anchor, _w) in theta_ref_weights(), lambda in 0.0..10.0f64) {
        let layout = layout_of(&lens);
        let (theta, anchor) = (pv(&layout, theta), pv(&layout, anchor));
        let scope = all_segments(&layout);
        let l2 = Penalty::new(PenaltyKind::L2, lambda, scope.clone()).unwrap();
        let ones = Penalty::new(PenaltyKind::Fim(fisher(theta.filled_like(1.0))), lambda, scope).unwrap();
        prop_assert_eq!(penalty_value(&theta, &anchor, &l2).unwrap().to_bits(), penalty_value(&theta, &anchor, &ones).unwrap().to_bits());
        prop_assert_eq!(penalty_grad(&theta, &anchor, &l2).unwrap(), penalty_grad(&theta, &anchor, &ones).unwrap());
    }

    #[test]
    fn penalty_gradient_is_bitwise_zero_outside_scope((lens, theta, anchor, w) in theta_ref_weights(), lambda in 0.0..10.0f64, pick in any::<u64>()) {
        let layout = layout_of(&lens);
        let (theta, anchor) = (pv(&layout, theta), pv(&layout, anchor));
        let mut r = rng(pick);
        let scope: Vec<String> = all_segments(&layout).into_iter().filter(|_| r.random_bool(0.5)).collect();
        for kind in [PenaltyKind::L2, PenaltyKind::Fim(fisher(pv(&layout, w.clone()))), PenaltyKind::AdjustedFim(fisher(pv(&layout, w.clone())), 0.3)] {
            let p = Penalty::new(kind, lambda, scope.clone()).unwrap();
            let g = penalty_grad(&theta, &anchor, &p).unwrap();
            for s in layout.segments().iter().filter(|s| !scope.contains(&s.name)) {
                prop_assert!(g.segment(&s.name).unwrap().iter().all(|v| v.to_bits() == 0));
            }
            prop_assert!(penalty_value(&theta, &anchor, &p).unwrap() >= 0.0);
            prop_assert_eq!(penalty_value(&anchor, &anchor, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn penalty_is_a_gaussian_negative_log_density((lens, theta, anchor, w) in theta_ref_weights(), lambda in 0.0..10.0f64) {
        let layout = layout_of(&lens);
        let p = Penalty::new(PenaltyKind::Fim(fisher(pv(&layout, w.clone()))), lambda, all_segments(&layout)).unwrap();
        let value = penalty_value(&pv(&layout, theta.clone()), &pv(&layout, anchor.clone()), &p).unwrap();
        // -log N(theta; anchor, diag(2 lambda w)^-1) up to its normalizer
        let quad: f64 = (0..theta.len()).map(|i| 0.5 * (2.0 * lambda * w[i]) * (theta[i] - anchor[i]).powi(2)).sum();
        prop_assert!(rel_err(value, quad, 1e-300) <= 1e-12);
    }

    #[test]
    fn stronger_prox_never_moves_away_from_the_anchor((lens, theta, anchor, w) in theta_ref_weights(), lo in 0.0..10.0f64, extra in 0.0..100.0f64, lr in 1e-4..1.0f64) {
        let layout = layout_of(&lens);
        let anchor = pv(&layout, anchor);
        let prox = |lambda: f64| {
            let p = Penalty::new(PenaltyKind::Fim(fisher(pv(&layout, w.clone()))), lambda, all_segments(&layout)).unwrap();
            let mut t = pv(&layout, theta.clone());
            p.bind(&anchor, &layout).unwrap().prox(&mut t, lr).unwrap();
            t
        };
        let (weak, strong) = (prox(lo), prox(lo + extra));
        for i in 0..anchor.len() {
            let a = anchor.values()[i];
            prop_assert!((strong.values()[i] - a).abs() <= (weak.values()[i] - a).abs() + 1e-12);
            prop_assert!((weak.values()[i] - a).abs() <= (theta[i] - a).abs() + 1e-12);
        }
    }

    #[test]
    fn erm_has_no_penalty((lens, theta, anchor, _w) in theta_ref_weights(), lambda in 0.0..10.0f64) {
        let layout = layout_of(&lens);
        let p = Penalty::new(PenaltyKind::Erm, lambda, all_segments(&layout)).unwrap();
        prop_assert_eq!(p.lambda(), 0.0);
        let (theta, anchor) = (pv(&layout, theta), pv(&layout, anchor));
        prop_assert_eq!(penalty_value(&theta, &anchor, &p).unwrap(), 0.0);
        prop_assert!(penalty_grad(&theta, &anchor, &p).unwrap().values().iter().all(|v| v.to_bits() == 0));
    }

    // ---- Fisher

    #[test]
    fn fisher_entries_are_nonnegative_in_every_mode(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 120);
        let data = random_batch(&mut r, model.spec().input_dim, model.spec().num_classes, 5);
        for f in [
            compute_fim_exact(&model, &data).unwrap(),
            compute_fim_sampled(&model, &data, seed).unwrap(),
            compute_fim_empirical(&model, &data, LabelSource::DatasetLabels).unwrap(),
        ] {
            prop_assert!(f.values().values().iter().all(|&v| v >= 0.0));
            prop_assert!(f.values().same_layout(model.params()));
        }
    }

    #[test]
    fn adjustment_keeps_mean_and_lifts_the_floor(vals in prop::collection::vec(prop_oneof![Just(0.0), 0.0..1e3f64], 1..60), alpha in 0.0..=1.0f64) {
        let layout = layout_of(&[vals.len()]);
        let f = fisher(pv(&layout, vals));
        let a = adjust_fim(&f, alpha).unwrap();
        let floor = alpha * f.mean();
        prop_assert!(a.values().values().iter().all(|&v| v >= floor));
        prop_assert!(rel_err(a.mean(), f.mean(), 1e-300) <= 1e-12);
    }

    #[test]
    fn stats_histograms_count_every_entry(lens in segment_lengths(), seed in any::<u64>()) {
        let layout = layout_of(&lens);
        let mut r = rng(seed);
        let vals = (0..layout.len()).map(|_| if r.random_bool(0.2) { 0.0 } else { 10f64.powf(r.random_range(-35.0..3.0)) }).collect();
        let s = fim_stats(&fisher(pv(&layout, vals)));
        prop_assert_eq!(s.total_params, layout.len());
        for (l, seg) in s.layers.iter().zip(layout.segments()) {
            prop_assert_eq!(l.count, seg.len);
            prop_assert_eq!(l.zero_count + l.histogram.iter().sum::<usize>(), seg.len);
        }
    }

    // ---- self-distillation

    #[test]
    fn teacher_outputs_are_distributions(seed in any::<u64>(), temp in 0.01..2.0f64) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 200);
        let mut teacher = TeacherState::from_student(&model, 0.99, 0.9);
        teacher.center.iter_mut().for_each(|c| *c = r.random_range(-3.0..3.0));
        let x: Vec<f64> = (0..model.spec().input_dim).map(|_| r.random_range(-5.0..5.0)).collect();
        let t = teacher_forward(&teacher, model.spec(), &x, temp).unwrap();
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn ema_stays_between_teacher_and_student(t in prop::collection::vec(-10.0..10.0f64, 12), s in prop::collection::vec(-10.0..10.0f64, 12), m in 0.0..=1.0f64) {
        let layout = layout_of(&[5, 7]);
        let out = ema_update(&pv(&layout, t.clone()), &pv(&layout, s.clone()), m).unwrap();
        for i in 0..12 {
            let (lo, hi) = (t[i].min(s[i]), t[i].max(s[i]));
            prop_assert!(out.values()[i] >= lo - 1e-12 && out.values()[i] <= hi + 1e-12);
        }
        let frozen = ema_update(&pv(&layout, t.clone()), &pv(&layout, s), 1.0).unwrap();
        prop_assert_eq!(frozen.values(), &t[..]);
    }

    #[test]
    fn augmentation_is_a_function_of_seed_and_draw(x in prop::collection::vec(-3.0..3.0f64, 1..10), seed in any::<u64>(), draw in any::<u64>()) {
        let spec = AugmentationSpec { noise_std: 0.4, mask_prob: 0.3, seed };
        prop_assert_eq!(augment(&x, &spec, draw), augment(&x, &spec, draw));
    }

    // ---- evaluation

    #[test]
    fn worst_group_is_bounded_by_top1(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 100);
        let b = random_batch(&mut r, model.spec().input_dim, model.spec().num_classes, 40);
        let groups: Vec<usize> = (0..b.len()).map(|_| r.random_range(0..4)).collect();
        let d = LabeledDataset::new("g", b.features().to_vec(), b.dim(), b.labels().to_vec(), b.num_classes(), Some(groups), 4).unwrap();
        let rep = worst_group_accuracy(&model, &d).unwrap();
        let best = rep.groups.iter().filter_map(|g| g.accuracy).fold(0.0, f64::max);
        prop_assert!(rep.worst_group_accuracy <= rep.top1 + 1e-12);
        prop_assert!(rep.top1 <= best + 1e-12);
        prop_assert_eq!(rep.top1, top1_accuracy(&model, &d).unwrap());
    }

    #[test]
    fn pareto_fronts_are_sound(raw in prop::collection::vec((0u8..=20, 0u8..=20), 1..40)) {
        let points: Vec<ParetoPoint> = raw.iter().enumerate().map(|(i, &(x, y))| ParetoPoint { x: x as f64 / 20.0, y: y as f64 / 20.0, config_id: i, seed: 0 }).collect();
        let front = pareto_front(&points, FrontMode::Nondominated).unwrap();
        let hull = pareto_front(&points, FrontMode::ConvexHull).unwrap();
        for p in &front {
            prop_assert!(!points.iter().any(|q| dominates(q, p)));
        }
        for p in &points {
            if !points.iter().any(|q| dominates(q, p)) {
                prop_assert!(front.contains(p));
            }
        }
        for h in &hull {
            prop_assert!(front.contains(h));
        }
        prop_assert!(front.windows(2).all(|w| w[0].x <= w[1].x));
        prop_assert!(hull.windows(2).all(|w| w[0].x <= w[1].x));
    }

    #[test]
    fn reverse_transfer_leaves_its_inputs_alone(seed in any::<u64>()) {
        let mut r = rng(seed);
        let spec = MlpSpec::new(3, vec![4, 3], 3, Activation::Tanh, 2).unwrap();
        let pretrained = init_model(&spec, seed).unwrap();
        let finetuned = attach_head(&init_model(&spec, seed ^ 1).unwrap(), 2, seed).unwrap();
        let (p0, f0) = (pretrained.clone(), finetuned.clone());
        let test = random_batch(&mut r, 3, 3, 10);
        reverse_transfer_eval(&finetuned, &pretrained, &test).unwrap();
        prop_assert_eq!(p0, pretrained);
        prop_assert_eq!(f0, finetuned);
    }

    // ---- sweeps

    #[test]
    fn sampled_configs_are_distinct_and_in_range(lrs in 1usize..4, lams in 1usize..5, k_frac in 0.0..=1.0f64, seed in any::<u64>()) {
        let mut spec = SweepSpec {
            learning_rate: (0..lrs).map(|i| 10f64.powi(-(i as i32) - 1)).collect(),
            lambda: (0..lams).map(|i| i as f64).collect(),
            alpha: vec![],
            batch_size: vec![],
            weight_decay: vec![],
            num_samples: 1,
            replicates: 2,
            master_seed: seed,
        };
        spec.num_samples = 1 + ((spec.grid_size() - 1) as f64 * k_frac) as usize;
        let ids = spec.sampled_ids().unwrap();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), spec.num_samples);
        prop_assert!(ids.iter().all(|&i| i < spec.grid_size()));
        prop_assert_eq!(spec.replicate_seeds(), vec![seed, seed.wrapping_add(1)]);
    }

    #[test]
    fn selection_ignores_record_order(vals in prop::collection::vec((0usize..5, 0u8..=10), 1..30), seed in any::<u64>()) {
        let recs: Vec<ValidationRecord> = vals.iter().map(|&(c, v)| ValidationRecord { config_id: c, val_top1: v as f64 / 10.0 }).collect();
        let mut shuffled = recs.clone();
        let mut r = rng(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, r.random_range(0..=i));
        }
        prop_assert_eq!(select_by_validation(&recs).unwrap(), select_by_validation(&shuffled).unwrap());
    }

    #[test]
    fn aggregate_is_sane(v in prop::collection::vec(0.0..=1.0f64, 1..20)) {
        let (m, s) = aggregate(&v).unwrap();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        prop_assert!(s >= 0.0);
        if v.len() == 1 {
            prop_assert_eq!(s, 0.0);
        }
    }
}

fn tiny_dino(ema_momentum: f64) -> (Vec<f64>, MlpSpec, DinoConfig, DinoOutput) {
    let mut r = rng(77);
    let inputs: Vec<f64> = (0..48 * 3).map(|_| r.random_range(-2.0..2.0)).collect();
    let data = LabeledDataset::new("u", inputs.clone(), 3, vec![0; 48], 2, None, 0).unwrap();
    let spec = MlpSpec::new(3, vec![6, 4], 5, Activation::Tanh, 2).unwrap();
    let mut cfg = DinoConfig::new(25, 16, OptimizerConfig::adamw(1e-2, 0.9, 0.999), 5);
    cfg.ema_momentum = ema_momentum;
    let out = dino_pretrain(&data, &spec, &cfg).unwrap();
    (inputs, spec, cfg, out)
}

#[test]
fn pseudo_labels_are_the_final_teacher_outputs() {
    let (inputs, spec, cfg, out) = tiny_dino(0.9);
    let pl = &out.pseudo_labels;
    assert_eq!(pl.inputs(), &inputs[..]);
    for i in 0..pl.len() {
        let t = teacher_forward(&out.teacher, &spec, pl.row(i), cfg.teacher_temp).unwrap();
        assert_eq!(pl.soft_labels()[i], t);
        assert!((t.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert_eq!(pl.hard_labels()[i], argmax(&t));
    }
}

#[test]
fn teacher_receives_no_gradient() {
    let (_, spec, cfg, out) = tiny_dino(1.0);
    // with momentum 1 the only teacher update is a no-op, so any change would
    // have to come from backpropagation
    assert_eq!(&out.teacher.params, init_model(&spec, cfg.seed).unwrap().params());
    assert_ne!(out.student.params(), init_model(&spec, cfg.seed).unwrap().params());
}

#[test]
fn training_is_reproducible() {
    let mut r = rng(5);
    let model = random_model(&mut r, 200);
    let data = random_batch(&mut r, model.spec().input_dim, model.spec().num_classes, 50);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, optimizer: OptimizerConfig::adamw(1e-2, 0.9, 0.999).with_weight_decay(0.1) };
    let run = || {
        let mut m = model.clone();
        let losses = train_loop(&mut m, &data, &cfg, 3, &[], &mut Plain).unwrap();
        (m, losses)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.params(), b.0.params());
    assert_eq!(a.1, b.1);
}
