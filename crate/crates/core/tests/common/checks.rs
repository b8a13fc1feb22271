//! Gradient and reduction checks shared by the test targets.

use mhp::losses::TUKEY_DEFAULT_C;
use mhp::mhp::{assign, assign_with_mask, meta_loss, meta_loss_upstream_grads};
use mhp::{HypothesisSet, LossKind, MetaLossConfig, Target};
use rand::Rng;

use super::{flat_params, numeric_grad, random_model, relative_error, rng, uniform_vec, with_params};

pub const LOSS_KINDS: [LossKind; 3] = [
    LossKind::L2,
    LossKind::CrossEntropy,
    LossKind::TukeyBiweight { c: TUKEY_DEFAULT_C },
];

pub fn random_target(r: &mut impl Rng, loss: LossKind, dim: usize) -> Target {
    if loss.is_classification() {
        Target::Class(r.random_range(0..dim))
    } else {
        Target::Vector(uniform_vec(r, dim, -3.0, 3.0))
    }
}

/// Worst relative error of analytic vs numeric loss gradients over `cases`
/// random points per loss kind.
pub fn loss_gradient_error(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, loss) in LOSS_KINDS.into_iter().enumerate() {
        for case in 0..cases {
            let mut r = rng(1000 * k as u64 + case);
            let dim = r.random_range(1..6);
            let pred = uniform_vec(&mut r, dim, -4.0, 4.0);
            let target = random_target(&mut r, loss, dim);
            let analytic = loss.loss_grad(&pred, &target).unwrap();
            let numeric = numeric_grad(&pred, |p| loss.loss(p, &target).unwrap());
            worst = worst.max(relative_error(&analytic, &numeric));
        }
    }
    worst
}

/// Same for the meta-loss with respect to all hypotheses, assignment and
/// dropout mask held at their values for the unperturbed point.
pub fn meta_loss_gradient_error(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, loss) in LOSS_KINDS.into_iter().enumerate() {
        for case in 0..cases {
            let mut r = rng(50_000 + 1000 * k as u64 + case);
            let m = r.random_range(1..7);
            let dim = r.random_range(2..5);
            let config = MetaLossConfig::new(m, 0.05, 0.3, loss).unwrap();
            let flat = uniform_vec(&mut r, m * dim, -4.0, 4.0);
            let target = random_target(&mut r, loss, dim);
            let hyps = HypothesisSet::new(dim, flat.clone()).unwrap();
            let a = assign(&config, &hyps, &target, &mut r).unwrap();
            let analytic: Vec<f64> = meta_loss_upstream_grads(&config, &hyps, &target, &a).unwrap().concat();
            let numeric = numeric_grad(&flat, |v| {
                let h = HypothesisSet::new(dim, v.to_vec()).unwrap();
                let probe = assign_with_mask(&config, &h, &target, a.dropped_mask.clone()).unwrap();
                assert_eq!(probe.weights, a.weights, "assignment moved under the probe");
                meta_loss(&config, &h, &target, &probe).unwrap()
            });
            worst = worst.max(relative_error(&analytic, &numeric));
        }
    }
    worst
}

/// Same for every parameter of small networks (at most 500 parameters) under
/// the meta-loss with fixed assignment weights.
pub fn mlp_gradient_error(cases: u64) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for (k, loss) in LOSS_KINDS.into_iter().enumerate() {
        for case in 0..cases {
            let seed = 90_000 + 1000 * k as u64 + case;
            let mut r = rng(seed + 7);
            let input = r.random_range(1..4);
            let hidden = [r.random_range(3..11), r.random_range(3..11)];
            let out = r.random_range(2..4);
            let heads = r.random_range(1..5);
            let model = random_model(seed, input, &hidden, out, heads);
            largest = largest.max(model.num_parameters());
            assert!(model.num_parameters() <= 500);

            let x = uniform_vec(&mut r, input, -1.0, 1.0);
            let target = random_target(&mut r, loss, out);
            let config = MetaLossConfig::new(heads, 0.05, 0.0, loss).unwrap();
            let hyps = model.forward(&x).unwrap();
            let a = assign(&config, &hyps, &target, &mut r).unwrap();
            let upstream = meta_loss_upstream_grads(&config, &hyps, &target, &a).unwrap();
            let analytic = model.backward(&x, &upstream).unwrap().flat();

            let params = flat_params(&model);
            let numeric = numeric_grad(&params, |p| {
                let h = with_params(&model, p).forward(&x).unwrap();
                meta_loss(&config, &h, &target, &a).unwrap()
            });
            worst = worst.max(relative_error(&analytic, &numeric));
        }
    }
    (worst, largest)
}

pub struct ReductionReport {
    pub cases: usize,
    /// Cases where the M = 1 meta-loss differed from the base loss in any bit.
    pub single_mismatches: usize,
    pub max_weight_sum_error: f64,
}

/// M = 1 reduces to the base loss, and weights always sum to one.
pub fn reduction_law(cases_per_kind: u64) -> ReductionReport {
    let mut report = ReductionReport {
        cases: 0,
        single_mismatches: 0,
        max_weight_sum_error: 0.0,
    };
    for (k, loss) in LOSS_KINDS.into_iter().enumerate() {
        for case in 0..cases_per_kind {
            let mut r = rng(200_000 + 1000 * k as u64 + case);
            let dim = r.random_range(1..6);
            let pred = uniform_vec(&mut r, dim, -5.0, 5.0);
            let target = random_target(&mut r, loss, dim);
            let single = MetaLossConfig::single(loss);
            let h = HypothesisSet::new(dim, pred.clone()).unwrap();
            let a = assign(&single, &h, &target, &mut r).unwrap();
            let ml = meta_loss(&single, &h, &target, &a).unwrap();
            let base = loss.loss(&pred, &target).unwrap();
            report.cases += 1;
            if ml.to_bits() != base.to_bits() {
                report.single_mismatches += 1;
            }
            for m in 2..=10 {
                for eps in [0.01, 0.05, 0.3] {
                    for dropout in [0.0, 0.01, 0.5] {
                        let config = MetaLossConfig::new(m, eps, dropout, loss).unwrap();
                        let hyps = HypothesisSet::new(dim, uniform_vec(&mut r, m * dim, -5.0, 5.0)).unwrap();
                        let a = assign(&config, &hyps, &target, &mut r).unwrap();
                        let sum: f64 = a.weights.iter().sum();
                        report.max_weight_sum_error = report.max_weight_sum_error.max((sum - 1.0).abs());
                    }
                }
            }
        }
    }
    report
}
