#![allow(dead_code)]

pub mod checks;

use mhp::{MlpModel, SeedStream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

/// `||a - b|| / max(||a||, ||b||)`, 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    SeedStream::new(seed).stream(100)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// A small model with every parameter, biases included, randomized.
pub fn random_model(seed: u64, input: usize, hidden: &[usize], output: usize, heads: usize) -> MlpModel {
    let mut r = rng(seed);
    let mut model = MlpModel::new(input, hidden, output, heads, &mut r).unwrap();
    for p in model.params_mut() {
        *p += r.random_range(-0.3..0.3);
    }
    model
}

pub fn flat_params(model: &MlpModel) -> Vec<f64> {
    let mut m = model.clone();
    m.params_mut().map(|p| *p).collect()
}

pub fn with_params(model: &MlpModel, values: &[f64]) -> MlpModel {
    let mut m = model.clone();
    for (p, v) in m.params_mut().zip(values) {
        *p = *v;
    }
    m
}
