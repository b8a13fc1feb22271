//! The multiple-hypothesis meta-loss and its training loop.
//!
//! For one sample, every hypothesis is scored with the base loss. Hypotheses may be
//! dropped (each independently, with `dropout_prob`; if all would drop, none do).
//! Among the active ones the best hypothesis gets weight `1 - epsilon` and the
//! other `A - 1` active hypotheses share `epsilon` equally. Dropped hypotheses get
//! weight zero. The meta-loss is the weighted sum of base losses, and gradients
//! flow to each hypothesis scaled by its weight.
//!
//! Training repeats: forward, assign, weighted gradients, backward, optimizer step.
//! With a fixed assignment this is one gradient step of Lloyd's method applied to
//! the network outputs.

use std::borrow::Cow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::losses::{LossKind, Target};
use crate::network::{Gradients, HypothesisSet, MlpModel, OptimizerState};
use crate::rng::{streams, SeedStream};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_DROPOUT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaLossConfig {
    #[serde(rename = "M")]
    pub num_hypotheses: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_dropout")]
    pub dropout_prob: f64,
    pub base_loss: LossKind,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

impl MetaLossConfig {
    pub fn new(num_hypotheses: usize, epsilon: f64, dropout_prob: f64, base_loss: LossKind) -> Result<Self> {
        let c = Self {
            num_hypotheses,
            epsilon,
            dropout_prob,
            base_loss,
        };
        c.validate()?;
        Ok(c)
    }

    /// Single-hypothesis baseline: plain base-loss training.
    pub fn single(base_loss: LossKind) -> Self {
        Self {
            num_hypotheses: 1,
            epsilon: DEFAULT_EPSILON,
            dropout_prob: 0.0,
            base_loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_hypotheses == 0 {
            return Err(Error::invalid("M must be at least 1"));
        }
        if self.num_hypotheses >= 2 && !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::invalid(format!(
                "dropout_prob must lie in [0, 1), got {}",
                self.dropout_prob
            )));
        }
        if let LossKind::TukeyBiweight { c } = self.base_loss {
            LossKind::tukey(c)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub best_index: usize,
    pub weights: Vec<f64>,
    pub per_hypothesis_losses: Vec<f64>,
    pub dropped_mask: Vec<bool>,
}

impl AssignmentResult {
    pub fn num_active(&self) -> usize {
        self.dropped_mask.iter().filter(|d| !**d).count()
    }
}

/// Draw the per-sample dropout mask. No randomness is consumed when dropout is off.
pub fn sample_dropout<R: Rng + ?Sized>(config: &MetaLossConfig, rng: &mut R) -> Vec<bool> {
    let m = config.num_hypotheses;
    if m == 1 || config.dropout_prob == 0.0 {
        return vec![false; m];
    }
    let mask: Vec<bool> = (0..m).map(|_| rng.random::<f64>() < config.dropout_prob).collect();
    if mask.iter().all(|d| *d) {
        vec![false; m]
    } else {
        mask
    }
}

pub fn assign<R: Rng + ?Sized>(
    config: &MetaLossConfig,
    hypotheses: &HypothesisSet,
    target: &Target,
    rng: &mut R,
) -> Result<AssignmentResult> {
    let mask = sample_dropout(config, rng);
    assign_with_mask(config, hypotheses, target, mask)
}

/// Assignment with an explicit dropout mask (`true` = dropped).
pub fn assign_with_mask(
    config: &MetaLossConfig,
    hypotheses: &HypothesisSet,
    target: &Target,
    mut dropped_mask: Vec<bool>,
) -> Result<AssignmentResult> {
    let m = config.num_hypotheses;
    if hypotheses.len() != m || dropped_mask.len() != m {
        return Err(Error::shape(format!(
            "expected {m} hypotheses and mask entries, got {} and {}",
            hypotheses.len(),
            dropped_mask.len()
        )));
    }
    if dropped_mask.iter().all(|d| *d) {
        dropped_mask.fill(false);
    }
    let per_hypothesis_losses = hypotheses
        .iter()
        .map(|h| config.base_loss.loss(h, target))
        .collect::<Result<Vec<f64>>>()?;

    let mut best_index = usize::MAX;
    for j in (0..m).filter(|&j| !dropped_mask[j]) {
        // strict `<` keeps the lowest index on ties
        if best_index == usize::MAX || per_hypothesis_losses[j] < per_hypothesis_losses[best_index] {
            best_index = j;
        }
    }

    let active = dropped_mask.iter().filter(|d| !**d).count();
    let weights = (0..m)
        .map(|j| {
            if dropped_mask[j] {
                0.0
            } else if active == 1 {
                1.0
            } else if j == best_index {
                1.0 - config.epsilon
            } else {
                config.epsilon / (active - 1) as f64
            }
        })
        .collect();

    Ok(AssignmentResult {
        best_index,
        weights,
        per_hypothesis_losses,
        dropped_mask,
    })
}

/// `sum_j w_j * L(f^j, y)`, with the base losses recomputed from `hypotheses`.
pub fn meta_loss(
    config: &MetaLossConfig,
    hypotheses: &HypothesisSet,
    target: &Target,
    assignment: &AssignmentResult,
) -> Result<f64> {
    check_assignment(config, hypotheses, assignment)?;
    let mut total = 0.0;
    for (h, &w) in hypotheses.iter().zip(&assignment.weights) {
        if w != 0.0 {
            total += w * config.base_loss.loss(h, target)?;
        }
    }
    Ok(total)
}

/// `w_j * dL/df^j` for every hypothesis.
pub fn meta_loss_upstream_grads(
    config: &MetaLossConfig,
    hypotheses: &HypothesisSet,
    target: &Target,
    assignment: &AssignmentResult,
) -> Result<Vec<Vec<f64>>> {
    let mut flat = vec![0.0; hypotheses.as_flat().len()];
    upstream_grads_into(config, hypotheses, target, assignment, &mut flat)?;
    Ok(flat.chunks_exact(hypotheses.dim()).map(<[f64]>::to_vec).collect())
}

fn upstream_grads_into(
    config: &MetaLossConfig,
    hypotheses: &HypothesisSet,
    target: &Target,
    assignment: &AssignmentResult,
    out: &mut [f64],
) -> Result<()> {
    check_assignment(config, hypotheses, assignment)?;
    for ((h, &w), g) in hypotheses
        .iter()
        .zip(&assignment.weights)
        .zip(out.chunks_exact_mut(hypotheses.dim()))
    {
        if w == 0.0 {
            g.fill(0.0);
            continue;
        }
        config.base_loss.loss_grad_into(h, target, g)?;
        if w != 1.0 {
            g.iter_mut().for_each(|v| *v *= w);
        }
    }
    Ok(())
}

fn check_assignment(config: &MetaLossConfig, hypotheses: &HypothesisSet, a: &AssignmentResult) -> Result<()> {
    if hypotheses.len() != config.num_hypotheses || a.weights.len() != config.num_hypotheses {
        return Err(Error::shape("assignment does not match the hypothesis count"));
    }
    Ok(())
}

/// Supplies the samples for each training epoch.
pub trait SampleSource {
    fn epoch_samples(&mut self, epoch: usize, rng: &mut ChaCha8Rng) -> Result<Cow<'_, [Sample]>>;
}

impl SampleSource for [Sample] {
    fn epoch_samples(&mut self, _epoch: usize, _rng: &mut ChaCha8Rng) -> Result<Cow<'_, [Sample]>> {
        Ok(Cow::Borrowed(self))
    }
}

impl SampleSource for Vec<Sample> {
    fn epoch_samples(&mut self, _epoch: usize, _rng: &mut ChaCha8Rng) -> Result<Cow<'_, [Sample]>> {
        Ok(Cow::Borrowed(self.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_meta_loss: f64,
    pub oracle_min_loss: f64,
    pub wall_ms: u64,
}

/// Train `model` in place; returns one [`EpochMetrics`] per epoch.
///
/// Reported losses are accumulated during the epoch, before each batch's update.
pub fn train<S: SampleSource + ?Sized>(
    model: &mut MlpModel,
    source: &mut S,
    config: &MetaLossConfig,
    optimizer: &mut OptimizerState,
    schedule: &TrainSchedule,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if schedule.batch_size == 0 || schedule.epochs == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    if model.num_hypotheses() != config.num_hypotheses {
        return Err(Error::shape(format!(
            "model has {} heads but config asks for M = {}",
            model.num_hypotheses(),
            config.num_hypotheses
        )));
    }

    let seeds = SeedStream::new(schedule.seed);
    let mut data_rng = seeds.stream(streams::DATA);
    let mut shuffle_rng = seeds.stream(streams::SHUFFLE);
    let mut dropout_rng = seeds.stream(streams::DROPOUT);

    let out_len = model.num_hypotheses() * model.output_dim();
    let mut grads = Gradients::zeros_like(model);
    let mut upstream = vec![0.0; out_len];
    let mut log = Vec::with_capacity(schedule.epochs);

    for epoch in 1..=schedule.epochs {
        let started = Instant::now();
        let samples = source.epoch_samples(epoch, &mut data_rng)?;
        if samples.is_empty() {
            return Err(Error::invalid("training data is empty"));
        }
        for s in samples.iter() {
            model.check_input(&s.input)?;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut meta_sum = 0.0;
        let mut oracle_sum = 0.0;
        for (batch, idx) in order.chunks(schedule.batch_size).enumerate() {
            grads.fill_zero();
            for &i in idx {
                let sample = &samples[i];
                let trace = model.forward_trace(&sample.input);
                let hyps = HypothesisSet::new(model.output_dim(), trace.output().to_vec())?;
                let assignment = assign(config, &hyps, &sample.target, &mut dropout_rng)?;
                let loss = meta_loss(config, &hyps, &sample.target, &assignment)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch,
                        detail: format!("non-finite meta-loss {loss}"),
                    });
                }
                meta_sum += loss;
                oracle_sum += assignment
                    .per_hypothesis_losses
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                upstream_grads_into(config, &hyps, &sample.target, &assignment, &mut upstream)?;
                model.backward_trace(&trace, &upstream, &mut grads);
            }
            grads.scale(1.0 / idx.len() as f64);
            optimizer.step(model, &grads).map_err(|e| match e {
                Error::NonFiniteGradient { layer } => Error::Diverged {
                    epoch,
                    batch,
                    detail: format!("non-finite gradient in layer {layer}"),
                },
                other => other,
            })?;
        }

        let n = samples.len() as f64;
        let metrics = EpochMetrics {
            epoch,
            mean_meta_loss: meta_sum / n,
            oracle_min_loss: oracle_sum / n,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::debug!(
            "epoch {epoch}: meta {:.6} oracle {:.6}",
            metrics.mean_meta_loss,
            metrics.oracle_min_loss
        );
        on_epoch(&metrics);
        log.push(metrics);
    }
    Ok(log)
}
