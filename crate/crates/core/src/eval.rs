//! Evaluation metrics for trained hypothesis sets.

use serde::{Deserialize, Serialize};

use crate::datagen::{LabeledInput, Sample};
use crate::error::{Error, Result};
use crate::losses::{softmax, LossKind};
use crate::network::{HypothesisSet, MlpModel};

/// Mean over samples of the best hypothesis' loss.
pub fn oracle_min_loss(model: &MlpModel, samples: &[Sample], loss: LossKind) -> Result<f64> {
    oracle_min_loss_heads(model, samples, loss, model.num_hypotheses())
}

/// [`oracle_min_loss`] restricted to the first `k` heads.
pub fn oracle_min_loss_heads(model: &MlpModel, samples: &[Sample], loss: LossKind, k: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if k == 0 || k > model.num_hypotheses() {
        return Err(Error::invalid(format!(
            "head count {k} outside 1..={}",
            model.num_hypotheses()
        )));
    }
    let mut total = 0.0;
    for s in samples {
        let h = model.forward(&s.input)?;
        let mut best = f64::INFINITY;
        for j in 0..k {
            best = best.min(loss.loss(h.get(j), &s.target)?);
        }
        total += best;
    }
    Ok(total / samples.len() as f64)
}

/// Oracle-min loss for every nested head prefix `1..=M`.
pub fn oracle_min_curve(model: &MlpModel, samples: &[Sample], loss: LossKind) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let m = model.num_hypotheses();
    let mut totals = vec![0.0; m];
    for s in samples {
        let h = model.forward(&s.input)?;
        let mut best = f64::INFINITY;
        for (j, t) in totals.iter_mut().enumerate() {
            best = best.min(loss.loss(h.get(j), &s.target)?);
            *t += best;
        }
    }
    Ok(totals.into_iter().map(|t| t / samples.len() as f64).collect())
}

fn hypothesis_mean(h: &HypothesisSet) -> Vec<f64> {
    let mut mean = vec![0.0; h.dim()];
    for v in h.iter() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let m = h.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    mean
}

/// `(1/M) sum_j ||f^j - mean||_2`: mean distance of the hypotheses to their mean.
pub fn hypothesis_variance(h: &HypothesisSet) -> Result<f64> {
    if h.len() < 2 {
        return Err(Error::invalid("hypothesis spread needs at least two hypotheses"));
    }
    let mean = hypothesis_mean(h);
    let total: f64 = h
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum();
    Ok(total / h.len() as f64)
}

/// Per-coordinate variance across hypotheses (the per-pixel variance map for images).
pub fn variance_map(h: &HypothesisSet) -> Result<Vec<f64>> {
    if h.len() < 2 {
        return Err(Error::invalid("variance map needs at least two hypotheses"));
    }
    let mean = hypothesis_mean(h);
    let mut var = vec![0.0; h.dim()];
    for v in h.iter() {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let m = h.len() as f64;
    var.iter_mut().for_each(|v| *v /= m);
    Ok(var)
}

/// Mean squared forward-difference gradient magnitude over channels, pixels and
/// hypotheses. Each hypothesis is laid out channel-major, then row-major:
/// `index = (c * height + y) * width + x`. The difference across the far edge is 0.
pub fn sharpness(h: &HypothesisSet, width: usize, height: usize, channels: usize) -> Result<f64> {
    if width == 0 || height == 0 || channels == 0 || h.dim() != width * height * channels {
        return Err(Error::shape(format!(
            "hypothesis dim {} is not {width}x{height}x{channels}",
            h.dim()
        )));
    }
    let mut total = 0.0;
    for img in h.iter() {
        for plane in img.chunks_exact(width * height) {
            for y in 0..height {
                for x in 0..width {
                    let v = plane[y * width + x];
                    let gx = if x + 1 < width {
                        plane[y * width + x + 1] - v
                    } else {
                        0.0
                    };
                    let gy = if y + 1 < height {
                        plane[(y + 1) * width + x] - v
                    } else {
                        0.0
                    };
                    total += gx * gx + gy * gy;
                }
            }
        }
    }
    Ok(total / (channels * width * height * h.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultilabelScores {
    pub recall_at_m: f64,
    pub precision: f64,
}

/// Predicted label set = deduplicated per-hypothesis argmax (after softmax).
pub fn predicted_labels(h: &HypothesisSet) -> Vec<usize> {
    let mut labels: Vec<usize> = h
        .iter()
        .map(|logits| {
            let p = softmax(logits);
            // lowest index on ties
            p.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}

/// Mean fraction of true labels covered, and of predicted labels that are true.
pub fn multilabel_scores(model: &MlpModel, inputs: &[LabeledInput]) -> Result<MultilabelScores> {
    if inputs.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let (mut recall, mut precision) = (0.0, 0.0);
    for li in inputs {
        if li.labels.is_empty() {
            return Err(Error::invalid("empty label set"));
        }
        let predicted = predicted_labels(&model.forward(&li.input)?);
        let hits = predicted.iter().filter(|c| li.labels.contains(c)).count() as f64;
        let mut truth = li.labels.clone();
        truth.sort_unstable();
        truth.dedup();
        recall += hits / truth.len() as f64;
        precision += hits / predicted.len() as f64;
    }
    let n = inputs.len() as f64;
    Ok(MultilabelScores {
        recall_at_m: recall / n,
        precision: precision / n,
    })
}

/// Dataset means of [`hypothesis_variance`] and [`variance_map`].
pub fn mean_spread(model: &MlpModel, samples: &[Sample]) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut spread = 0.0;
    let mut map = vec![0.0; model.output_dim()];
    for s in samples {
        let h = model.forward(&s.input)?;
        spread += hypothesis_variance(&h)?;
        for (m, v) in map.iter_mut().zip(variance_map(&h)?) {
            *m += v;
        }
    }
    let n = samples.len() as f64;
    map.iter_mut().for_each(|v| *v /= n);
    Ok((spread / n, map))
}

pub fn mean_sharpness(
    model: &MlpModel,
    samples: &[Sample],
    width: usize,
    height: usize,
    channels: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut total = 0.0;
    for s in samples {
        total += sharpness(&model.forward(&s.input)?, width, height, channels)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_min_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shp_baseline_loss: Option<f64>,
    /// Per-output-coordinate variance across hypotheses, averaged over the data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_hypothesis_variance: Option<Vec<f64>>,
    /// Mean distance of hypotheses to their mean, averaged over the data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_hypothesis_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharpness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_recall_at_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_precision: Option<f64>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.oracle_min_loss,
            self.shp_baseline_loss,
            self.mean_hypothesis_variance,
            self.sharpness,
            self.label_recall_at_m,
            self.label_precision,
        ];
        let vector = self.per_hypothesis_variance.iter().flatten().copied();
        if scalars
            .into_iter()
            .flatten()
            .chain(vector)
            .any(|v| !(v.is_finite() && v >= 0.0))
        {
            return Err(Error::invalid("metrics must be finite and non-negative"));
        }
        Ok(())
    }
}
