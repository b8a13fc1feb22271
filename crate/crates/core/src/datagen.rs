//! Seeded synthetic tasks.
//!
//! - `temporal2d`: a 2D label distribution over the square `[-1, 1]^2` that moves
//!   mass from the lower-left/upper-right quadrants (t = 0) to the upper-left/
//!   lower-right quadrants (t = 1), uniform at t = 0.5.
//! - `multilabel`: points near class centers on a circle, each carrying a set of
//!   true labels; every draw emits one label picked uniformly from the set.
//! - `gridframe`: a dot on a small grid that ends at one of several terminal cells.
//! - `gmm`: ancestral sampling from a Gaussian mixture.

use std::borrow::Cow;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Target;
use crate::mhp::SampleSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Target,
}

impl Sample {
    pub fn regression(input: Vec<f64>, target: Vec<f64>) -> Self {
        Self {
            input,
            target: Target::Vector(target),
        }
    }
}

// ---------------------------------------------------------------------------
// temporal 2D
// ---------------------------------------------------------------------------

/// Quadrant of a point: `Some(1..=4)` for S1..S4, `None` for S5 (outside the square).
///
/// `S1 = [-1,0)x[-1,0)`, `S2 = [-1,0)x[0,1]`, `S3 = [0,1]x[-1,0)`, `S4 = [0,1]x[0,1]`.
pub fn temporal2d_region(y: &[f64]) -> Option<u8> {
    let (x, y) = (*y.first()?, *y.get(1)?);
    if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
        return None;
    }
    Some(match (x < 0.0, y < 0.0) {
        (true, true) => 1,
        (true, false) => 2,
        (false, true) => 3,
        (false, false) => 4,
    })
}

/// `[p(S1), p(S2), p(S3), p(S4)]` at time `t`.
pub fn temporal2d_probabilities(t: f64) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t must lie in [0, 1], got {t}")));
    }
    let diag = (1.0 - t) / 2.0;
    let anti = t / 2.0;
    Ok([diag, anti, anti, diag])
}

pub fn sample_temporal2d_point<R: Rng + ?Sized>(t: f64, rng: &mut R) -> Result<[f64; 2]> {
    let probs = temporal2d_probabilities(t)?;
    let region = WeightedIndex::new(probs)
        .map_err(|e| Error::invalid(e.to_string()))?
        .sample(rng);
    let neg = |rng: &mut R| rng.random_range(-1.0..0.0);
    let pos = |rng: &mut R| rng.random_range(0.0..=1.0);
    Ok(match region {
        0 => [neg(rng), neg(rng)],
        1 => [neg(rng), pos(rng)],
        2 => [pos(rng), neg(rng)],
        _ => [pos(rng), pos(rng)],
    })
}

/// `n` samples at a fixed `t`; input is `[t]`, target the 2D point.
pub fn sample_temporal2d<R: Rng + ?Sized>(t: f64, n: usize, rng: &mut R) -> Result<Vec<Sample>> {
    temporal2d_probabilities(t)?;
    (0..n)
        .map(|_| Ok(Sample::regression(vec![t], sample_temporal2d_point(t, rng)?.to_vec())))
        .collect()
}

/// `n` samples with `t ~ Uniform[0, 1]` drawn per sample.
pub fn sample_temporal2d_mixed_t<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..=1.0);
            let y = sample_temporal2d_point(t, rng).expect("t drawn inside [0, 1]");
            Sample::regression(vec![t], y.to_vec())
        })
        .collect()
}

/// Fresh temporal-2D draws every epoch.
#[derive(Debug, Clone)]
pub struct Temporal2dSource {
    pub n: usize,
    /// Fixed time, or `None` for `t ~ Uniform[0, 1]`.
    pub t: Option<f64>,
    buffer: Vec<Sample>,
}

impl Temporal2dSource {
    pub fn new(n: usize, t: Option<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        if let Some(t) = t {
            temporal2d_probabilities(t)?;
        }
        Ok(Self {
            n,
            t,
            buffer: Vec::new(),
        })
    }
}

impl SampleSource for Temporal2dSource {
    fn epoch_samples(&mut self, _epoch: usize, rng: &mut ChaCha8Rng) -> Result<Cow<'_, [Sample]>> {
        self.buffer = match self.t {
            Some(t) => sample_temporal2d(t, self.n, rng)?,
            None => sample_temporal2d_mixed_t(self.n, rng),
        };
        Ok(Cow::Borrowed(&self.buffer))
    }
}

// ---------------------------------------------------------------------------
// multi-label
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelSpec {
    pub num_classes: usize,
    /// Candidate true-label sets; each input picks one uniformly.
    pub label_sets: Vec<Vec<usize>>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

fn default_radius() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.1
}

impl MultiLabelSpec {
    /// `C` classes, label sets `{i, i+1 mod C}`. Adjacent pairs keep the set
    /// midpoints distinct, so the label set is identifiable from the input.
    pub fn adjacent_pairs(num_classes: usize) -> Self {
        Self {
            num_classes,
            label_sets: (0..num_classes).map(|i| vec![i, (i + 1) % num_classes]).collect(),
            radius: default_radius(),
            noise_std: default_noise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.label_sets.is_empty() {
            return Err(Error::invalid("multilabel spec needs classes and label sets"));
        }
        for set in &self.label_sets {
            if set.is_empty() {
                return Err(Error::invalid("empty label set"));
            }
            if let Some(bad) = set.iter().find(|&&c| c >= self.num_classes) {
                return Err(Error::invalid(format!("label {bad} out of range")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite() && self.radius.is_finite()) {
            return Err(Error::invalid("noise_std and radius must be finite, noise_std >= 0"));
        }
        Ok(())
    }

    pub fn center(&self, class: usize) -> [f64; 2] {
        let angle = 2.0 * std::f64::consts::PI * class as f64 / self.num_classes as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }
}

/// An input together with its full set of true labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInput {
    pub input: Vec<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample: Sample,
    pub labels: Vec<usize>,
}

pub fn multilabel_inputs<R: Rng + ?Sized>(spec: &MultiLabelSpec, n: usize, rng: &mut R) -> Result<Vec<LabeledInput>> {
    spec.validate()?;
    Ok((0..n)
        .map(|_| {
            let labels = spec.label_sets[rng.random_range(0..spec.label_sets.len())].clone();
            let mut input = vec![0.0; 2];
            for &c in &labels {
                let center = spec.center(c);
                input[0] += center[0] / labels.len() as f64;
                input[1] += center[1] / labels.len() as f64;
            }
            for v in input.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += spec.noise_std * z;
            }
            LabeledInput { input, labels }
        })
        .collect())
}

/// One label drawn uniformly from a non-empty set.
pub fn draw_label<R: Rng + ?Sized>(labels: &[usize], rng: &mut R) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::invalid("empty label set"));
    }
    Ok(labels[rng.random_range(0..labels.len())])
}

pub fn sample_multilabel<R: Rng + ?Sized>(spec: &MultiLabelSpec, n: usize, rng: &mut R) -> Result<Vec<LabeledSample>> {
    multilabel_inputs(spec, n, rng)?
        .into_iter()
        .map(|li| {
            let class = draw_label(&li.labels, rng)?;
            Ok(LabeledSample {
                sample: Sample {
                    input: li.input,
                    target: Target::Class(class),
                },
                labels: li.labels,
            })
        })
        .collect()
}

/// Fixed inputs, fresh single-label draws every epoch.
#[derive(Debug, Clone)]
pub struct MultiLabelSource {
    pub inputs: Vec<LabeledInput>,
    buffer: Vec<Sample>,
}

impl MultiLabelSource {
    pub fn new(inputs: Vec<LabeledInput>) -> Result<Self> {
        if inputs.iter().any(|i| i.labels.is_empty()) {
            return Err(Error::invalid("empty label set"));
        }
        Ok(Self {
            inputs,
            buffer: Vec::new(),
        })
    }
}

impl SampleSource for MultiLabelSource {
    fn epoch_samples(&mut self, _epoch: usize, rng: &mut ChaCha8Rng) -> Result<Cow<'_, [Sample]>> {
        self.buffer = self
            .inputs
            .iter()
            .map(|li| {
                Ok(Sample {
                    input: li.input.clone(),
                    target: Target::Class(draw_label(&li.labels, rng)?),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Cow::Borrowed(&self.buffer))
    }
}

// ---------------------------------------------------------------------------
// grid frames
// ---------------------------------------------------------------------------

/// Separable `[1, 2, 1] / 4` smoothing; total mass 1.
const KERNEL_1D: [f64; 3] = [0.25, 0.5, 0.25];

/// Sum of one rasterized frame.
pub const KERNEL_MASS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFrameSpec {
    pub width: usize,
    pub height: usize,
    /// `[x, y]` of the dot in the first frame.
    pub start: [usize; 2],
    pub terminals: Vec<[usize; 2]>,
    pub probabilities: Vec<f64>,
}

impl Default for GridFrameSpec {
    /// 8x8, dot entering from the bottom, three equally likely exits.
    fn default() -> Self {
        Self::equiprobable(8, 8, [3, 6], vec![[1, 3], [3, 1], [6, 3]])
    }
}

impl GridFrameSpec {
    pub fn equiprobable(width: usize, height: usize, start: [usize; 2], terminals: Vec<[usize; 2]>) -> Self {
        let k = terminals.len().max(1);
        Self {
            width,
            height,
            start,
            probabilities: vec![1.0 / k as f64; terminals.len()],
            terminals,
        }
    }

    /// 8x8 with twelve equally likely exits, enough for every head of a 10-MHP
    /// model to own at least one.
    pub fn many_exits() -> Self {
        Self::equiprobable(
            8,
            8,
            [3, 6],
            vec![
                [1, 1],
                [3, 1],
                [5, 1],
                [6, 2],
                [1, 3],
                [3, 3],
                [5, 3],
                [6, 4],
                [1, 5],
                [4, 5],
                [6, 6],
                [1, 6],
            ],
        )
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::invalid("grid must be at least 3x3"));
        }
        for p in std::iter::once(&self.start).chain(&self.terminals) {
            // the 3x3 footprint must stay on the grid
            if p[0] < 1 || p[1] < 1 || p[0] + 1 >= self.width || p[1] + 1 >= self.height {
                return Err(Error::invalid(format!(
                    "position {p:?} outside the {}x{} grid interior",
                    self.width, self.height
                )));
            }
        }
        if self.terminals.is_empty() || self.terminals.len() != self.probabilities.len() {
            return Err(Error::invalid(
                "need one probability per terminal, at least one terminal",
            ));
        }
        if self.probabilities.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(Error::invalid("terminal probabilities must be non-negative"));
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("terminal probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Row-major `height x width` frame with the smoothed dot at `pos`.
    pub fn rasterize(&self, pos: [usize; 2]) -> Vec<f64> {
        let mut frame = vec![0.0; self.num_pixels()];
        for (dy, ky) in KERNEL_1D.iter().enumerate() {
            for (dx, kx) in KERNEL_1D.iter().enumerate() {
                let x = pos[0] + dx - 1;
                let y = pos[1] + dy - 1;
                frame[y * self.width + x] = kx * ky;
            }
        }
        frame
    }

    pub fn draw_terminal<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        Ok(WeightedIndex::new(&self.probabilities)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(rng))
    }
}

/// Input is the first frame, target the final frame, both flattened.
pub fn sample_gridframe<R: Rng + ?Sized>(spec: &GridFrameSpec, n: usize, rng: &mut R) -> Result<Vec<Sample>> {
    spec.validate()?;
    let first = spec.rasterize(spec.start);
    let finals: Vec<Vec<f64>> = spec.terminals.iter().map(|&p| spec.rasterize(p)).collect();
    (0..n)
        .map(|_| {
            let k = spec.draw_terminal(rng)?;
            Ok(Sample::regression(first.clone(), finals[k].clone()))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gaussian mixtures
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
}

impl GaussianMixtureSpec {
    /// Two unit-covariance components at `(+-separation, 0)`, equal weight.
    pub fn symmetric_pair(separation: f64) -> Self {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        Self {
            means: vec![vec![-separation, 0.0], vec![separation, 0.0]],
            covariances: vec![eye.clone(), eye],
            weights: vec![0.5, 0.5],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    factors: Vec<Vec<Vec<f64>>>,
    picker: WeightedIndex<f64>,
}

impl GaussianMixture {
    pub fn new(spec: &GaussianMixtureSpec) -> Result<Self> {
        let k = spec.means.len();
        if k == 0 || spec.covariances.len() != k || spec.weights.len() != k {
            return Err(Error::invalid("mixture needs matching means, covariances and weights"));
        }
        let d = spec.dim();
        if d == 0
            || spec
                .means
                .iter()
                .any(|m| m.len() != d || m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("component means must share a positive dimension"));
        }
        let total: f64 = spec.weights.iter().sum();
        if spec.weights.iter().any(|w| w.is_nan() || *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixture weights must be >= 0 and sum to 1 (got {total})"
            )));
        }
        let factors = spec
            .covariances
            .iter()
            .enumerate()
            .map(|(i, c)| {
                cholesky(c, d)
                    .ok_or_else(|| Error::invalid(format!("covariance {i} is not symmetric positive-definite")))
            })
            .collect::<Result<Vec<_>>>()?;
        let picker = WeightedIndex::new(&spec.weights).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            means: spec.means.clone(),
            factors,
            picker,
        })
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let k = self.picker.sample(rng);
        let d = self.means[k].len();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let l = &self.factors[k];
        let y = (0..d)
            .map(|i| self.means[k][i] + (0..=i).map(|j| l[i][j] * z[j]).sum::<f64>())
            .collect();
        (k, y)
    }
}

/// Lower-triangular `L` with `L L^T = a`, or `None` if `a` is not SPD.
#[allow(clippy::needless_range_loop)]
fn cholesky(a: &[Vec<f64>], d: usize) -> Option<Vec<Vec<f64>>> {
    if a.len() != d || a.iter().any(|r| r.len() != d) {
        return None;
    }
    for i in 0..d {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + a[i][j].abs()) {
                return None;
            }
        }
    }
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if v.is_nan() || v <= 0.0 {
                    return None;
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

pub fn sample_gaussian_mixture<R: Rng + ?Sized>(
    spec: &GaussianMixtureSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let gmm = GaussianMixture::new(spec)?;
    Ok((0..n).map(|_| gmm.sample_one(rng).1).collect())
}

// ---------------------------------------------------------------------------
// task specs and materialized datasets
// ---------------------------------------------------------------------------

/// A generator and its parameters, as named in configs and dataset sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskSpec {
    Temporal2d {
        /// Fixed time; absent means `t ~ Uniform[0, 1]` per sample.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t: Option<f64>,
    },
    Multilabel(MultiLabelSpec),
    Gridframe(GridFrameSpec),
    Gmm(GaussianMixtureSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Vector { dim: usize },
    Class { num_classes: usize },
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Temporal2d { .. } => "temporal2d",
            TaskSpec::Multilabel(_) => "multilabel",
            TaskSpec::Gridframe(_) => "gridframe",
            TaskSpec::Gmm(_) => "gmm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::Temporal2d { t: Some(t) } => temporal2d_probabilities(*t).map(|_| ()),
            TaskSpec::Temporal2d { t: None } => Ok(()),
            TaskSpec::Multilabel(s) => s.validate(),
            TaskSpec::Gridframe(s) => s.validate(),
            TaskSpec::Gmm(s) => GaussianMixture::new(s).map(|_| ()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskSpec::Temporal2d { .. } | TaskSpec::Gmm(_) => 1,
            TaskSpec::Multilabel(_) => 2,
            TaskSpec::Gridframe(s) => s.num_pixels(),
        }
    }

    pub fn target_kind(&self) -> TargetKind {
        match self {
            TaskSpec::Temporal2d { .. } => TargetKind::Vector { dim: 2 },
            TaskSpec::Multilabel(s) => TargetKind::Class {
                num_classes: s.num_classes,
            },
            TaskSpec::Gridframe(s) => TargetKind::Vector { dim: s.num_pixels() },
            TaskSpec::Gmm(s) => TargetKind::Vector { dim: s.dim() },
        }
    }

    /// Output width of one hypothesis: target dim, or class count for logits.
    pub fn hypothesis_dim(&self) -> usize {
        match self.target_kind() {
            TargetKind::Vector { dim } => dim,
            TargetKind::Class { num_classes } => num_classes,
        }
    }
}

/// Materialized samples plus, for multi-label tasks, each sample's true label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskSpec,
    pub samples: Vec<Sample>,
    pub label_sets: Option<Vec<Vec<usize>>>,
}

impl Dataset {
    pub fn generate<R: Rng + ?Sized>(task: &TaskSpec, n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        task.validate()?;
        let (samples, label_sets) = match task {
            TaskSpec::Temporal2d { t: Some(t) } => (sample_temporal2d(*t, n, rng)?, None),
            TaskSpec::Temporal2d { t: None } => (sample_temporal2d_mixed_t(n, rng), None),
            TaskSpec::Multilabel(spec) => {
                let drawn = sample_multilabel(spec, n, rng)?;
                let sets = drawn.iter().map(|d| d.labels.clone()).collect();
                (drawn.into_iter().map(|d| d.sample).collect(), Some(sets))
            }
            TaskSpec::Gridframe(spec) => (sample_gridframe(spec, n, rng)?, None),
            TaskSpec::Gmm(spec) => {
                let ys = sample_gaussian_mixture(spec, n, rng)?;
                (ys.into_iter().map(|y| Sample::regression(vec![0.0], y)).collect(), None)
            }
        };
        Ok(Self {
            task: task.clone(),
            samples,
            label_sets,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labeled_inputs(&self) -> Option<Vec<LabeledInput>> {
        let sets = self.label_sets.as_ref()?;
        Some(
            self.samples
                .iter()
                .zip(sets)
                .map(|(s, l)| LabeledInput {
                    input: s.input.clone(),
                    labels: l.clone(),
                })
                .collect(),
        )
    }

    /// Target vectors of a regression dataset.
    pub fn target_vectors(&self) -> Result<Vec<Vec<f64>>> {
        self.samples
            .iter()
            .map(|s| {
                s.target
                    .as_vector()
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::invalid("dataset has class targets, not vectors"))
            })
            .collect()
    }
}
