//! Dense feed-forward network with `M` output heads.
//!
//! The last layer has width `M * output_dim`; hypothesis `j` is the contiguous block
//! `[j * output_dim, (j + 1) * output_dim)`. Weights are row-major `(out, in)`.
//!
//! Shape errors are returned, not panicked on; the training loop calls the
//! unchecked `*_trace` variants after validating once per dataset.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Std of the independent per-head perturbation added at initialization.
pub const HEAD_INIT_NOISE: f64 = 0.01;

/// Numerical floor inside the RMSProp square root.
pub const RMSPROP_DELTA: f64 = 1e-8;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn affine_into(&self, input: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim))
            .zip(&self.bias)
        {
            *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

/// The `M` predictions for one input, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    dim: usize,
    values: Vec<f64>,
}

impl HypothesisSet {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::shape(format!(
                "{} values do not split into hypotheses of dim {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::shape("hypotheses have differing dimensions"));
        }
        Self::new(dim, vectors.concat())
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// The first `k` hypotheses.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            dim: self.dim,
            values: self.values[..k * self.dim].to_vec(),
        }
    }

    pub fn to_vectors(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }
}

/// Pre- and post-activation values of one forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[k + 1]` the output of layer `k`.
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace always holds the input")
    }
}

/// Per-parameter gradients (or optimizer buffers) mirroring an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= alpha);
        }
    }

    /// All values, layer by layer, weights (row-major) before bias.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn same_shape(&self, model: &MlpModel) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
    output_dim: usize,
    num_hypotheses: usize,
}

impl MlpModel {
    /// Build from explicit layers. The last layer must be `Identity` with width
    /// `num_hypotheses * output_dim`.
    pub fn from_layers(layers: Vec<Dense>, output_dim: usize, num_hypotheses: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("model needs at least one layer"));
        }
        if output_dim == 0 || num_hypotheses == 0 {
            return Err(Error::invalid("output_dim and num_hypotheses must be positive"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::shape(format!("layer {k} has a zero dimension")));
            }
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::shape(format!("layer {k} parameter lengths disagree with dims")));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.in_dim != l.out_dim {
                    return Err(Error::shape(format!(
                        "layer {} expects {} inputs but layer {k} emits {}",
                        k + 1,
                        next.in_dim,
                        l.out_dim
                    )));
                }
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {k} has non-finite parameters")));
            }
        }
        let last = layers.last().unwrap();
        if last.out_dim != output_dim * num_hypotheses {
            return Err(Error::shape(format!(
                "output layer width {} != {num_hypotheses} hypotheses x {output_dim}",
                last.out_dim
            )));
        }
        if last.activation != Activation::Identity {
            return Err(Error::invalid("output layer must use the identity activation"));
        }
        Ok(Self {
            layers,
            output_dim,
            num_hypotheses,
        })
    }

    /// ReLU trunk with He-normal init and an `M`-headed linear output layer.
    ///
    /// Every head starts from one shared block plus independent N(0, 0.01^2) noise on
    /// weights and biases, so heads begin close together but not identical.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        num_hypotheses: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::shape("layer widths must be positive"));
        }
        if output_dim == 0 || num_hypotheses == 0 {
            return Err(Error::invalid("output_dim and num_hypotheses must be positive"));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden {
            let mut layer = Dense::zeros(fan_in, width, Activation::Relu);
            let normal = gaussian((2.0 / fan_in as f64).sqrt());
            layer.weights.iter_mut().for_each(|w| *w = normal.sample(rng));
            layers.push(layer);
            fan_in = width;
        }

        let base = gaussian((1.0 / fan_in as f64).sqrt());
        let block: Vec<f64> = (0..output_dim * fan_in).map(|_| base.sample(rng)).collect();
        let noise = gaussian(HEAD_INIT_NOISE);
        let mut head = Dense::zeros(fan_in, output_dim * num_hypotheses, Activation::Identity);
        for chunk in head.weights.chunks_exact_mut(block.len()) {
            for (w, b) in chunk.iter_mut().zip(&block) {
                *w = b + noise.sample(rng);
            }
        }
        head.bias.iter_mut().for_each(|b| *b = noise.sample(rng));
        layers.push(head);

        Self::from_layers(layers, output_dim, num_hypotheses)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn num_hypotheses(&self) -> usize {
        self.num_hypotheses
    }

    /// `[input, hidden..., output]` widths.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mutable view over every parameter in [`Gradients::flat`] order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input contains non-finite values"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<HypothesisSet> {
        self.check_input(x)?;
        let trace = self.forward_trace(x);
        let out = trace.activations.into_iter().last().unwrap();
        HypothesisSet::new(self.output_dim, out)
    }

    /// Forward pass keeping intermediates. The input must already be validated.
    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut z = vec![0.0; layer.out_dim];
            layer.affine_into(activations.last().unwrap(), &mut z);
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            activations.push(a);
        }
        Trace { activations, pre }
    }

    /// Gradient of `sum_j <upstream_j, f^j(x)>` with respect to every parameter.
    pub fn backward(&self, x: &[f64], upstream: &[Vec<f64>]) -> Result<Gradients> {
        self.check_input(x)?;
        if upstream.len() != self.num_hypotheses || upstream.iter().any(|g| g.len() != self.output_dim) {
            return Err(Error::shape(format!(
                "upstream gradients must be {} vectors of length {}",
                self.num_hypotheses, self.output_dim
            )));
        }
        let trace = self.forward_trace(x);
        let mut grads = Gradients::zeros_like(self);
        self.backward_trace(&trace, &upstream.concat(), &mut grads);
        Ok(grads)
    }

    /// Accumulates (`+=`) parameter gradients for a flat upstream gradient.
    pub fn backward_trace(&self, trace: &Trace, upstream: &[f64], grads: &mut Gradients) {
        debug_assert_eq!(upstream.len(), self.layers.last().unwrap().out_dim);
        let mut delta: Vec<f64> = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            for (d, z) in delta.iter_mut().zip(&trace.pre[k]) {
                *d *= layer.activation.derivative(*z);
            }
            let input = &trace.activations[k];
            let g = &mut grads.layers[k];
            for ((row, d), gb) in g
                .weights
                .chunks_exact_mut(layer.in_dim)
                .zip(&delta)
                .zip(g.bias.iter_mut())
            {
                if *d == 0.0 {
                    continue;
                }
                *gb += d;
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if k > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (row, d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                    if *d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                delta = prev;
            }
        }
    }
}

fn gaussian(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std is finite and positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `v <- mu v - lr g; theta <- theta + v`
    SgdMomentum { learning_rate: f64, momentum: f64 },
    /// `s <- rho s + (1 - rho) g^2; theta <- theta - lr g / sqrt(s + 1e-8)`
    #[serde(rename = "rmsprop")]
    RmsProp { learning_rate: f64, decay: f64 },
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        let (lr, coef, name) = match *self {
            OptimizerKind::SgdMomentum {
                learning_rate,
                momentum,
            } => (learning_rate, momentum, "momentum"),
            OptimizerKind::RmsProp { learning_rate, decay } => (learning_rate, decay, "decay"),
        };
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&coef) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1), got {coef}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Velocity (SGD) or running squared-gradient mean (RMSProp).
    pub buffers: Gradients,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &MlpModel) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            buffers: Gradients::zeros_like(model),
        })
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if !grads.same_shape(model) || !self.buffers.same_shape(model) {
            return Err(Error::shape("gradient or optimizer buffers do not match the model"));
        }
        if let Some(layer) = grads
            .layers
            .iter()
            .position(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteGradient { layer });
        }
        for ((layer, g), buf) in model.layers.iter_mut().zip(&grads.layers).zip(&mut self.buffers.layers) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let bs = buf.weights.iter_mut().chain(buf.bias.iter_mut());
            match self.kind {
                OptimizerKind::SgdMomentum {
                    learning_rate,
                    momentum,
                } => {
                    for ((p, g), v) in params.zip(gs).zip(bs) {
                        *v = momentum * *v - learning_rate * g;
                        *p += *v;
                    }
                }
                OptimizerKind::RmsProp { learning_rate, decay } => {
                    for ((p, g), s) in params.zip(gs).zip(bs) {
                        *s = decay * *s + (1.0 - decay) * g * g;
                        *p -= learning_rate * g / (*s + RMSPROP_DELTA).sqrt();
                    }
                }
            }
        }
        Ok(())
    }
}

/// On-disk model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    #[serde(rename = "M")]
    pub num_hypotheses: usize,
    pub output_dim: usize,
    pub seed: u64,
    pub parameters: Vec<LayerParams>,
    pub optimizer: Option<CheckpointOptimizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointOptimizer {
    pub config: OptimizerKind,
    pub buffers: Vec<LayerParams>,
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel, seed: u64, optimizer: Option<&OptimizerState>) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            layer_dims: model.layer_dims(),
            activations: model.layers.iter().map(|l| l.activation).collect(),
            num_hypotheses: model.num_hypotheses,
            output_dim: model.output_dim,
            seed,
            parameters: model
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
            optimizer: optimizer.map(|o| CheckpointOptimizer {
                config: o.kind,
                buffers: o.buffers.layers.clone(),
            }),
        }
    }

    pub fn to_model(&self) -> Result<MlpModel> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint schema version {}",
                self.schema_version
            )));
        }
        let n = self.parameters.len();
        if self.layer_dims.len() != n + 1 || self.activations.len() != n {
            return Err(Error::shape("checkpoint layer_dims/activations/parameters disagree"));
        }
        let layers = self
            .parameters
            .iter()
            .enumerate()
            .map(|(k, p)| Dense {
                in_dim: self.layer_dims[k],
                out_dim: self.layer_dims[k + 1],
                weights: p.weights.clone(),
                bias: p.bias.clone(),
                activation: self.activations[k],
            })
            .collect();
        MlpModel::from_layers(layers, self.output_dim, self.num_hypotheses)
    }

    pub fn to_optimizer(&self, model: &MlpModel) -> Result<Option<OptimizerState>> {
        let Some(opt) = &self.optimizer else {
            return Ok(None);
        };
        let state = OptimizerState {
            kind: opt.config,
            buffers: Gradients {
                layers: opt.buffers.clone(),
            },
        };
        opt.config.validate()?;
        if !state.buffers.same_shape(model) {
            return Err(Error::shape("optimizer buffers do not match the model"));
        }
        Ok(Some(state))
    }
}
