//! Training configuration and the glue that turns it into a trained model.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::{
    Dataset, GridFrameSpec, MultiLabelSource, MultiLabelSpec, TargetKind, TaskSpec, Temporal2dSource,
};
use crate::error::{Error, Result};
use crate::io::read_dataset;
use crate::losses::LossKind;
use crate::mhp::{self, EpochMetrics, MetaLossConfig, SampleSource, TrainSchedule};
use crate::network::{MlpModel, OptimizerKind, OptimizerState};
use crate::rng::{streams, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    SgdMomentum,
    Rmsprop,
}

/// Where training samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    /// A dump written by `mhp gen`.
    File { path: PathBuf },
    /// Generated on the fly. Temporal-2D draws fresh points every epoch;
    /// multi-label keeps its inputs and redraws labels; other tasks are fixed.
    Generate { spec: TaskSpec, n: usize },
}

/// The training config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(rename = "M")]
    pub num_hypotheses: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_dropout")]
    pub dropout_prob: f64,
    pub base_loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerName,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    pub seed: u64,
    /// Hidden layer widths of the ReLU trunk.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub dataset: DataConfig,
}

fn default_epsilon() -> f64 {
    mhp::DEFAULT_EPSILON
}

fn default_dropout() -> f64 {
    mhp::DEFAULT_DROPOUT
}

fn default_hidden() -> Vec<usize> {
    vec![50, 50]
}

impl TrainConfig {
    /// Temporal-2D setup: 50+50 ReLU trunk, squared loss, fresh draws per epoch.
    pub fn temporal2d(num_hypotheses: usize, seed: u64) -> Self {
        Self {
            num_hypotheses,
            epsilon: mhp::DEFAULT_EPSILON,
            dropout_prob: if num_hypotheses > 1 { mhp::DEFAULT_DROPOUT } else { 0.0 },
            base_loss: LossKind::L2,
            epochs: 60,
            batch_size: 32,
            optimizer: OptimizerName::SgdMomentum,
            learning_rate: 0.01,
            momentum: Some(0.9),
            decay: None,
            seed,
            hidden: default_hidden(),
            dataset: DataConfig::Generate {
                spec: TaskSpec::Temporal2d { t: None },
                n: 10_000,
            },
        }
    }

    /// Grid-frame setup: squared loss on a fixed dataset of 2000 frame pairs.
    pub fn gridframe(num_hypotheses: usize, spec: GridFrameSpec, seed: u64) -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.05,
            dataset: DataConfig::Generate {
                spec: TaskSpec::Gridframe(spec),
                n: 2000,
            },
            ..Self::temporal2d(num_hypotheses, seed)
        }
    }

    /// Multi-label setup: cross-entropy on `num_classes` clusters with
    /// adjacent-pair label sets; labels are redrawn every epoch.
    pub fn multilabel(num_hypotheses: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            epochs: 30,
            base_loss: LossKind::CrossEntropy,
            dataset: DataConfig::Generate {
                spec: TaskSpec::Multilabel(MultiLabelSpec::adjacent_pairs(num_classes)),
                n: 2000,
            },
            ..Self::temporal2d(num_hypotheses, seed)
        }
    }

    pub fn meta_loss(&self) -> Result<MetaLossConfig> {
        MetaLossConfig::new(self.num_hypotheses, self.epsilon, self.dropout_prob, self.base_loss)
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        let kind = match self.optimizer {
            OptimizerName::SgdMomentum => OptimizerKind::SgdMomentum {
                learning_rate: self.learning_rate,
                momentum: self.momentum.unwrap_or(0.9),
            },
            OptimizerName::Rmsprop => OptimizerKind::RmsProp {
                learning_rate: self.learning_rate,
                decay: self.decay.unwrap_or(0.9),
            },
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

pub struct TrainOutcome {
    pub model: MlpModel,
    pub optimizer: OptimizerState,
    pub log: Vec<EpochMetrics>,
    pub task: TaskSpec,
}

enum Source {
    Fixed(Vec<crate::datagen::Sample>),
    Temporal(Temporal2dSource),
    MultiLabel(MultiLabelSource),
}

impl Source {
    fn as_dyn(&mut self) -> &mut dyn SampleSource {
        match self {
            Source::Fixed(v) => v,
            Source::Temporal(s) => s,
            Source::MultiLabel(s) => s,
        }
    }
}

fn build_source(config: &TrainConfig, seeds: SeedStream) -> Result<(TaskSpec, Source)> {
    let from_dataset = |data: Dataset| -> Result<Source> {
        Ok(match data.labeled_inputs() {
            Some(inputs) => Source::MultiLabel(MultiLabelSource::new(inputs)?),
            None => Source::Fixed(data.samples),
        })
    };
    match &config.dataset {
        DataConfig::File { path } => {
            let (data, _) = read_dataset(path)?;
            let task = data.task.clone();
            Ok((task, from_dataset(data)?))
        }
        DataConfig::Generate { spec, n } => {
            spec.validate()?;
            let source = match spec {
                TaskSpec::Temporal2d { t } => Source::Temporal(Temporal2dSource::new(*n, *t)?),
                _ => {
                    let mut rng = seeds.stream(streams::DATASET);
                    from_dataset(Dataset::generate(spec, *n, &mut rng)?)?
                }
            };
            Ok((spec.clone(), source))
        }
    }
}

/// Build the model and data from `config` and train.
pub fn run_training(config: &TrainConfig, on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    let meta = config.meta_loss()?;
    let opt_kind = config.optimizer_kind()?;
    let seeds = SeedStream::new(config.seed);
    let (task, mut source) = build_source(config, seeds)?;

    match (task.target_kind(), config.base_loss.is_classification()) {
        (TargetKind::Class { .. }, false) => {
            return Err(Error::invalid(format!(
                "{} needs vector targets; use cross_entropy",
                config.base_loss
            )))
        }
        (TargetKind::Vector { .. }, true) => {
            return Err(Error::invalid("cross_entropy needs a class-labelled dataset"))
        }
        _ => {}
    }

    let mut init_rng = seeds.stream(streams::INIT);
    let mut model = MlpModel::new(
        task.input_dim(),
        &config.hidden,
        task.hypothesis_dim(),
        config.num_hypotheses,
        &mut init_rng,
    )?;
    let mut optimizer = OptimizerState::new(opt_kind, &model)?;
    let log = mhp::train(
        &mut model,
        source.as_dyn(),
        &meta,
        &mut optimizer,
        &config.schedule(),
        on_epoch,
    )?;
    Ok(TrainOutcome {
        model,
        optimizer,
        log,
        task,
    })
}
