//! Multiple hypothesis prediction (MHP).
//!
//! A single shared predictor emits `M` hypotheses per input. Training routes each
//! label to the hypothesis that explains it best under a base loss, with a small
//! relaxation weight `epsilon` spread over the remaining hypotheses and occasional
//! dropout of whole hypotheses. At convergence, under the squared loss, the
//! hypotheses form a centroidal Voronoi tessellation of the conditional label
//! distribution.
//!
//! Modules:
//!
//! - [`network`]: dense feed-forward network with manual backprop and optimizers.
//! - [`losses`]: base losses (`l2`, `cross_entropy`, `tukey:<c>`) with gradients.
//! - [`mhp`]: hypothesis assignment, the meta-loss and the training loop.
//! - [`voronoi`]: loss-induced tessellations, centroidal residuals and a Lloyd oracle.
//! - [`datagen`]: seeded synthetic tasks.
//! - [`eval`]: oracle-min loss, hypothesis spread, sharpness and multi-label scores.
//! - [`cli`]: the `mhp` command line tool.
//!
//! All arithmetic is `f64`.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod losses;
pub mod mhp;
pub mod network;
pub mod rng;
pub mod voronoi;

pub use error::{Error, Result};
pub use losses::{LossKind, Target};
pub use mhp::{AssignmentResult, MetaLossConfig};
pub use network::{Activation, HypothesisSet, MlpModel, OptimizerKind, OptimizerState};
pub use rng::SeedStream;
