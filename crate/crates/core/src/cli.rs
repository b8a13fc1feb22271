//! The `mhp` command line tool.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 IO or file format error,
//! 4 numerical divergence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::datagen::{
    sample_temporal2d, Dataset, GaussianMixtureSpec, GridFrameSpec, MultiLabelSpec, Sample, TargetKind, TaskSpec,
};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::experiment::{run_training, TrainConfig};
use crate::io::{read_dataset, read_json, write_atomic, write_dataset, write_json, write_matrix_csv};
use crate::losses::{LossKind, Target};
use crate::network::{Checkpoint, MlpModel};
use crate::rng::{streams, SeedStream};
use crate::voronoi::{self, LloydConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_LOG_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const GENERATORS_FILE: &str = "generators.json";
pub const TESSELLATION_FILE: &str = "tessellation.csv";

#[derive(Debug, Parser)]
#[command(
    name = "mhp",
    version,
    about = "Multiple hypothesis prediction: data, training, evaluation, oracles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (data.csv + data.json).
    Gen(GenArgs),
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and print a JSON report.
    Eval(EvalArgs),
    /// Run Lloyd's method on the targets of a dataset.
    Lloyd(LloydArgs),
    /// Export the Voronoi tessellation of temporal-2D samples at a fixed time.
    Tessellate(TessellateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskName {
    Temporal2d,
    Multilabel,
    Gridframe,
    Gmm,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, required_unless_present = "spec")]
    pub task: Option<TaskName>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, env = "MHP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed time for temporal2d (default: t ~ Uniform[0, 1] per sample).
    #[arg(long)]
    pub t: Option<f64>,
    /// Class count for multilabel.
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    /// Component separation for gmm.
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    /// Full task spec as JSON, overriding --task and its flags.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write `wall_ms: 0` in the metrics log so reruns are byte-identical.
    #[arg(long)]
    pub no_wall_clock: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    OracleMin,
    Variance,
    Sharpness,
    Multilabel,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "oracle-min")]
    pub metrics: Vec<MetricName>,
    /// Loss for oracle-min (default: l2 for vector targets, cross_entropy for labels).
    #[arg(long)]
    pub loss: Option<String>,
    /// Single-hypothesis checkpoint to report as `shp_baseline_loss`.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Directory for report.json and CSV exports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LloydArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, env = "MHP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TessellateArgs {
    #[arg(long, required_unless_present = "generators", conflicts_with = "generators")]
    pub checkpoint: Option<PathBuf>,
    /// A generators.json written by `lloyd` or `tessellate`.
    #[arg(long)]
    pub generators: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value = "l2")]
    pub loss: String,
    #[arg(long, env = "MHP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Written last in every run directory. Paths are relative to the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

/// Contents of generators.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorsFile {
    pub loss: LossKind,
    pub generators: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_centroidal_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reseeds: Option<usize>,
}

fn code_version() -> String {
    format!("mhp {}", env!("CARGO_PKG_VERSION"))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

struct Run {
    command: &'static str,
    out: PathBuf,
    started_at: String,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, out: &Path) -> Self {
        Self {
            command,
            out: out.to_path_buf(),
            started_at: now(),
            outputs: Vec::new(),
        }
    }

    fn record(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.out).unwrap_or(path);
        self.outputs.push(rel.display().to_string());
    }

    fn finish(self, config: serde_json::Value, seed: Option<u64>) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            code_version: code_version(),
            started_at: self.started_at,
            finished_at: now(),
            outputs: self.outputs,
        };
        write_json(&self.out.join(MANIFEST_FILE), &manifest)
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize to JSON")
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code().into()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Lloyd(a) => cmd_lloyd(&a),
        Command::Tessellate(a) => cmd_tessellate(&a),
    }
}

fn gen_spec(a: &GenArgs) -> Result<TaskSpec> {
    if let Some(path) = &a.spec {
        return read_json(path);
    }
    Ok(match a.task.expect("clap requires --task without --spec") {
        TaskName::Temporal2d => TaskSpec::Temporal2d { t: a.t },
        TaskName::Multilabel => TaskSpec::Multilabel(MultiLabelSpec::adjacent_pairs(a.classes)),
        TaskName::Gridframe => TaskSpec::Gridframe(GridFrameSpec::default()),
        TaskName::Gmm => TaskSpec::Gmm(GaussianMixtureSpec::symmetric_pair(a.separation)),
    })
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec = gen_spec(a)?;
    if a.n == 0 {
        return Err(Error::invalid("--n must be positive"));
    }
    spec.validate()?;
    log::info!("gen {} n={} seed={}", spec.name(), a.n, a.seed);
    let mut run = Run::start("gen", &a.out);
    let mut rng = SeedStream::new(a.seed).stream(streams::DATASET);
    let data = Dataset::generate(&spec, a.n, &mut rng)?;
    for p in write_dataset(&a.out, &data, a.seed)? {
        run.record(&p);
    }
    let config = serde_json::json!({ "spec": to_value(&spec), "n": a.n });
    run.finish(config, Some(a.seed))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut config: TrainConfig = read_json(&a.config)?;
    if let Ok(s) = std::env::var("MHP_SEED") {
        config.seed = s
            .parse()
            .map_err(|_| Error::invalid(format!("MHP_SEED must be an unsigned integer, got {s:?}")))?;
    }
    log::info!("train M={} seed={}", config.num_hypotheses, config.seed);
    let mut run = Run::start("train", &a.out);

    let outcome = run_training(&config, |m| {
        log::info!(
            "epoch {} meta_loss={:.6} oracle_min={:.6}",
            m.epoch,
            m.mean_meta_loss,
            m.oracle_min_loss
        )
    })?;

    let mut log_bytes = Vec::new();
    for m in &outcome.log {
        let mut m = m.clone();
        if a.no_wall_clock {
            m.wall_ms = 0;
        }
        serde_json::to_writer(&mut log_bytes, &m).expect("metrics serialize");
        log_bytes.push(b'\n');
    }
    let log_path = a.out.join(METRICS_LOG_FILE);
    write_atomic(&log_path, &log_bytes)?;
    run.record(&log_path);

    let ckpt = Checkpoint::from_model(&outcome.model, config.seed, Some(&outcome.optimizer));
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    write_json(&ckpt_path, &ckpt)?;
    run.record(&ckpt_path);

    let config_path = a.out.join(CONFIG_FILE);
    write_json(&config_path, &config)?;
    run.record(&config_path);

    run.finish(to_value(&config), Some(config.seed))
}

fn load_model(path: &Path) -> Result<MlpModel> {
    let ckpt: Checkpoint = read_json(path)?;
    ckpt.to_model()
}

fn grid_dims(task: &TaskSpec) -> Option<(usize, usize)> {
    match task {
        TaskSpec::Gridframe(g) => Some((g.width, g.height)),
        _ => None,
    }
}

pub fn evaluate(
    model: &MlpModel,
    data: &Dataset,
    metrics: &[MetricName],
    loss: LossKind,
    baseline: Option<&MlpModel>,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for metric in metrics {
        match metric {
            MetricName::OracleMin => {
                report.oracle_min_loss = Some(eval::oracle_min_loss(model, &data.samples, loss)?);
            }
            MetricName::Variance => {
                let (spread, map) = eval::mean_spread(model, &data.samples)?;
                report.mean_hypothesis_variance = Some(spread);
                report.per_hypothesis_variance = Some(map);
            }
            MetricName::Sharpness => {
                let (w, h) = grid_dims(&data.task).ok_or_else(|| {
                    Error::invalid(format!("sharpness needs grid-frame data, got {}", data.task.name()))
                })?;
                report.sharpness = Some(eval::mean_sharpness(model, &data.samples, w, h, 1)?);
            }
            MetricName::Multilabel => {
                let inputs = data
                    .labeled_inputs()
                    .ok_or_else(|| Error::invalid("multilabel scores need a multi-label dataset"))?;
                let s = eval::multilabel_scores(model, &inputs)?;
                report.label_recall_at_m = Some(s.recall_at_m);
                report.label_precision = Some(s.precision);
            }
        }
    }
    if let Some(b) = baseline {
        report.shp_baseline_loss = Some(eval::oracle_min_loss(b, &data.samples, loss)?);
    }
    report.validate()?;
    Ok(report)
}

fn default_loss(task: &TaskSpec) -> LossKind {
    match task.target_kind() {
        TargetKind::Vector { .. } => LossKind::L2,
        TargetKind::Class { .. } => LossKind::CrossEntropy,
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let run = a.out.as_deref().map(|out| Run::start("eval", out));
    let model = load_model(&a.checkpoint)?;
    let (data, meta) = read_dataset(&a.data)?;
    if model.input_dim() != data.task.input_dim() || model.output_dim() != data.task.hypothesis_dim() {
        return Err(Error::shape(format!(
            "checkpoint maps {} -> {} but the data is {} -> {}",
            model.input_dim(),
            model.output_dim(),
            data.task.input_dim(),
            data.task.hypothesis_dim()
        )));
    }
    let loss = match &a.loss {
        Some(s) => s.parse()?,
        None => default_loss(&data.task),
    };
    let baseline = a.baseline.as_deref().map(load_model).transpose()?;
    let report = evaluate(&model, &data, &a.metrics, loss, baseline.as_ref())?;
    if let (Some(out), Some(mut run)) = (&a.out, run) {
        let report_path = out.join(REPORT_FILE);
        write_json(&report_path, &report)?;
        run.record(&report_path);
        for p in export_csv(out, &model, &data, &report)? {
            run.record(&p);
        }
        let config = serde_json::json!({
            "checkpoint": a.checkpoint,
            "data": a.data,
            "metrics": a.metrics,
            "loss": loss,
            "baseline": a.baseline,
        });
        run.finish(config, Some(meta.seed))?;
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

/// Variance map and the first sample's hypotheses, as CSV matrices (image-shaped
/// for grid data).
fn export_csv(out: &Path, model: &MlpModel, data: &Dataset, report: &MetricsReport) -> Result<Vec<PathBuf>> {
    let grid = grid_dims(&data.task);
    let shape = |v: &[f64]| -> Vec<Vec<f64>> {
        match grid {
            Some((w, _)) => v.chunks(w).map(<[f64]>::to_vec).collect(),
            None => vec![v.to_vec()],
        }
    };
    let mut written = Vec::new();
    if let Some(map) = &report.per_hypothesis_variance {
        let p = out.join("variance_map.csv");
        write_matrix_csv(&p, None, &shape(map))?;
        written.push(p);
    }
    let first = model.forward(&data.samples[0].input)?;
    if grid.is_some() {
        for (j, h) in first.iter().enumerate() {
            let p = out.join(format!("hypothesis_{j}.csv"));
            write_matrix_csv(&p, None, &shape(h))?;
            written.push(p);
        }
    } else {
        let p = out.join("hypotheses.csv");
        write_matrix_csv(&p, None, &first.to_vectors())?;
        written.push(p);
    }
    Ok(written)
}

pub fn cmd_lloyd(a: &LloydArgs) -> Result<()> {
    let (data, _) = read_dataset(&a.data)?;
    let samples = data.target_vectors()?;
    let distinct = voronoi::count_distinct(&samples);
    if a.m == 0 || a.m > distinct {
        return Err(Error::invalid(format!(
            "--m {} must be in 1..={distinct} (distinct samples)",
            a.m
        )));
    }
    log::info!("lloyd m={} restarts={} seed={}", a.m, a.restarts, a.seed);
    let mut run = Run::start("lloyd", &a.out);
    let cfg = LloydConfig {
        max_iters: a.max_iters,
        tol: a.tol,
    };
    let mut rng = SeedStream::new(a.seed).stream(streams::LLOYD);
    let result = voronoi::lloyd_restarts(&samples, a.m, a.restarts, cfg, &mut rng)?;
    let (tess, stats) = voronoi::tessellate(&result.generators, LossKind::L2, &samples)?;
    let residual = voronoi::centroidal_residual(&tess, &stats)?;
    let file = GeneratorsFile {
        loss: LossKind::L2,
        generators: result.generators,
        t: None,
        quantization_error: Some(result.quantization_error),
        max_centroidal_residual: Some(residual.max),
        cell_counts: Some(tess.cell_counts),
        iterations: Some(result.iterations),
        converged: Some(result.converged),
        reseeds: Some(result.reseeds),
    };
    let path = a.out.join(GENERATORS_FILE);
    write_json(&path, &file)?;
    run.record(&path);
    let config = serde_json::json!({
        "data": a.data, "m": a.m, "restarts": a.restarts, "tol": a.tol, "max_iters": a.max_iters,
    });
    run.finish(config, Some(a.seed))?;
    println!("{}", serde_json::to_string_pretty(&file).expect("generators serialize"));
    Ok(())
}

pub fn cmd_tessellate(a: &TessellateArgs) -> Result<()> {
    if a.samples == 0 {
        return Err(Error::invalid("--samples must be positive"));
    }
    let loss: LossKind = a.loss.parse()?;
    let generators = match (&a.checkpoint, &a.generators) {
        (Some(c), _) => {
            let model = load_model(c)?;
            if model.input_dim() != 1 || model.output_dim() != 2 {
                return Err(Error::invalid("tessellate needs a temporal-2D checkpoint (1 -> 2)"));
            }
            model.forward(&[a.t])?.to_vectors()
        }
        (None, Some(g)) => read_json::<GeneratorsFile>(g)?.generators,
        (None, None) => return Err(Error::invalid("need --checkpoint or --generators")),
    };
    log::info!("tessellate t={} samples={} seed={}", a.t, a.samples, a.seed);
    let mut run = Run::start("tessellate", &a.out);
    let mut rng = SeedStream::new(a.seed).stream(streams::EVAL);
    let samples: Vec<Vec<f64>> = sample_temporal2d(a.t, a.samples, &mut rng)?
        .into_iter()
        .map(|s: Sample| match s.target {
            Target::Vector(v) => v,
            Target::Class(_) => unreachable!("temporal-2D targets are vectors"),
        })
        .collect();
    let (tess, stats) = voronoi::tessellate(&generators, loss, &samples)?;

    let rows: Vec<Vec<f64>> = samples
        .iter()
        .zip(&tess.assignments)
        .map(|(y, &c)| vec![y[0], y[1], c as f64])
        .collect();
    let csv_path = a.out.join(TESSELLATION_FILE);
    let header = ["y1", "y2", "cell"].map(String::from);
    write_matrix_csv(&csv_path, Some(&header), &rows)?;
    run.record(&csv_path);

    let residual = if loss == LossKind::L2 {
        Some(voronoi::centroidal_residual(&tess, &stats)?.max)
    } else {
        None
    };
    let file = GeneratorsFile {
        loss,
        generators: tess.generators.clone(),
        t: Some(a.t),
        quantization_error: Some(voronoi::quantization_error(&generators, loss, &samples)?),
        max_centroidal_residual: residual,
        cell_counts: Some(tess.cell_counts.clone()),
        iterations: None,
        converged: None,
        reseeds: None,
    };
    let gen_path = a.out.join(GENERATORS_FILE);
    write_json(&gen_path, &file)?;
    run.record(&gen_path);
    let config = serde_json::json!({
        "checkpoint": a.checkpoint, "generators": a.generators, "t": a.t,
        "samples": a.samples, "loss": loss,
    });
    run.finish(config, Some(a.seed))
}
