//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.
//!
//! `cargo test --release --test acceptance` (the test profile is optimized too).

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::checks;
use mhp::datagen::{
    multilabel_inputs, sample_gridframe, sample_temporal2d, sample_temporal2d_mixed_t, temporal2d_region,
    GridFrameSpec, MultiLabelSpec, TaskSpec,
};
use mhp::eval::{mean_sharpness, multilabel_scores, oracle_min_curve, oracle_min_loss};
use mhp::experiment::{run_training, DataConfig, TrainConfig};
use mhp::rng::{streams, SeedStream};
use mhp::voronoi::{centroidal_residual, lloyd_restarts, quantization_error, tessellate, LloydConfig};
use mhp::{LossKind, MlpModel};

const GRAD_TOL: f64 = 1e-5;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const SHP_ORIGIN_TOL: f64 = 0.1;
const MHP_RESIDUAL_TOL: f64 = 0.15;
const LLOYD_RESIDUAL_TOL: f64 = 0.02;
const QUANT_RATIO_TOL: f64 = 0.30;
const RECALL_GAP: f64 = 0.25;
const SEEDS: u64 = 5;
const SEEDS_NEEDED: usize = 4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, budget: Duration, elapsed: Duration, o: Outcome) -> bool {
    let in_time = elapsed <= budget;
    let pass = o.pass && in_time;
    let timing = if in_time { "" } else { " OVER BUDGET" };
    println!(
        "[{}] {n}. {name}: {} ({:.1}s of {:.0}s{timing})",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn train(config: &TrainConfig) -> MlpModel {
    run_training(config, |_| {}).expect("training failed").model
}

fn gradient_suite() -> Outcome {
    let loss = checks::loss_gradient_error(100);
    let meta = checks::meta_loss_gradient_error(100);
    let (mlp, params) = checks::mlp_gradient_error(30);
    Outcome {
        pass: loss < GRAD_TOL && meta < GRAD_TOL && mlp < GRAD_TOL,
        detail: format!(
            "worst relative error loss {loss:.1e}, meta-loss {meta:.1e}, network {mlp:.1e} (<= {params} params)"
        ),
    }
}

fn reduction_law() -> Outcome {
    let r = checks::reduction_law(100);
    Outcome {
        pass: r.single_mismatches == 0 && r.max_weight_sum_error <= WEIGHT_SUM_TOL,
        detail: format!(
            "{} single-head cases, {} mismatches, max |sum w - 1| = {:.1e}",
            r.cases, r.single_mismatches, r.max_weight_sum_error
        ),
    }
}

struct ToyModels {
    shp: Vec<MlpModel>,
    mhp4: Vec<MlpModel>,
    mhp10: Vec<MlpModel>,
}

fn train_toys() -> ToyModels {
    let mut toys = ToyModels {
        shp: Vec::new(),
        mhp4: Vec::new(),
        mhp10: Vec::new(),
    };
    for seed in 0..SEEDS {
        toys.shp.push(train(&TrainConfig::temporal2d(1, seed)));
        toys.mhp4.push(train(&TrainConfig::temporal2d(4, seed)));
        toys.mhp10.push(train(&TrainConfig::temporal2d(10, seed)));
    }
    toys
}

fn toy_reproduction(toys: &ToyModels) -> Outcome {
    let times = [0.0, 0.5, 1.0];
    let tests: Vec<_> = times
        .iter()
        .map(|&t| {
            let mut rng = SeedStream::new(1000).stream(streams::EVAL);
            sample_temporal2d(t, 20_000, &mut rng).unwrap()
        })
        .collect();

    let mut worst_shp: f64 = 0.0;
    let mut order_ok = true;
    let mut quadrant_seeds = 0;
    for seed in 0..SEEDS as usize {
        for (&t, test) in times.iter().zip(&tests) {
            let p = toys.shp[seed].forward(&[t]).unwrap();
            worst_shp = worst_shp.max(p.get(0)[0].hypot(p.get(0)[1]));
            let l1 = oracle_min_loss(&toys.shp[seed], test, LossKind::L2).unwrap();
            let l4 = oracle_min_loss(&toys.mhp4[seed], test, LossKind::L2).unwrap();
            let l10 = oracle_min_loss(&toys.mhp10[seed], test, LossKind::L2).unwrap();
            order_ok &= l1 > l4 && l4 > l10;
        }
        let in_regions = |t: f64, allowed: [u8; 2]| {
            let h = toys.mhp4[seed].forward(&[t]).unwrap();
            h.iter()
                .filter(|v| temporal2d_region(v).is_some_and(|r| allowed.contains(&r)))
                .count()
        };
        if in_regions(0.0, [1, 4]) >= 3 && in_regions(1.0, [2, 3]) >= 3 {
            quadrant_seeds += 1;
        }
    }
    let shp_ok = worst_shp <= SHP_ORIGIN_TOL;
    Outcome {
        pass: shp_ok && order_ok && quadrant_seeds >= SEEDS_NEEDED,
        detail: format!(
            "(a) SHP max distance to origin {worst_shp:.3}; (b) quadrant placement on {quadrant_seeds}/{SEEDS} seeds; \
             (c) SHP > 4-MHP > 10-MHP at every t and seed: {order_ok}"
        ),
    }
}

fn cvt_fixed_point(mhp4: &MlpModel) -> Outcome {
    let mut rng = SeedStream::new(2000).stream(streams::EVAL);
    let ys: Vec<Vec<f64>> = sample_temporal2d(0.0, 100_000, &mut rng)
        .unwrap()
        .into_iter()
        .map(|s| s.target.as_vector().unwrap().to_vec())
        .collect();
    let generators = mhp4.forward(&[0.0]).unwrap().to_vectors();
    let (tess, stats) = tessellate(&generators, LossKind::L2, &ys).unwrap();
    let mhp_residual = centroidal_residual(&tess, &stats).unwrap().max;
    let mhp_q = quantization_error(&generators, LossKind::L2, &ys).unwrap();

    let mut lloyd_rng = SeedStream::new(2000).stream(streams::LLOYD);
    let oracle = lloyd_restarts(&ys, 4, 5, LloydConfig::default(), &mut lloyd_rng).unwrap();
    let (ltess, lstats) = tessellate(&oracle.generators, LossKind::L2, &ys).unwrap();
    let lloyd_residual = centroidal_residual(&ltess, &lstats).unwrap().max;
    let ratio = (mhp_q - oracle.quantization_error).abs() / oracle.quantization_error;
    Outcome {
        pass: mhp_residual < MHP_RESIDUAL_TOL && lloyd_residual < LLOYD_RESIDUAL_TOL && ratio <= QUANT_RATIO_TOL,
        detail: format!(
            "MHP residual {mhp_residual:.4}, Lloyd residual {lloyd_residual:.4}, quantization {mhp_q:.4} vs {:.4} ({:.1}% apart)",
            oracle.quantization_error,
            100.0 * ratio
        ),
    }
}

fn sharpness_direction() -> Outcome {
    let spec = GridFrameSpec::many_exits();
    let mut rng = SeedStream::new(3000).stream(streams::EVAL);
    let test = sample_gridframe(&spec, 2000, &mut rng).unwrap();
    let mut good = 0;
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let mut sharp = [0.0; 3];
        let mut err = [0.0; 3];
        for (i, m) in [1, 5, 10].into_iter().enumerate() {
            let model = train(&TrainConfig::gridframe(m, spec.clone(), seed));
            sharp[i] = mean_sharpness(&model, &test, spec.width, spec.height, 1).unwrap();
            err[i] = oracle_min_loss(&model, &test, LossKind::L2).unwrap();
        }
        let ok = sharp[2] > sharp[1] && sharp[1] > sharp[0] && err[2] < err[1] && err[1] < err[0];
        good += ok as usize;
        rows.push(format!(
            "s{seed} sharp {:.2e}/{:.2e}/{:.2e}",
            sharp[0], sharp[1], sharp[2]
        ));
    }
    Outcome {
        pass: good >= SEEDS_NEEDED,
        detail: format!("ordering holds on {good}/{SEEDS} seeds [SHP/5/10: {}]", rows.join("; ")),
    }
}

fn multilabel_coverage() -> Outcome {
    let spec = MultiLabelSpec::adjacent_pairs(6);
    let mut rng = SeedStream::new(4000).stream(streams::EVAL);
    let test = multilabel_inputs(&spec, 2000, &mut rng).unwrap();
    let mut good = 0;
    let mut gaps = Vec::new();
    for seed in 0..SEEDS {
        let shp = multilabel_scores(&train(&TrainConfig::multilabel(1, 6, seed)), &test).unwrap();
        let mhp3 = multilabel_scores(&train(&TrainConfig::multilabel(3, 6, seed)), &test).unwrap();
        let gap = mhp3.recall_at_m - shp.recall_at_m;
        good += (gap >= RECALL_GAP) as usize;
        gaps.push(format!("{gap:.3}"));
    }
    Outcome {
        pass: good >= SEEDS_NEEDED,
        detail: format!(
            "recall gap >= {RECALL_GAP} on {good}/{SEEDS} seeds (gaps {})",
            gaps.join(", ")
        ),
    }
}

fn nested_heads(mhp10: &MlpModel) -> Outcome {
    let mut rng = SeedStream::new(5000).stream(streams::EVAL);
    let mut sets = vec![sample_temporal2d_mixed_t(10_000, &mut rng)];
    for t in [0.0, 0.5, 1.0] {
        sets.push(sample_temporal2d(t, 10_000, &mut rng).unwrap());
    }
    let mut monotone = true;
    let mut first_last = (0.0, 0.0);
    for (i, set) in sets.iter().enumerate() {
        let curve = oracle_min_curve(mhp10, set, LossKind::L2).unwrap();
        monotone &= curve.windows(2).all(|w| w[1] <= w[0]);
        if i == 0 {
            first_last = (curve[0], curve[curve.len() - 1]);
        }
    }
    Outcome {
        pass: monotone,
        detail: format!(
            "non-increasing over k = 1..10: {monotone} (mixed t: {:.4} -> {:.4})",
            first_last.0, first_last.1
        ),
    }
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mhp"))
        .args(args)
        .env_remove("MHP_SEED")
        .env("RUST_LOG", "warn")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    matches!((fs::read(a), fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

fn strip_wall_ms(path: &Path) -> Option<Vec<serde_json::Value>> {
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).ok()?;
            v.as_object_mut()?.remove("wall_ms")?;
            Some(v)
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut failures = Vec::new();

    for task in ["temporal2d", "multilabel", "gridframe", "gmm"] {
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|r| root.join(format!("gen-{task}-{r}")))
            .collect();
        for r in &runs {
            if !cli(&["gen", "--task", task, "--n", "2000", "--seed", "11", "--out", &s(r)]) {
                failures.push(format!("gen {task} failed"));
            }
        }
        for f in ["data.csv", "data.json"] {
            if !same_bytes(&runs[0].join(f), &runs[1].join(f)) {
                failures.push(format!("gen {task} {f} differs"));
            }
        }
    }

    let mut toy = TrainConfig::temporal2d(4, 11);
    toy.epochs = 5;
    toy.dataset = DataConfig::Generate {
        spec: TaskSpec::Temporal2d { t: None },
        n: 2000,
    };
    let mut ml = TrainConfig::multilabel(3, 6, 11);
    ml.epochs = 5;
    let mut grid = TrainConfig::gridframe(5, GridFrameSpec::many_exits(), 11);
    grid.epochs = 3;
    for (name, config) in [("toy", toy), ("multilabel", ml), ("grid", grid)] {
        let cfg = root.join(format!("{name}.json"));
        fs::write(&cfg, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
        for (mode, extra) in [("fixed", Some("--no-wall-clock")), ("timed", None)] {
            let runs: Vec<_> = ["a", "b"]
                .iter()
                .map(|r| root.join(format!("train-{name}-{mode}-{r}")))
                .collect();
            for r in &runs {
                let mut args = vec!["train".to_string(), "--config".into(), s(&cfg), "--out".into(), s(r)];
                args.extend(extra.map(String::from));
                let args: Vec<&str> = args.iter().map(String::as_str).collect();
                if !cli(&args) {
                    failures.push(format!("train {name} failed"));
                }
            }
            let log = |r: &Path| r.join("metrics.jsonl");
            let identical = match mode {
                "fixed" => same_bytes(&log(&runs[0]), &log(&runs[1])),
                _ => strip_wall_ms(&log(&runs[0])).is_some_and(|a| Some(a) == strip_wall_ms(&log(&runs[1]))),
            };
            if !identical {
                failures.push(format!("train {name} ({mode}) metrics differ"));
            }
            if !same_bytes(&runs[0].join("checkpoint.json"), &runs[1].join("checkpoint.json")) {
                failures.push(format!("train {name} ({mode}) checkpoint differs"));
            }
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "gen (4 tasks) and train (3 tasks) reruns byte-identical; metrics logs identical \
             byte-for-byte with --no-wall-clock and modulo wall_ms otherwise"
                .into()
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();

    let (o, t) = timed(gradient_suite);
    results.push(report(1, "gradient suite", secs(10), t, o));

    let (o, t) = timed(reduction_law);
    results.push(report(2, "reduction law", secs(1), t, o));

    let (toys, train_time) = timed(train_toys);
    let (o, t) = timed(|| toy_reproduction(&toys));
    results.push(report(3, "toy reproduction", secs(300), train_time + t, o));

    let (o, t) = timed(|| cvt_fixed_point(&toys.mhp4[0]));
    results.push(report(4, "CVT fixed point", secs(60), t, o));

    let (o, t) = timed(sharpness_direction);
    results.push(report(5, "sharpness direction", secs(300), t, o));

    let (o, t) = timed(multilabel_coverage);
    results.push(report(6, "multi-label coverage", secs(180), t, o));

    let (o, t) = timed(|| nested_heads(&toys.mhp10[0]));
    results.push(report(7, "oracle-min monotonicity", secs(60), t, o));

    let (o, t) = timed(determinism);
    results.push(report(8, "determinism", secs(120), t, o));

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
