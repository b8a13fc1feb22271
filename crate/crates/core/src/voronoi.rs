//! Loss-induced Voronoi tessellations of label space.
//!
//! Cell `j` holds every label whose loss against generator `j` is smallest; exact
//! ties go to the lowest index. Under the squared loss a configuration is
//! centroidal when each generator equals the mean of its own cell; [`lloyd`]
//! computes such configurations directly and serves as the reference for trained
//! hypothesis sets.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossKind, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tessellation {
    pub generators: Vec<Vec<f64>>,
    pub loss: LossKind,
    pub assignments: Vec<usize>,
    pub cell_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub count: usize,
    /// Empirical mean of the cell; `None` for empty cells.
    pub mean: Option<Vec<f64>>,
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub cells: Vec<CellStat>,
}

fn validate_generators(generators: &[Vec<f64>]) -> Result<usize> {
    let d = generators
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("need at least one generator"))?;
    if generators.iter().any(|g| g.len() != d) {
        return Err(Error::shape("generators have differing dimensions"));
    }
    if generators.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("generators must be finite"));
    }
    Ok(d)
}

fn validate_samples(samples: &[Vec<f64>], d: usize) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.len() != d {
            return Err(Error::shape(format!("sample {i} has {} dims, expected {d}", s.len())));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
    }
    Ok(())
}

/// Index and loss of the best generator for `y`.
fn nearest(generators: &[Vec<f64>], loss: LossKind, y: &[f64]) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (j, g) in generators.iter().enumerate() {
        let l = loss.vector_loss(g, y)?;
        if l < best.1 {
            best = (j, l);
        }
    }
    Ok(best)
}

/// Cell membership for arbitrary targets, including class labels under
/// cross-entropy (generators are then logits).
pub fn assign_cells(generators: &[Vec<f64>], loss: LossKind, targets: &[Target]) -> Result<Vec<usize>> {
    validate_generators(generators)?;
    targets
        .iter()
        .map(|t| {
            let mut best = (0, f64::INFINITY);
            for (j, g) in generators.iter().enumerate() {
                let l = loss.loss(g, t)?;
                if l < best.1 {
                    best = (j, l);
                }
            }
            Ok(best.0)
        })
        .collect()
}

pub fn tessellate(generators: &[Vec<f64>], loss: LossKind, samples: &[Vec<f64>]) -> Result<(Tessellation, CellStats)> {
    let d = validate_generators(generators)?;
    validate_samples(samples, d)?;
    let m = generators.len();

    let mut assignments = Vec::with_capacity(samples.len());
    let mut counts = vec![0usize; m];
    let mut sums = vec![vec![0.0; d]; m];
    let mut loss_sums = vec![0.0; m];
    for y in samples {
        let (j, l) = nearest(generators, loss, y)?;
        assignments.push(j);
        counts[j] += 1;
        loss_sums[j] += l;
        for (s, v) in sums[j].iter_mut().zip(y) {
            *s += v;
        }
    }

    let cells = (0..m)
        .map(|j| {
            let n = counts[j];
            CellStat {
                count: n,
                mean: (n > 0).then(|| sums[j].iter().map(|s| s / n as f64).collect()),
                mean_loss: (n > 0).then(|| loss_sums[j] / n as f64),
            }
        })
        .collect();

    Ok((
        Tessellation {
            generators: generators.to_vec(),
            loss,
            assignments,
            cell_counts: counts,
        },
        CellStats { cells },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidalResidual {
    /// `||g_j - mean_j||_2`, `None` for empty cells.
    pub per_cell: Vec<Option<f64>>,
    pub empty_cells: Vec<usize>,
    /// Maximum over non-empty cells.
    pub max: f64,
}

/// Distance of every generator from the mean of its cell. Only defined for `l2`,
/// where the cell mean is the loss minimizer.
pub fn centroidal_residual(tess: &Tessellation, stats: &CellStats) -> Result<CentroidalResidual> {
    if tess.loss != LossKind::L2 {
        return Err(Error::invalid(format!(
            "centroidal residual is only defined for l2, not {}",
            tess.loss
        )));
    }
    if stats.cells.len() != tess.generators.len() {
        return Err(Error::shape("cell stats do not match the generators"));
    }
    let per_cell: Vec<Option<f64>> = tess
        .generators
        .iter()
        .zip(&stats.cells)
        .map(|(g, c)| c.mean.as_ref().map(|m| euclidean(g, m)))
        .collect();
    let empty_cells: Vec<usize> = (0..per_cell.len()).filter(|&j| per_cell[j].is_none()).collect();
    if empty_cells.len() == per_cell.len() {
        return Err(Error::invalid("every cell is empty"));
    }
    let max = per_cell.iter().flatten().copied().fold(0.0, f64::max);
    Ok(CentroidalResidual {
        per_cell,
        empty_cells,
        max,
    })
}

/// Mean over samples of `min_j L(g_j, y)`.
pub fn quantization_error(generators: &[Vec<f64>], loss: LossKind, samples: &[Vec<f64>]) -> Result<f64> {
    let d = validate_generators(generators)?;
    validate_samples(samples, d)?;
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let mut total = 0.0;
    for y in samples {
        total += nearest(generators, loss, y)?.1;
    }
    Ok(total / samples.len() as f64)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Number of distinct sample vectors (bitwise, with `-0.0 == 0.0`).
pub fn count_distinct(samples: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = samples
        .iter()
        .map(|s| s.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LloydConfig {
    pub max_iters: usize,
    /// Stop once no generator moves farther than this.
    pub tol: f64,
}

impl Default for LloydConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LloydResult {
    pub generators: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Empty cells reseeded along the way.
    pub reseeds: usize,
    pub quantization_error: f64,
}

/// k-means++ seeding: first generator uniform over samples, each next one drawn
/// with probability proportional to its squared distance from the chosen set.
pub fn kmeans_pp_init<R: Rng + ?Sized>(samples: &[Vec<f64>], m: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    check_lloyd_inputs(samples, m)?;
    let mut chosen = vec![samples[rng.random_range(0..samples.len())].clone()];
    let mut dist: Vec<f64> = samples.iter().map(|s| squared(s, &chosen[0])).collect();
    while chosen.len() < m {
        let pick = WeightedIndex::new(&dist)
            .map_err(|e| Error::invalid(format!("k-means++ seeding failed: {e}")))?
            .sample(rng);
        let g = samples[pick].clone();
        for (d, s) in dist.iter_mut().zip(samples) {
            *d = d.min(squared(s, &g));
        }
        chosen.push(g);
    }
    Ok(chosen)
}

fn check_lloyd_inputs(samples: &[Vec<f64>], m: usize) -> Result<()> {
    let d = samples
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("no samples"))?;
    validate_samples(samples, d)?;
    if m == 0 {
        return Err(Error::invalid("need at least one generator"));
    }
    let distinct = count_distinct(samples);
    if m > distinct {
        return Err(Error::invalid(format!(
            "{m} generators requested but only {distinct} distinct samples"
        )));
    }
    Ok(())
}

/// Classical Lloyd iteration under `l2` from the given initial generators.
///
/// Returns the generators at which one more centroid step would move none of them
/// by `tol` or more, so their own centroidal residual is below `tol`. Empty cells
/// are reseeded at the sample farthest from its nearest generator.
pub fn lloyd(samples: &[Vec<f64>], init: Vec<Vec<f64>>, config: LloydConfig) -> Result<LloydResult> {
    check_lloyd_inputs(samples, init.len())?;
    let d = validate_generators(&init)?;
    validate_samples(samples, d)?;
    if config.tol.is_nan() || config.tol <= 0.0 {
        return Err(Error::invalid("tol must be positive"));
    }

    let mut generators = init;
    let mut reseeds = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        iterations += 1;
        let (_, stats) = tessellate(&generators, LossKind::L2, samples)?;
        let mut next: Vec<Vec<f64>> = generators.clone();
        let mut empty = Vec::new();
        for (j, cell) in stats.cells.iter().enumerate() {
            match &cell.mean {
                Some(mean) => next[j] = mean.clone(),
                None => empty.push(j),
            }
        }
        if !empty.is_empty() {
            for j in empty {
                let far = farthest_sample(samples, &next);
                log::info!("lloyd: cell {j} empty at iteration {iterations}, reseeding at sample {far}");
                next[j] = samples[far].clone();
                reseeds += 1;
            }
            generators = next;
            continue;
        }
        let movement = generators
            .iter()
            .zip(&next)
            .map(|(a, b)| euclidean(a, b))
            .fold(0.0, f64::max);
        if movement < config.tol {
            converged = true;
            break;
        }
        generators = next;
    }

    let quantization_error = quantization_error(&generators, LossKind::L2, samples)?;
    Ok(LloydResult {
        generators,
        iterations,
        converged,
        reseeds,
        quantization_error,
    })
}

fn farthest_sample(samples: &[Vec<f64>], generators: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in samples.iter().enumerate() {
        let d = generators.iter().map(|g| squared(s, g)).fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Best of `restarts` k-means++-seeded Lloyd runs by quantization error.
pub fn lloyd_restarts<R: Rng + ?Sized>(
    samples: &[Vec<f64>],
    m: usize,
    restarts: usize,
    config: LloydConfig,
    rng: &mut R,
) -> Result<LloydResult> {
    if restarts == 0 {
        return Err(Error::invalid("need at least one restart"));
    }
    let mut best: Option<LloydResult> = None;
    for _ in 0..restarts {
        let init = kmeans_pp_init(samples, m, rng)?;
        let run = lloyd(samples, init, config)?;
        if best
            .as_ref()
            .is_none_or(|b| run.quantization_error < b.quantization_error)
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart ran"))
}
