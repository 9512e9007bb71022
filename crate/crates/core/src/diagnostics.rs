//! Error, uncertainty and mixing metrics for particle approximations.
//!
//! All norms are discrete L² norms on the uniform grid. Where a metric is a
//! ratio of norms the cell width cancels, but it is kept so absolute norms
//! remain meaningful.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::EnsembleSnapshot;
use crate::forward::Grid1D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least two particles, got {0}")]
    TooFewParticles(usize),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("reference norm is zero")]
    ZeroNorm,
    #[error("front position {0} must be positive")]
    Front(f64),
    #[error("invalid weights: {0}")]
    Weights(String),
}

/// Percentile levels reported for every ensemble.
pub const PERCENTILE_LEVELS: [f64; 5] = [0.02, 0.25, 0.5, 0.75, 0.98];

/// Pointwise moments and percentiles of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub levels: Vec<f64>,
    /// `percentiles[i][s]` is level `levels[i]` at cell `s`.
    pub percentiles: Vec<Vec<f64>>,
}

fn check_fields(fields: &[Vec<f64>]) -> Result<usize, DiagnosticsError> {
    if fields.len() < 2 {
        return Err(DiagnosticsError::TooFewParticles(fields.len()));
    }
    let s = fields[0].len();
    match fields.iter().find(|f| f.len() != s) {
        Some(f) => Err(DiagnosticsError::Length(s, f.len())),
        None => Ok(s),
    }
}

/// Linear-interpolation quantile of sorted data (`(J−1)p` positioning).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-weight mean, unbiased variance and percentiles.
pub fn summarize(fields: &[Vec<f64>]) -> Result<EnsembleSummary, DiagnosticsError> {
    let s = check_fields(fields)?;
    let j = fields.len() as f64;
    let mut mean = vec![0.0; s];
    for f in fields {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= j;
    }
    let mut variance = vec![0.0; s];
    for f in fields {
        for ((acc, v), m) in variance.iter_mut().zip(f).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    for v in &mut variance {
        *v /= j - 1.0;
    }
    let mut percentiles = vec![vec![0.0; s]; PERCENTILE_LEVELS.len()];
    let mut column = vec![0.0; fields.len()];
    for cell in 0..s {
        for (c, f) in column.iter_mut().zip(fields) {
            *c = f[cell];
        }
        column.sort_by(f64::total_cmp);
        for (row, &p) in percentiles.iter_mut().zip(&PERCENTILE_LEVELS) {
            row[cell] = quantile_sorted(&column, p);
        }
    }
    Ok(EnsembleSummary {
        mean,
        variance,
        levels: PERCENTILE_LEVELS.to_vec(),
        percentiles,
    })
}

/// Weighted moments and percentiles.
///
/// The variance uses the reliability correction `1/(1 − Σ W²)`, which equals
/// `J/(J−1)` for equal weights. Percentiles interpolate the weighted CDF
/// placed at the mid-points of each particle's weight mass.
pub fn summarize_weighted(fields: &[Vec<f64>], weights: &[f64]) -> Result<EnsembleSummary, DiagnosticsError> {
    let s = check_fields(fields)?;
    if weights.len() != fields.len() {
        return Err(DiagnosticsError::Length(fields.len(), weights.len()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(DiagnosticsError::Weights("weights must be nonnegative with positive sum".into()));
    }
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let sum_sq: f64 = w.iter().map(|x| x * x).sum();
    if sum_sq >= 1.0 - 1e-15 {
        return Err(DiagnosticsError::TooFewParticles(1));
    }
    let mut mean = vec![0.0; s];
    for (f, wj) in fields.iter().zip(&w) {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += wj * v;
        }
    }
    let mut variance = vec![0.0; s];
    for (f, wj) in fields.iter().zip(&w) {
        for ((acc, v), m) in variance.iter_mut().zip(f).zip(&mean) {
            *acc += wj * (v - m) * (v - m);
        }
    }
    for v in &mut variance {
        *v /= 1.0 - sum_sq;
    }
    let mut percentiles = vec![vec![0.0; s]; PERCENTILE_LEVELS.len()];
    let mut column: Vec<(f64, f64)> = Vec::with_capacity(fields.len());
    for cell in 0..s {
        column.clear();
        column.extend(fields.iter().zip(&w).filter(|(_, &wj)| wj > 0.0).map(|(f, &wj)| (f[cell], wj)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut positions = Vec::with_capacity(column.len());
        let mut acc = 0.0;
        for &(_, wj) in &column {
            positions.push(acc + 0.5 * wj);
            acc += wj;
        }
        for (row, &p) in percentiles.iter_mut().zip(&PERCENTILE_LEVELS) {
            let i = positions.partition_point(|&q| q < p);
            row[cell] = if i == 0 {
                column[0].0
            } else if i == column.len() {
                column[column.len() - 1].0
            } else {
                let t = (p - positions[i - 1]) / (positions[i] - positions[i - 1]);
                column[i - 1].0 + t * (column[i].0 - column[i - 1].0)
            };
        }
    }
    Ok(EnsembleSummary {
        mean,
        variance,
        levels: PERCENTILE_LEVELS.to_vec(),
        percentiles,
    })
}

/// Summary of a snapshot, honouring its weights if present.
pub fn summarize_snapshot(snapshot: &EnsembleSnapshot) -> Result<EnsembleSummary, DiagnosticsError> {
    match &snapshot.weights {
        Some(w) => summarize_weighted(&snapshot.fields, w),
        None => summarize(&snapshot.fields),
    }
}

/// `√(Δx Σ v²)`.
pub fn l2_norm(values: &[f64], dx: f64) -> f64 {
    (dx * values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

fn relative_l2(candidate: &[f64], reference: &[f64], dx: f64) -> Result<f64, DiagnosticsError> {
    if candidate.len() != reference.len() {
        return Err(DiagnosticsError::Length(candidate.len(), reference.len()));
    }
    let denom = l2_norm(reference, dx);
    if denom == 0.0 {
        return Err(DiagnosticsError::ZeroNorm);
    }
    let diff: Vec<f64> = candidate.iter().zip(reference).map(|(a, b)| a - b).collect();
    Ok(l2_norm(&diff, dx) / denom)
}

/// `‖u† − ū‖ / ‖u†‖` over the whole domain.
pub fn truth_error(mean: &[f64], truth: &[f64], grid: Grid1D) -> Result<f64, DiagnosticsError> {
    relative_l2(mean, truth, grid.dx())
}

/// `(1/Υ†) ‖u† − ū‖_{L²(0, Υ†)}`, integrating the partial last cell exactly.
pub fn moving_domain_error(
    mean: &[f64],
    truth: &[f64],
    grid: Grid1D,
    front: f64,
) -> Result<f64, DiagnosticsError> {
    if mean.len() != truth.len() || mean.len() != grid.num_cells() {
        return Err(DiagnosticsError::Length(mean.len(), truth.len()));
    }
    if !(front > 0.0) {
        return Err(DiagnosticsError::Front(front));
    }
    let front = front.min(grid.length());
    let mut integral = 0.0;
    for s in 0..grid.num_cells() {
        let a = grid.edge(s);
        if a >= front {
            break;
        }
        let width = grid.edge(s + 1).min(front) - a;
        let d = truth[s] - mean[s];
        integral += d * d * width;
    }
    Ok(integral.sqrt() / front)
}

/// `‖σ_n²‖ / ‖σ_0²‖`.
pub fn variance_ratio(variance: &[f64], prior_variance: &[f64], grid: Grid1D) -> Result<f64, DiagnosticsError> {
    if variance.len() != prior_variance.len() {
        return Err(DiagnosticsError::Length(variance.len(), prior_variance.len()));
    }
    let denom = l2_norm(prior_variance, grid.dx());
    if denom == 0.0 {
        return Err(DiagnosticsError::ZeroNorm);
    }
    Ok(l2_norm(variance, grid.dx()) / denom)
}

/// Relative errors of a candidate's mean and variance against a benchmark.
pub fn benchmark_errors(
    candidate: &EnsembleSummary,
    benchmark: &EnsembleSummary,
    grid: Grid1D,
) -> Result<(f64, f64), DiagnosticsError> {
    Ok((
        relative_l2(&candidate.mean, &benchmark.mean, grid.dx())?,
        relative_l2(&candidate.variance, &benchmark.variance, grid.dx())?,
    ))
}

/// Per-coordinate ensemble mean.
pub fn ensemble_mean(particles: &[Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; particles.first().map_or(0, Vec::len)];
    for p in particles {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let j = particles.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= j);
    mean
}

/// Movement of each KL mode during one mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMovement {
    /// `None` for modes with no spread before the mutation.
    pub per_mode: Vec<Option<f64>>,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub skipped: usize,
}

/// `J_k = ½ Σ_j |post_jk − pre_jk| / Σ_j |pre_jk − mean_k|` for each mode.
pub fn mutation_quality(
    pre: &[Vec<f64>],
    post: &[Vec<f64>],
    mean: &[f64],
) -> Result<ModeMovement, DiagnosticsError> {
    if pre.len() != post.len() {
        return Err(DiagnosticsError::Length(pre.len(), post.len()));
    }
    let k = mean.len();
    if let Some(p) = pre.iter().chain(post).find(|p| p.len() != k) {
        return Err(DiagnosticsError::Length(k, p.len()));
    }
    let mut moved = vec![0.0; k];
    let mut spread = vec![0.0; k];
    for (a, b) in pre.iter().zip(post) {
        for i in 0..k {
            moved[i] += (b[i] - a[i]).abs();
            spread[i] += (a[i] - mean[i]).abs();
        }
    }
    let per_mode: Vec<Option<f64>> = moved
        .iter()
        .zip(&spread)
        .map(|(m, s)| (*s > 0.0).then(|| 0.5 * m / s))
        .collect();
    let valid: Vec<f64> = per_mode.iter().flatten().copied().collect();
    let (min, max, avg) = if valid.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            valid.iter().copied().fold(f64::INFINITY, f64::min),
            valid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            valid.iter().sum::<f64>() / valid.len() as f64,
        )
    };
    Ok(ModeMovement {
        skipped: k - valid.len(),
        per_mode,
        min,
        mean: avg,
        max,
    })
}
