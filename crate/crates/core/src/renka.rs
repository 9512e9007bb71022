//! Regularizing ensemble Kalman algorithm.
//!
//! The tempering schedule is chosen exactly as in the SMC sampler, but each
//! stage moves the particles with a perturbed-observation Kalman update whose
//! noise covariance is inflated by `α = 1/(φ_r − φ_{r−1})`. Since the
//! increments sum to one, so do the `α⁻¹` over a time step.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::EnsembleSnapshot;
use crate::forward::{ForwardError, ForwardModel, ForwardOutput, LogPermField};
use crate::observation::{log_likelihood, ObservationError, ObservationRecord, Restriction};
use crate::prior::{GaussianPrior, PriorError};
use crate::rng::{stream, tag, Stream};
use crate::tempering::{select_phi, CostSchedule, PhiSafeguard, TemperTrace, TemperingError};

#[derive(Debug, Error)]
pub enum RenkaError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ensemble of {0} particles is too small for covariance estimates")]
    Degenerate(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("innovation covariance is not positive definite")]
    Singular,
    #[error("particle {particle} has no valid forward output at time {n}: {source}")]
    NoValidOutput {
        particle: usize,
        n: usize,
        source: ForwardError,
    },
    #[error(transparent)]
    Tempering(#[from] TemperingError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenkaConfig {
    pub ensemble_size: usize,
    /// ESS threshold; `None` means `J/3`.
    pub threshold: Option<f64>,
    pub restriction: Restriction,
    pub safeguard: PhiSafeguard,
    pub seed: u64,
}

impl Default for RenkaConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 1000,
            threshold: None,
            restriction: Restriction::Both,
            safeguard: PhiSafeguard::LogSpace,
            seed: 0,
        }
    }
}

impl RenkaConfig {
    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(self.ensemble_size as f64 / 3.0)
    }

    pub fn validate(&self) -> Result<(), RenkaError> {
        let j = self.ensemble_size as f64;
        let t = self.threshold();
        if self.ensemble_size < 2 {
            return Err(RenkaError::Config("ensemble size must be at least 2".into()));
        }
        if !(t >= 1.0 && t <= j) {
            return Err(RenkaError::Config(format!("threshold {t} outside [1, {j}]")));
        }
        Ok(())
    }
}

/// Empirical cross-covariance of states with outputs, and of outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanGainPieces {
    /// `C^{uw}`, states × outputs.
    pub cross: DMatrix<f64>,
    /// `C^{ww}`, outputs × outputs.
    pub output: DMatrix<f64>,
}

fn centred(columns: &[Vec<f64>]) -> Result<DMatrix<f64>, RenkaError> {
    let j = columns.len();
    let d = columns[0].len();
    if let Some(c) = columns.iter().find(|c| c.len() != d) {
        return Err(RenkaError::Dimension(format!("vectors of length {d} and {}", c.len())));
    }
    let mut m = DMatrix::from_fn(d, j, |i, k| columns[k][i]);
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / j as f64;
        row.add_scalar_mut(-mean);
    }
    Ok(m)
}

/// `(J−1)`-normalized covariances about the ensemble means.
pub fn empirical_covariances(states: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<KalmanGainPieces, RenkaError> {
    let j = states.len();
    if j < 2 {
        return Err(RenkaError::Degenerate(j));
    }
    if outputs.len() != j {
        return Err(RenkaError::Dimension(format!("{j} states but {} outputs", outputs.len())));
    }
    let u = centred(states)?;
    let w = centred(outputs)?;
    let scale = 1.0 / (j - 1) as f64;
    Ok(KalmanGainPieces {
        cross: &u * w.transpose() * scale,
        output: &w * w.transpose() * scale,
    })
}

/// Keyed source of the per-particle observation perturbations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbationStreams {
    pub seed: u64,
    pub path: Vec<u64>,
}

impl PerturbationStreams {
    pub fn for_particle(&self, j: usize) -> Stream {
        let mut path = self.path.clone();
        path.push(j as u64);
        stream(self.seed, &path)
    }
}

/// `u_j ← u_j + C^{uw}(C^{ww} + αΓ)⁻¹(y + η_j − G_j)`, `η_j ~ N(0, αΓ)`.
pub fn kalman_update(
    states: &mut [Vec<f64>],
    outputs: &[Vec<f64>],
    data: &[f64],
    variances: &[f64],
    alpha: f64,
    noise: &PerturbationStreams,
) -> Result<(), RenkaError> {
    let pieces = empirical_covariances(states, outputs)?;
    let d = data.len();
    if variances.len() != d || pieces.output.nrows() != d {
        return Err(RenkaError::Dimension(format!(
            "{d} data, {} variances, {} predicted outputs",
            variances.len(),
            pieces.output.nrows()
        )));
    }
    if !(alpha >= 1.0 && alpha.is_finite()) {
        return Err(RenkaError::Config(format!("inflation α = {alpha} must be ≥ 1")));
    }
    let mut innovation_cov = pieces.output.clone();
    for (i, g) in variances.iter().enumerate() {
        innovation_cov[(i, i)] += alpha * g;
    }
    let chol = innovation_cov.cholesky().ok_or(RenkaError::Singular)?;
    let scales: Vec<f64> = variances.iter().map(|g| (alpha * g).sqrt()).collect();
    let residual_columns: Vec<Vec<f64>> = outputs
        .par_iter()
        .enumerate()
        .map(|(j, g)| {
            let mut rng = noise.for_particle(j);
            data.iter()
                .zip(g)
                .zip(&scales)
                .map(|((y, gj), s)| y + s * rng.sample::<f64, _>(StandardNormal) - gj)
                .collect()
        })
        .collect();
    let residuals = DMatrix::from_fn(d, states.len(), |i, k| residual_columns[k][i]);
    let shifts = &pieces.cross * chol.solve(&residuals);
    for (k, state) in states.iter_mut().enumerate() {
        for (i, v) in state.iter_mut().enumerate() {
            *v += shifts[(i, k)];
        }
    }
    Ok(())
}

/// Everything a completed run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RenkaRun {
    pub prior: EnsembleSnapshot,
    pub posteriors: Vec<EnsembleSnapshot>,
    pub trace: TemperTrace,
    pub forward_evaluations: Vec<u64>,
    /// Forward failures replaced by the particle's last valid output.
    pub fallbacks: u64,
}

fn snapshot(n: usize, fields: &[Vec<f64>]) -> EnsembleSnapshot {
    EnsembleSnapshot {
        n,
        fields: fields.to_vec(),
        coeffs: None,
        weights: None,
    }
}

/// Runs the algorithm through all `records`.
pub fn run_renka<M: ForwardModel>(
    config: &RenkaConfig,
    prior: &GaussianPrior,
    model: &M,
    sensors: &[f64],
    records: &[ObservationRecord],
) -> Result<RenkaRun, RenkaError> {
    config.validate()?;
    let j = config.ensemble_size;
    let thresh = config.threshold();
    let seed = config.seed;
    let grid = prior.grid();
    let mut fields: Vec<Vec<f64>> = (0..j)
        .map(|i| prior.values(&prior.sample_coeffs(&mut stream(seed, &[tag::PRIOR, i as u64]))))
        .collect();
    let prior_snapshot = snapshot(0, &fields);
    let mut trace = TemperTrace::new();
    let mut forward_evaluations = Vec::with_capacity(records.len());
    let mut posteriors = Vec::with_capacity(records.len());
    let mut fallbacks = 0;

    for (i, record) in records.iter().enumerate() {
        let n = i + 1;
        let mut last_valid: Vec<Option<ForwardOutput>> = vec![None; j];
        let mut evaluations = 0;
        let mut phi = 0.0;
        loop {
            let solved: Vec<Result<ForwardOutput, ForwardError>> = fields
                .par_iter()
                .map(|values| {
                    let field = LogPermField::new(grid, values.clone())?;
                    Ok(model.predict(&field, &[record.time], sensors)?.remove(0))
                })
                .collect();
            evaluations += j as u64;
            let mut outputs = Vec::with_capacity(j);
            for (particle, (result, last)) in solved.into_iter().zip(&mut last_valid).enumerate() {
                match result {
                    Ok(out) => {
                        *last = Some(out.clone());
                        outputs.push(out);
                    }
                    Err(source) => {
                        let out = last
                            .clone()
                            .ok_or(RenkaError::NoValidOutput { particle, n, source: source.clone() })?;
                        log::warn!("time {n} particle {particle}: reusing last valid output after {source}");
                        fallbacks += 1;
                        outputs.push(out);
                    }
                }
            }
            let loglik = outputs
                .iter()
                .map(|o| log_likelihood(o, record, config.restriction))
                .collect::<Result<Vec<_>, _>>()?;
            let choice = select_phi(&loglik, None, phi, thresh, config.safeguard)?;
            let stage = trace.record(n, &choice);
            let (data, variances) = record.data(config.restriction);
            let predicted = outputs
                .iter()
                .map(|o| record.predicted(o, config.restriction))
                .collect::<Result<Vec<_>, _>>()?;
            let noise = PerturbationStreams {
                seed,
                path: vec![tag::KALMAN, n as u64, stage.r as u64],
            };
            kalman_update(&mut fields, &predicted, &data, &variances, stage.alpha, &noise)?;
            phi = choice.phi;
            if phi == 1.0 {
                break;
            }
        }
        forward_evaluations.push(evaluations);
        posteriors.push(snapshot(n, &fields));
    }
    Ok(RenkaRun {
        prior: prior_snapshot,
        posteriors,
        trace,
        forward_evaluations,
        fallbacks,
    })
}

/// `C = J Σ_n q_n g_n/g_N`.
pub fn renka_cost(trace: &TemperTrace, config: &RenkaConfig, schedule: &CostSchedule) -> f64 {
    let counts = trace.counts(schedule.ratios.len());
    config.ensemble_size as f64 * schedule.weighted_count(&counts)
}
