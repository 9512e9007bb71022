//! Adaptive-tempering SMC sampler with pcn Metropolis mutation.
//!
//! Particles live in KL coordinates. For each observation time the sampler
//! moves from `μ_{n−1}` to `μ_n` through tempered targets
//! `l_{n,r}(u) ∝ exp(φ_r ℓ_n(u) + Σ_{s<n} ℓ_s(u))`, alternating
//! reweighting, multinomial resampling and `N_μ` pcn steps per particle.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{ensemble_mean, mutation_quality, DiagnosticsError, ModeMovement};
use crate::ensemble::EnsembleSnapshot;
use crate::forward::{ForwardError, ForwardModel, ForwardOutput, LogPermField};
use crate::observation::{log_likelihood, ObservationError, ObservationRecord, Restriction};
use crate::prior::{CoeffVector, GaussianPrior, PriorError};
use crate::rng::{stream, tag, Stream};
use crate::tempering::{
    multinomial_resample, select_phi, CostSchedule, PhiSafeguard, TemperTrace, TemperingError, WeightSet,
};

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tempering(#[from] TemperingError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub ensemble_size: usize,
    /// ESS threshold; `None` means `J/3`.
    pub threshold: Option<f64>,
    pub mcmc_steps: usize,
    pub pcn_step: f64,
    /// Adjust β between MCMC steps towards `target_acceptance`; the final
    /// value carries over to the next stage.
    pub tune_step: bool,
    pub target_acceptance: f64,
    /// Skip resampling when φ = 1 is reached with ESS above threshold,
    /// carrying the weights into the next time instead.
    pub skip_resampling: bool,
    pub restriction: Restriction,
    pub safeguard: PhiSafeguard,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 1000,
            threshold: None,
            mcmc_steps: 20,
            pcn_step: 0.2,
            tune_step: false,
            target_acceptance: 0.3,
            skip_resampling: false,
            restriction: Restriction::Both,
            safeguard: PhiSafeguard::LogSpace,
            seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(self.ensemble_size as f64 / 3.0)
    }

    pub fn validate(&self) -> Result<(), SmcError> {
        let j = self.ensemble_size as f64;
        let t = self.threshold();
        if self.ensemble_size < 2 {
            return Err(SmcError::Config("ensemble size must be at least 2".into()));
        }
        if !(t >= 1.0 && t <= j) {
            return Err(SmcError::Config(format!("threshold {t} outside [1, {j}]")));
        }
        if self.mcmc_steps == 0 {
            return Err(SmcError::Config("at least one MCMC step is required".into()));
        }
        if !(self.pcn_step > 0.0 && self.pcn_step < 1.0) {
            return Err(SmcError::Config(format!("pcn step {} outside (0, 1)", self.pcn_step)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(SmcError::Config("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// `√(1−β²) c + β ξ` with `ξ ~ N(0, I)`.
pub fn pcn_propose<R: Rng + ?Sized>(current: &[f64], beta: f64, rng: &mut R) -> CoeffVector {
    let keep = (1.0 - beta * beta).sqrt();
    CoeffVector(
        current
            .iter()
            .map(|c| keep * c + beta * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// The pcn proposal for a given innovation vector.
pub fn pcn_propose_with(current: &[f64], beta: f64, innovation: &[f64]) -> CoeffVector {
    let keep = (1.0 - beta * beta).sqrt();
    CoeffVector(
        current
            .iter()
            .zip(innovation)
            .map(|(c, x)| keep * c + beta * x)
            .collect(),
    )
}

/// A particle with its field and cached forward outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub coeffs: CoeffVector,
    pub values: Vec<f64>,
    /// Outputs at every assimilated time `s = 1..=n`.
    pub outputs: Vec<ForwardOutput>,
    /// `ℓ_s` for `s = 1..=n`.
    pub logliks: Vec<f64>,
}

/// The tempered posterior `μ_{n,r}` seen by the mutation kernel.
pub struct TemperedTarget<'a, M: ForwardModel> {
    pub prior: &'a GaussianPrior,
    pub model: &'a M,
    pub sensors: &'a [f64],
    /// Records for `s = 1..=n`.
    pub records: &'a [ObservationRecord],
    pub phi: f64,
    pub restriction: Restriction,
}

impl<M: ForwardModel> TemperedTarget<'_, M> {
    /// Builds a particle at `coeffs`, solving the forward model if needed.
    pub fn particle(&self, coeffs: CoeffVector) -> Result<Particle, SmcError> {
        let values = self.prior.values(&coeffs);
        if self.records.is_empty() {
            return Ok(Particle {
                coeffs,
                values,
                outputs: Vec::new(),
                logliks: Vec::new(),
            });
        }
        let field = LogPermField::new(self.prior.grid(), values)?;
        let times: Vec<f64> = self.records.iter().map(|r| r.time).collect();
        let outputs = self.model.predict(&field, &times, self.sensors)?;
        let logliks = outputs
            .iter()
            .zip(self.records)
            .map(|(o, r)| log_likelihood(o, r, self.restriction))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Particle {
            coeffs,
            values: field.into_values(),
            outputs,
            logliks,
        })
    }

    /// `φ ℓ_n + Σ_{s<n} ℓ_s`.
    pub fn log_density(&self, particle: &Particle) -> f64 {
        match particle.logliks.split_last() {
            Some((last, earlier)) => self.phi * last + earlier.iter().sum::<f64>(),
            None => 0.0,
        }
    }

    pub fn forward_solves(&self) -> u64 {
        u64::from(!self.records.is_empty())
    }
}

/// Outcome of one mutation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationReport {
    pub n: usize,
    pub r: usize,
    pub phi: f64,
    /// Step size at the start of the sweep.
    pub beta: f64,
    /// Step size after in-sweep tuning; equals `beta` without tuning.
    pub final_beta: f64,
    pub acceptance: f64,
    /// Proposals rejected because the forward model failed.
    pub failures: u64,
    pub movement: ModeMovement,
}

/// `steps` pcn Metropolis steps for every particle, invariant for `target`.
///
/// Particle `j` draws from the stream `(seed, n, r, j)`, so the result does
/// not depend on how particles are scheduled across threads. All particles
/// take step `i` before any takes step `i + 1`; with `tuning = Some(a)` the
/// step size is rescaled between steps towards population acceptance `a`.
pub fn pcn_mutate<M: ForwardModel>(
    particles: &mut [Particle],
    target: &TemperedTarget<'_, M>,
    steps: usize,
    beta: f64,
    tuning: Option<f64>,
    seed: u64,
    stage: (usize, usize),
) -> Result<MutationReport, SmcError> {
    let (n, r) = stage;
    let pre: Vec<Vec<f64>> = particles.iter().map(|p| p.coeffs.0.clone()).collect();
    let mut chains: Vec<(Stream, f64)> = particles
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let rng = stream(seed, &[tag::MUTATE, n as u64, r as u64, j as u64]);
            (rng, target.log_density(p))
        })
        .collect();
    let mut step_beta = beta;
    let mut accepted = 0u64;
    let mut failures = 0u64;
    for _ in 0..steps {
        let tallies: Vec<(u64, u64)> = particles
            .par_iter_mut()
            .zip(chains.par_iter_mut())
            .enumerate()
            .map(|(j, (particle, (rng, current)))| {
                let proposal = pcn_propose(&particle.coeffs, step_beta, rng);
                let u: f64 = rng.random();
                match target.particle(proposal) {
                    Ok(candidate) => {
                        let proposed = target.log_density(&candidate);
                        if u < (proposed - *current).exp() {
                            *particle = candidate;
                            *current = proposed;
                            return (1, 0);
                        }
                        (0, 0)
                    }
                    Err(e) => {
                        log::warn!("stage ({n}, {r}) particle {j}: proposal rejected: {e}");
                        (0, 1)
                    }
                }
            })
            .collect();
        let step_accepted: u64 = tallies.iter().map(|t| t.0).sum();
        accepted += step_accepted;
        failures += tallies.iter().map(|t| t.1).sum::<u64>();
        if let Some(goal) = tuning {
            step_beta = tuned_step(step_beta, step_accepted as f64 / particles.len() as f64, goal);
        }
    }
    let post: Vec<Vec<f64>> = particles.iter().map(|p| p.coeffs.0.clone()).collect();
    let movement = mutation_quality(&pre, &post, &ensemble_mean(&pre))?;
    Ok(MutationReport {
        n,
        r,
        phi: target.phi,
        beta,
        final_beta: step_beta,
        acceptance: accepted as f64 / (particles.len() * steps) as f64,
        failures,
        movement,
    })
}

/// Everything a completed SMC run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SmcRun {
    pub prior: EnsembleSnapshot,
    /// Approximations of `μ_n` for `n = 1..=N`.
    pub posteriors: Vec<EnsembleSnapshot>,
    pub trace: TemperTrace,
    pub mutations: Vec<MutationReport>,
    /// Forward solves per observation time.
    pub forward_evaluations: Vec<u64>,
}

fn snapshot(n: usize, particles: &[Particle], weights: Option<&WeightSet>) -> EnsembleSnapshot {
    EnsembleSnapshot {
        n,
        fields: particles.iter().map(|p| p.values.clone()).collect(),
        coeffs: Some(particles.iter().map(|p| p.coeffs.0.clone()).collect()),
        weights: weights.map(|w| w.normalized().to_vec()),
    }
}

/// Runs the sampler through all `records`.
pub fn run_smc<M: ForwardModel>(
    config: &SmcConfig,
    prior: &GaussianPrior,
    model: &M,
    sensors: &[f64],
    records: &[ObservationRecord],
) -> Result<SmcRun, SmcError> {
    config.validate()?;
    let j = config.ensemble_size;
    let thresh = config.threshold();
    let seed = config.seed;
    let prior_target = TemperedTarget {
        prior,
        model,
        sensors,
        records: &[],
        phi: 1.0,
        restriction: config.restriction,
    };
    let mut particles: Vec<Particle> = (0..j)
        .map(|i| {
            let coeffs = prior.sample_coeffs(&mut stream(seed, &[tag::PRIOR, i as u64]));
            prior_target.particle(coeffs)
        })
        .collect::<Result<_, _>>()?;
    let prior_snapshot = snapshot(0, &particles, None);

    let mut trace = TemperTrace::new();
    let mut mutations = Vec::new();
    let mut forward_evaluations = Vec::with_capacity(records.len());
    let mut posteriors = Vec::with_capacity(records.len());
    let mut carried: Option<WeightSet> = None;
    let mut beta = config.pcn_step;

    for n in 1..=records.len() {
        let base_target = TemperedTarget {
            records: &records[..n],
            phi: 0.0,
            ..prior_target
        };
        particles = particles
            .into_par_iter()
            .map(|p| base_target.particle(p.coeffs))
            .collect::<Result<_, _>>()?;
        let mut evaluations = j as u64;
        let mut phi = 0.0;
        loop {
            let loglik: Vec<f64> = particles.iter().map(|p| p.logliks[n - 1]).collect();
            let base = carried.as_ref().map(|w| w.log_weights().to_vec());
            let choice = select_phi(&loglik, base.as_deref(), phi, thresh, config.safeguard)?;
            let stage = trace.record(n, &choice);
            let delta = choice.phi - phi;
            let log_w: Vec<f64> = match &base {
                Some(b) => loglik.iter().zip(b).map(|(l, b)| b + delta * l).collect(),
                None => loglik.iter().map(|l| delta * l).collect(),
            };
            let weights = WeightSet::from_log_weights(log_w)?;
            let skip = config.skip_resampling && choice.phi == 1.0 && choice.ess > thresh;
            if skip {
                let normalized = weights.normalized().iter().map(|w| w.ln()).collect();
                carried = Some(WeightSet::from_log_weights(normalized)?);
            } else {
                let idx = multinomial_resample(&weights, &mut stream(seed, &[tag::RESAMPLE, n as u64, stage.r as u64]));
                particles = idx.iter().map(|&i| particles[i].clone()).collect();
                carried = None;
            }
            let target = TemperedTarget {
                phi: choice.phi,
                ..base_target
            };
            let tuning = config.tune_step.then_some(config.target_acceptance);
            let report = pcn_mutate(&mut particles, &target, config.mcmc_steps, beta, tuning, seed, (n, stage.r))?;
            evaluations += (j * config.mcmc_steps) as u64 * target.forward_solves();
            beta = report.final_beta;
            mutations.push(report);
            phi = choice.phi;
            if phi == 1.0 {
                break;
            }
        }
        forward_evaluations.push(evaluations);
        posteriors.push(snapshot(n, &particles, carried.as_ref()));
    }
    Ok(SmcRun {
        prior: prior_snapshot,
        posteriors,
        trace,
        mutations,
        forward_evaluations,
    })
}

/// Scales β by `√(acceptance/target)`, limited to a factor in `[0.5, 1.5]`.
fn tuned_step(beta: f64, acceptance: f64, target: f64) -> f64 {
    (beta * (acceptance / target).sqrt().clamp(0.5, 1.5)).clamp(1e-3, 0.99)
}

/// `C = J N_μ Σ_n q_n g_n/g_N`.
pub fn smc_cost(trace: &TemperTrace, config: &SmcConfig, schedule: &CostSchedule) -> f64 {
    let counts = trace.counts(schedule.ratios.len());
    (config.ensemble_size * config.mcmc_steps) as f64 * schedule.weighted_count(&counts)
}
