//! Experiment harness: configuration, synthetic data, repeated runs and sweeps.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    benchmark_errors, moving_domain_error, summarize_snapshot, truth_error, variance_ratio,
    DiagnosticsError, EnsembleSummary,
};
use crate::ensemble::EnsembleSnapshot;
use crate::forward::{ForwardError, ForwardModel, FrontSolver, Grid1D, LogPermField, ModelConstants, SolverSettings, Transfer};
use crate::observation::{equispaced_sensors, generate_synthetic, MeasurementConfig, NoiseModel, ObservationError, ObservationRecord, Restriction};
use crate::prior::{GaussianPrior, MaternParams, PriorError};
use crate::renka::{renka_cost, run_renka, RenkaConfig, RenkaError};
use crate::rng::{derive_key, stream, tag};
use crate::smc::{run_smc, smc_cost, MutationReport, SmcConfig, SmcError};
use crate::tempering::{CostSchedule, PhiSafeguard, TemperTrace};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Renka(#[from] RenkaError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Smc,
    #[default]
    Renka,
}

/// Sampler settings shared by both algorithms; SMC-only fields are ignored by REnKA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: Algorithm,
    pub ensemble_size: usize,
    /// ESS threshold; omitted means `J/3`.
    pub threshold: Option<f64>,
    pub restriction: Restriction,
    pub safeguard: PhiSafeguard,
    pub mcmc_steps: usize,
    pub pcn_step: f64,
    pub tune_step: bool,
    pub target_acceptance: f64,
    pub skip_resampling: bool,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        let smc = SmcConfig::default();
        Self {
            kind: Algorithm::default(),
            ensemble_size: smc.ensemble_size,
            threshold: None,
            restriction: smc.restriction,
            safeguard: smc.safeguard,
            mcmc_steps: smc.mcmc_steps,
            pcn_step: smc.pcn_step,
            tune_step: smc.tune_step,
            target_acceptance: smc.target_acceptance,
            skip_resampling: smc.skip_resampling,
        }
    }
}

impl AlgorithmConfig {
    pub fn smc(&self, seed: u64) -> SmcConfig {
        SmcConfig {
            ensemble_size: self.ensemble_size,
            threshold: self.threshold,
            mcmc_steps: self.mcmc_steps,
            pcn_step: self.pcn_step,
            tune_step: self.tune_step,
            target_acceptance: self.target_acceptance,
            skip_resampling: self.skip_resampling,
            restriction: self.restriction,
            safeguard: self.safeguard,
            seed,
        }
    }

    pub fn renka(&self, seed: u64) -> RenkaConfig {
        RenkaConfig {
            ensemble_size: self.ensemble_size,
            threshold: self.threshold,
            restriction: self.restriction,
            safeguard: self.safeguard,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Cells of the grid the unknown is inferred on.
    pub inversion_cells: usize,
    /// Cells of the finer grid the synthetic data are generated on.
    pub data_cells: usize,
    pub length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            inversion_cells: 60,
            data_cells: 120,
            length: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub inversion: SolverSettings,
    pub data: SolverSettings,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            inversion: SolverSettings::default(),
            data: SolverSettings {
                steps: 4000,
                ..SolverSettings::default()
            },
        }
    }
}

/// Where the true field comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    /// Seeds the truth draw and the observation noise.
    pub seed: u64,
    /// CSV of truth values on the data grid, replacing the prior draw.
    pub file: Option<PathBuf>,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self { seed: 7, file: None }
    }
}

/// A complete, reproducible experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for the samplers; repeat `k` uses a key derived from it.
    pub seed: u64,
    pub repeats: usize,
    pub grid: GridConfig,
    pub constants: ModelConstants,
    pub solver: SolverConfig,
    pub prior: MaternParams,
    pub measurement: MeasurementConfig,
    pub noise: NoiseModel,
    pub algorithm: AlgorithmConfig,
    pub truth: TruthConfig,
    /// How the truth is carried from the data grid to the inversion grid.
    pub transfer: Transfer,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 1,
            grid: GridConfig::default(),
            constants: ModelConstants::default(),
            solver: SolverConfig::default(),
            prior: MaternParams::default(),
            measurement: MeasurementConfig::default(),
            noise: NoiseModel::default(),
            algorithm: AlgorithmConfig::default(),
            truth: TruthConfig::default(),
            transfer: Transfer::default(),
        }
    }
}

impl RunConfig {
    pub fn inversion_grid(&self) -> Result<Grid1D, ExperimentError> {
        Ok(Grid1D::new(self.grid.inversion_cells, self.grid.length)?)
    }

    pub fn data_grid(&self) -> Result<Grid1D, ExperimentError> {
        Ok(Grid1D::new(self.grid.data_cells, self.grid.length)?)
    }

    pub fn inversion_solver(&self) -> Result<FrontSolver, ExperimentError> {
        Ok(FrontSolver::new(self.constants, self.solver.inversion)?)
    }

    pub fn data_solver(&self) -> Result<FrontSolver, ExperimentError> {
        Ok(FrontSolver::new(self.constants, self.solver.data)?)
    }

    /// Sampler seed of repeat `k`.
    pub fn repeat_seed(&self, k: usize) -> u64 {
        derive_key(self.seed, &[tag::REPEAT, k as u64])
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.inversion_grid()?;
        self.data_grid()?;
        self.inversion_solver()?;
        self.data_solver()?;
        self.prior.validate()?;
        self.noise.validate()?;
        self.measurement.validate(self.grid.length)?;
        if self.repeats == 0 {
            return Err(ExperimentError::Config("repeats must be at least 1".into()));
        }
        if let Some(&t) = self.measurement.times.last() {
            let horizon = self.solver.inversion.horizon.min(self.solver.data.horizon);
            if t > horizon {
                return Err(ExperimentError::Config(format!(
                    "last observation time {t} exceeds the solver horizon {horizon}"
                )));
            }
        }
        match self.algorithm.kind {
            Algorithm::Smc => self.algorithm.smc(self.seed).validate()?,
            Algorithm::Renka => self.algorithm.renka(self.seed).validate()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TruthSource {
    Seed { seed: u64 },
    File { path: PathBuf },
}

/// Synthetic data and the truth behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub source: TruthSource,
    pub truth_fine: LogPermField,
    /// The truth on the inversion grid.
    pub truth: LogPermField,
    pub records: Vec<ObservationRecord>,
    /// Noise-free front of the truth at each observation time.
    pub fronts: Vec<f64>,
}

/// Draws the truth from the prior on the data grid and simulates the data.
pub fn simulate(config: &RunConfig) -> Result<Dataset, ExperimentError> {
    config.validate()?;
    let grid = config.data_grid()?;
    let prior = GaussianPrior::new(grid, config.prior)?;
    let seed = config.truth.seed;
    let (_, truth) = prior.sample(&mut stream(seed, &[tag::TRUTH]))?;
    simulate_with_truth(config, truth, TruthSource::Seed { seed })
}

/// Simulates the data for a given truth on the data grid.
pub fn simulate_with_truth(
    config: &RunConfig,
    truth_fine: LogPermField,
    source: TruthSource,
) -> Result<Dataset, ExperimentError> {
    config.validate()?;
    if truth_fine.grid() != config.data_grid()? {
        return Err(ExperimentError::Config(format!(
            "truth has {} cells, the data grid {}",
            truth_fine.grid().num_cells(),
            config.grid.data_cells
        )));
    }
    let solver = config.data_solver()?;
    let records = generate_synthetic(&truth_fine, &solver, &config.measurement, &config.noise, config.truth.seed)?;
    let fronts = solver
        .predict(&truth_fine, &config.measurement.times, &[])?
        .iter()
        .map(|o| o.front)
        .collect();
    let truth = truth_fine.transfer(config.inversion_grid()?, config.transfer)?;
    Ok(Dataset {
        source,
        truth_fine,
        truth,
        records,
        fronts,
    })
}

/// Metrics of one posterior approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub repeat: usize,
    pub n: usize,
    pub time: f64,
    pub truth_error: f64,
    pub moving_error: f64,
    pub variance_ratio: f64,
    pub mean_error: Option<f64>,
    pub variance_error: Option<f64>,
    pub stages: usize,
    pub forward_evaluations: u64,
    pub acceptance: Option<f64>,
    pub movement: Option<f64>,
}

/// Output of one repeat of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub metrics: Vec<MetricRow>,
    pub trace: TemperTrace,
    pub mutations: Vec<MutationReport>,
    /// Prior summary first, then one per observation time.
    pub summaries: Vec<EnsembleSummary>,
    pub forward_evaluations: Vec<u64>,
    /// Cost in units of forward solves up to the last observation time.
    pub cost: f64,
    pub fallbacks: u64,
    /// The ensemble after the last observation time.
    pub final_ensemble: EnsembleSnapshot,
}

impl RepeatResult {
    pub fn total_stages(&self) -> usize {
        self.trace.stages().len()
    }
}

/// Shared, read-only pieces of an experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: RunConfig,
    pub prior: GaussianPrior,
    pub solver: FrontSolver,
}

impl Setup {
    pub fn new(config: RunConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let prior = GaussianPrior::new(config.inversion_grid()?, config.prior)?;
        let solver = config.inversion_solver()?;
        Ok(Self { config, prior, solver })
    }

    /// Runs repeat `k` on `data`, comparing with `benchmark` (posterior summaries for `n = 1..`).
    pub fn run_repeat(
        &self,
        data: &Dataset,
        k: usize,
        benchmark: Option<&[EnsembleSummary]>,
    ) -> Result<RepeatResult, ExperimentError> {
        let config = &self.config;
        let seed = config.repeat_seed(k);
        let sensors = config.measurement.active_sensors();
        let times = &config.measurement.times;
        let schedule = CostSchedule::from_times(times);
        let (prior, posteriors, trace, mutations, forward_evaluations, cost, fallbacks) = match config.algorithm.kind {
            Algorithm::Smc => {
                let c = config.algorithm.smc(seed);
                let run = run_smc(&c, &self.prior, &self.solver, sensors, &data.records)?;
                let cost = smc_cost(&run.trace, &c, &schedule);
                (run.prior, run.posteriors, run.trace, run.mutations, run.forward_evaluations, cost, 0)
            }
            Algorithm::Renka => {
                let c = config.algorithm.renka(seed);
                let run = run_renka(&c, &self.prior, &self.solver, sensors, &data.records)?;
                let cost = renka_cost(&run.trace, &c, &schedule);
                (run.prior, run.posteriors, run.trace, Vec::new(), run.forward_evaluations, cost, run.fallbacks)
            }
        };
        let grid = self.prior.grid();
        let truth = data.truth.values();
        let prior_summary = summarize_snapshot(&prior)?;
        let mut summaries = vec![prior_summary];
        let mut metrics = Vec::with_capacity(posteriors.len());
        let counts = trace.counts(times.len());
        for (i, post) in posteriors.iter().enumerate() {
            let n = i + 1;
            let summary = summarize_snapshot(post)?;
            let (mean_error, variance_error) = match benchmark.and_then(|b| b.get(i)) {
                Some(b) => {
                    let (e, v) = benchmark_errors(&summary, b, grid)?;
                    (Some(e), Some(v))
                }
                None => (None, None),
            };
            let at_n: Vec<&MutationReport> = mutations.iter().filter(|m| m.n == n).collect();
            let average = |f: &dyn Fn(&MutationReport) -> f64| {
                (!at_n.is_empty()).then(|| at_n.iter().map(|m| f(m)).sum::<f64>() / at_n.len() as f64)
            };
            metrics.push(MetricRow {
                repeat: k,
                n,
                time: times[i],
                truth_error: truth_error(&summary.mean, truth, grid)?,
                moving_error: moving_domain_error(&summary.mean, truth, grid, data.fronts[i])?,
                variance_ratio: variance_ratio(&summary.variance, &summaries[0].variance, grid)?,
                mean_error,
                variance_error,
                stages: counts[i],
                forward_evaluations: forward_evaluations[i],
                acceptance: average(&|m| m.acceptance),
                movement: average(&|m| m.movement.mean),
            });
            summaries.push(summary);
        }
        let final_ensemble = posteriors.last().cloned().unwrap_or(prior);
        Ok(RepeatResult {
            repeat: k,
            seed,
            metrics,
            trace,
            mutations,
            summaries,
            forward_evaluations,
            cost,
            fallbacks,
            final_ensemble,
        })
    }

    /// Runs all configured repeats in order.
    pub fn run(&self, data: &Dataset, benchmark: Option<&[EnsembleSummary]>) -> Result<Vec<RepeatResult>, ExperimentError> {
        (0..self.config.repeats)
            .map(|k| self.run_repeat(data, k, benchmark))
            .collect()
    }
}

/// Runs `f` on a pool of `workers` threads, or the global pool for `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// One pressure/front measurement configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorCase {
    pub sensors: usize,
    pub front: bool,
}

fn default_sensor_cases() -> Vec<SensorCase> {
    let case = |sensors, front| SensorCase { sensors, front };
    vec![
        case(0, true),
        case(5, true),
        case(9, true),
        case(20, true),
        case(5, false),
        case(9, false),
        case(20, false),
    ]
}

fn default_noise_levels() -> Vec<f64> {
    vec![0.15, 0.05, 0.025, 0.01, 0.005]
}

fn default_time_counts() -> Vec<usize> {
    vec![1, 2, 3, 4, 5, 8, 10, 12, 14, 16]
}

fn default_final_time() -> f64 {
    0.36
}

fn default_resolution() -> usize {
    16
}

/// The axis a sweep varies; everything else comes from the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum SweepAxis {
    Sensors {
        #[serde(default = "default_sensor_cases")]
        cases: Vec<SensorCase>,
    },
    Noise {
        #[serde(default = "default_noise_levels")]
        levels: Vec<f64>,
    },
    Times {
        #[serde(default = "default_time_counts")]
        counts: Vec<usize>,
        #[serde(default = "default_final_time")]
        final_time: f64,
        /// Size of the master grid the nested time sets are drawn from.
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    #[serde(default = "default_sweep_repeats")]
    pub repeats: usize,
}

fn default_sweep_repeats() -> usize {
    15
}

/// The first `count` points of the grid `k·final/resolution`, taken coarsest level first.
///
/// Point `k` enters at the level given by its number of factors of two, so the
/// set for a smaller count is always contained in the set for a larger one and
/// `final` is always present.
pub fn nested_times(count: usize, final_time: f64, resolution: usize) -> Result<Vec<f64>, ExperimentError> {
    if count == 0 || count > resolution {
        return Err(ExperimentError::Config(format!(
            "cannot choose {count} nested times from a grid of {resolution}"
        )));
    }
    let mut order: Vec<usize> = (1..=resolution).collect();
    order.sort_by_key(|&k| {
        let level = if k == resolution { u32::MAX } else { k.trailing_zeros() };
        (std::cmp::Reverse(level), k)
    });
    let mut chosen: Vec<usize> = order[..count].to_vec();
    chosen.sort_unstable();
    Ok(chosen
        .iter()
        .map(|&k| k as f64 * final_time / resolution as f64)
        .collect())
}

/// A labelled configuration within a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: RunConfig,
}

/// Expands the sweep axis over `base`.
pub fn sweep_variants(base: &RunConfig, spec: &SweepSpec) -> Result<Vec<Variant>, ExperimentError> {
    let with = |label: String, edit: &dyn Fn(&mut RunConfig)| {
        let mut config = base.clone();
        config.repeats = spec.repeats;
        edit(&mut config);
        Variant { label, config }
    };
    let variants: Vec<Variant> = match &spec.axis {
        SweepAxis::Sensors { cases } => cases
            .iter()
            .map(|c| {
                let label = format!("M{}-{}", c.sensors, if c.front { "front" } else { "nofront" });
                with(label, &|cfg| {
                    cfg.measurement.sensors = equispaced_sensors(c.sensors, cfg.grid.length);
                    cfg.measurement.include_pressure = c.sensors > 0;
                    cfg.measurement.include_front = c.front;
                })
            })
            .collect(),
        SweepAxis::Noise { levels } => levels
            .iter()
            .map(|&l| with(format!("noise-{l}"), &|cfg| cfg.noise.fraction = l))
            .collect(),
        SweepAxis::Times {
            counts,
            final_time,
            resolution,
        } => counts
            .iter()
            .map(|&c| {
                let times = nested_times(c, *final_time, *resolution)?;
                Ok(with(format!("N{c}"), &|cfg| cfg.measurement.times = times.clone()))
            })
            .collect::<Result<_, ExperimentError>>()?,
    };
    for v in &variants {
        v.config
            .validate()
            .map_err(|e| ExperimentError::Config(format!("sweep variant {}: {e}", v.label)))?;
    }
    Ok(variants)
}

/// Results of one sweep variant; failed repeats keep their error message.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    pub label: String,
    pub config: RunConfig,
    pub repeats: Vec<Result<RepeatResult, String>>,
}

impl VariantOutcome {
    pub fn succeeded(&self) -> impl Iterator<Item = &RepeatResult> {
        self.repeats.iter().filter_map(|r| r.as_ref().ok())
    }
}

/// Runs every (variant, repeat) pair of a sweep as an independent job.
///
/// Truths and data are simulated once per variant from the base truth seed,
/// so all variants invert the same true field. Failures are recorded and the
/// sweep continues.
pub fn run_sweep(base: &RunConfig, spec: &SweepSpec, workers: Option<usize>) -> Result<Vec<VariantOutcome>, ExperimentError> {
    let variants = sweep_variants(base, spec)?;
    with_workers(workers, || {
        let prepared: Vec<Result<(Setup, Dataset), String>> = variants
            .par_iter()
            .map(|v| {
                let setup = Setup::new(v.config.clone()).map_err(|e| e.to_string())?;
                let data = simulate(&v.config).map_err(|e| e.to_string())?;
                Ok((setup, data))
            })
            .collect();
        let jobs: Vec<(usize, usize)> = (0..variants.len())
            .flat_map(|v| (0..spec.repeats).map(move |k| (v, k)))
            .collect();
        let results: Vec<Result<RepeatResult, String>> = jobs
            .par_iter()
            .map(|&(v, k)| {
                let (setup, data) = prepared[v].as_ref().map_err(Clone::clone)?;
                setup.run_repeat(data, k, None).map_err(|e| {
                    log::error!("sweep variant {} repeat {k} failed: {e}", variants[v].label);
                    e.to_string()
                })
            })
            .collect();
        let mut results = results.into_iter();
        variants
            .iter()
            .map(|v| VariantOutcome {
                label: v.label.clone(),
                config: v.config.clone(),
                repeats: results.by_ref().take(spec.repeats).collect(),
            })
            .collect()
    })
}

/// Mean and spread of one metric over the successful repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    /// Observation index, or 0 for whole-run quantities.
    pub n: usize,
    pub time: Option<f64>,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

fn aggregate_values(variant: &str, n: usize, time: Option<f64>, values: &[f64]) -> AggregateRow {
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count as f64;
    let std = if count > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    AggregateRow {
        variant: variant.to_string(),
        n,
        time,
        count,
        mean,
        std,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Per-observation metrics aggregated over repeats.
pub const PER_TIME_METRICS: [&str; 5] = ["truth_error", "moving_error", "variance_ratio", "stages", "forward_evaluations"];

/// Whole-run metrics aggregated over repeats.
pub const PER_RUN_METRICS: [&str; 3] = ["total_stages", "cost", "total_forward_evaluations"];

fn per_time_value(row: &MetricRow, metric: &str) -> f64 {
    match metric {
        "truth_error" => row.truth_error,
        "moving_error" => row.moving_error,
        "variance_ratio" => row.variance_ratio,
        "stages" => row.stages as f64,
        "forward_evaluations" => row.forward_evaluations as f64,
        _ => f64::NAN,
    }
}

fn per_run_value(run: &RepeatResult, metric: &str) -> f64 {
    match metric {
        "total_stages" => run.total_stages() as f64,
        "cost" => run.cost,
        "total_forward_evaluations" => run.forward_evaluations.iter().sum::<u64>() as f64,
        _ => f64::NAN,
    }
}

/// Rows of the aggregated table for `metric`, one per (variant, n).
pub fn aggregate(outcomes: &[VariantOutcome], metric: &str) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for o in outcomes {
        let runs: Vec<&RepeatResult> = o.succeeded().collect();
        if runs.is_empty() {
            continue;
        }
        if PER_RUN_METRICS.contains(&metric) {
            let values: Vec<f64> = runs.iter().map(|r| per_run_value(r, metric)).collect();
            rows.push(aggregate_values(&o.label, 0, None, &values));
            continue;
        }
        for (i, &time) in o.config.measurement.times.iter().enumerate() {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.metrics.get(i))
                .map(|m| per_time_value(m, metric))
                .collect();
            if !values.is_empty() {
                rows.push(aggregate_values(&o.label, i + 1, Some(time), &values));
            }
        }
    }
    rows
}

/// Mean of `metric` at the last observation time of `variant`, over successful repeats.
pub fn final_mean(outcomes: &[VariantOutcome], variant: &str, metric: &str) -> Option<f64> {
    let rows = aggregate(outcomes, metric);
    rows.iter().rfind(|r| r.variant == variant).map(|r| r.mean)
}
