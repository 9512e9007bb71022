//! Measurement designs, synthetic data and Gaussian log-likelihoods.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{ForwardError, ForwardModel, ForwardOutput, FrontSolver, LogPermField};
use crate::rng::{stream, tag};

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error("invalid measurement configuration: {0}")]
    Config(String),
    #[error("invalid noise model: {0}")]
    Noise(String),
    #[error("dimension mismatch: record has {expected} pressures, output has {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

/// Where and when the process is observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementConfig {
    pub sensors: Vec<f64>,
    pub times: Vec<f64>,
    pub include_front: bool,
    pub include_pressure: bool,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            sensors: equispaced_sensors(9, 1.0),
            times: uniform_times(5, 0.072),
            include_front: true,
            include_pressure: true,
        }
    }
}

/// `M` interior points `m·x*/(M+1)`.
pub fn equispaced_sensors(count: usize, length: f64) -> Vec<f64> {
    (1..=count)
        .map(|m| m as f64 * length / (count + 1) as f64)
        .collect()
}

/// `t_n = n·spacing` for `n = 1..=count`.
pub fn uniform_times(count: usize, spacing: f64) -> Vec<f64> {
    (1..=count).map(|n| n as f64 * spacing).collect()
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[1] > w[0])
}

impl MeasurementConfig {
    pub fn validate(&self, length: f64) -> Result<(), ObservationError> {
        if !strictly_increasing(&self.times) || self.times.first().is_some_and(|&t| t <= 0.0) {
            return Err(ObservationError::Config(
                "observation times must be positive and strictly increasing".into(),
            ));
        }
        if !strictly_increasing(&self.sensors)
            || self.sensors.iter().any(|&x| x <= 0.0 || x > length)
        {
            return Err(ObservationError::Config(format!(
                "sensor positions must be strictly increasing within (0, {length}]"
            )));
        }
        if !self.include_front && !(self.include_pressure && !self.sensors.is_empty()) {
            return Err(ObservationError::Config(
                "configuration observes nothing: enable the front or add pressure sensors".into(),
            ));
        }
        Ok(())
    }

    /// Sensors whose pressures are recorded.
    pub fn active_sensors(&self) -> &[f64] {
        if self.include_pressure {
            &self.sensors
        } else {
            &[]
        }
    }
}

/// Multiplicative Gaussian noise with a variance floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Noise standard deviation as a fraction of each noise-free value.
    pub fraction: f64,
    pub variance_floor: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            fraction: 0.015,
            variance_floor: 1e-12,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), ObservationError> {
        if self.fraction.is_finite()
            && self.fraction >= 0.0
            && self.variance_floor.is_finite()
            && self.variance_floor > 0.0
        {
            Ok(())
        } else {
            Err(ObservationError::Noise(format!("{self:?}")))
        }
    }

    pub fn variance(&self, signal: f64) -> f64 {
        (self.fraction * signal).powi(2).max(self.variance_floor)
    }
}

/// One observed value and its noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Datum {
    pub value: f64,
    pub variance: f64,
}

/// Data collected at one observation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    /// One-based time index `n`.
    pub index: usize,
    pub time: f64,
    pub front: Option<Datum>,
    pub pressure: Option<Vec<Datum>>,
}

/// Which observed components enter the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Restriction {
    #[default]
    Both,
    PressureOnly,
    FrontOnly,
}

impl Restriction {
    fn front(self) -> bool {
        self != Restriction::PressureOnly
    }

    fn pressure(self) -> bool {
        self != Restriction::FrontOnly
    }
}

impl ObservationRecord {
    fn selected(&self, restrict: Restriction) -> (Option<Datum>, &[Datum]) {
        let front = if restrict.front() { self.front } else { None };
        let pressure = match (&self.pressure, restrict.pressure()) {
            (Some(p), true) => p.as_slice(),
            _ => &[],
        };
        (front, pressure)
    }

    /// Number of scalar observations used under `restrict`.
    pub fn dimension(&self, restrict: Restriction) -> usize {
        let (front, pressure) = self.selected(restrict);
        usize::from(front.is_some()) + pressure.len()
    }

    /// Observed values and variances, front first then sensors in order.
    pub fn data(&self, restrict: Restriction) -> (Vec<f64>, Vec<f64>) {
        let (front, pressure) = self.selected(restrict);
        front
            .iter()
            .chain(pressure)
            .map(|d| (d.value, d.variance))
            .unzip()
    }

    /// Predicted values in the layout of [`Self::data`].
    pub fn predicted(
        &self,
        output: &ForwardOutput,
        restrict: Restriction,
    ) -> Result<Vec<f64>, ObservationError> {
        let (front, pressure) = self.selected(restrict);
        self.check(output, pressure)?;
        let mut out = Vec::with_capacity(self.dimension(restrict));
        if front.is_some() {
            out.push(output.front);
        }
        out.extend_from_slice(&output.pressures[..pressure.len()]);
        Ok(out)
    }

    fn check(&self, output: &ForwardOutput, pressure: &[Datum]) -> Result<(), ObservationError> {
        if !pressure.is_empty() && output.pressures.len() != pressure.len() {
            return Err(ObservationError::Dimension {
                expected: pressure.len(),
                got: output.pressures.len(),
            });
        }
        Ok(())
    }
}

fn misfit(datum: &Datum, predicted: f64) -> Result<f64, ObservationError> {
    if !(datum.variance > 0.0 && datum.variance.is_finite()) {
        return Err(ObservationError::Noise(format!(
            "variance {} is not positive and finite",
            datum.variance
        )));
    }
    let r = datum.value - predicted;
    Ok(r * r / datum.variance)
}

/// `−½ Σ (y − G)²/γ` over the components selected by `restrict`.
pub fn log_likelihood(
    output: &ForwardOutput,
    record: &ObservationRecord,
    restrict: Restriction,
) -> Result<f64, ObservationError> {
    let (front, pressure) = record.selected(restrict);
    record.check(output, pressure)?;
    let mut sum = 0.0;
    if let Some(d) = front {
        sum += misfit(&d, output.front)?;
    }
    for (d, &p) in pressure.iter().zip(&output.pressures) {
        sum += misfit(d, p)?;
    }
    Ok(-0.5 * sum)
}

/// Noisy records from the noise-free outputs of `truth`.
///
/// Noise for the front at time `n` and for sensor `m` at time `n` come from
/// separate keyed streams, so configurations that share a component share its
/// noise realization, and changing the noise level only rescales it.
pub fn generate_synthetic(
    truth: &LogPermField,
    solver: &FrontSolver,
    config: &MeasurementConfig,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<ObservationRecord>, ObservationError> {
    config.validate(truth.grid().length())?;
    noise.validate()?;
    if let Some(&t) = config.times.last() {
        if t > solver.settings.horizon {
            return Err(ObservationError::Config(format!(
                "observation time {t} exceeds the simulation horizon {}",
                solver.settings.horizon
            )));
        }
    }
    let outputs = solver.predict(truth, &config.times, config.active_sensors())?;
    let perturb = |signal: f64, path: &[u64]| {
        let xi: f64 = stream(seed, path).sample(StandardNormal);
        Datum {
            value: signal + noise.fraction * signal.abs() * xi,
            variance: noise.variance(signal),
        }
    };
    Ok(outputs
        .iter()
        .zip(&config.times)
        .enumerate()
        .map(|(i, (out, &time))| {
            let n = i as u64 + 1;
            ObservationRecord {
                index: i + 1,
                time,
                front: config
                    .include_front
                    .then(|| perturb(out.front, &[tag::NOISE_FRONT, n])),
                pressure: config.include_pressure.then(|| {
                    out.pressures
                        .iter()
                        .enumerate()
                        .map(|(m, &p)| perturb(p, &[tag::NOISE_PRESSURE, n, m as u64]))
                        .collect()
                }),
            }
        })
        .collect())
}
