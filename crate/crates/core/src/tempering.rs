//! Importance weights, effective sample size, adaptive tempering and resampling.
//!
//! Tempering parameters live on the dyadic grid `k / 2^40`. Differences and
//! partial sums of such numbers are exact in double precision, so the
//! increments of a completed schedule add up to exactly 1.

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemperingError {
    #[error("empty ensemble")]
    Empty,
    #[error("non-finite log-likelihood {value} for particle {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("all weights vanish")]
    Degenerate,
    #[error("tempering parameters must satisfy 0 <= {prev} < {next} <= 1")]
    InvalidPhi { prev: f64, next: f64 },
    #[error("threshold {thresh} outside [1, {size}]")]
    InvalidThreshold { thresh: f64, size: usize },
    #[error("length mismatch: {0} log-likelihoods, {1} base weights")]
    Length(usize, usize),
}

/// Bits of resolution of the tempering grid.
pub const PHI_BITS: u32 = 40;
const PHI_SCALE: f64 = (1u64 << PHI_BITS) as f64;
/// Bisection stops once the bracket is this narrow.
pub const PHI_TOLERANCE: f64 = 1e-10;
pub const MAX_BISECTIONS: usize = 100;
const SCAN_POINTS: usize = 32;

fn grid_phi(k: u64) -> f64 {
    k as f64 / PHI_SCALE
}

/// Normalized importance weights with their log-space source.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    log_weights: Vec<f64>,
    normalized: Vec<f64>,
}

impl WeightSet {
    /// Normalizes by max-shift; `-∞` entries get weight zero.
    pub fn from_log_weights(log_weights: Vec<f64>) -> Result<Self, TemperingError> {
        if log_weights.is_empty() {
            return Err(TemperingError::Empty);
        }
        if let Some(index) = log_weights.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(TemperingError::NonFinite {
                index,
                value: log_weights[index],
            });
        }
        let top = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(TemperingError::Degenerate);
        }
        let mut normalized: Vec<f64> = log_weights.iter().map(|w| (w - top).exp()).collect();
        let total: f64 = normalized.iter().sum();
        for w in &mut normalized {
            *w /= total;
        }
        Ok(Self {
            log_weights,
            normalized,
        })
    }

    pub fn uniform(size: usize) -> Result<Self, TemperingError> {
        Self::from_log_weights(vec![0.0; size])
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn ess(&self) -> f64 {
        ess(self)
    }
}

fn check_logliks(loglik: &[f64]) -> Result<(), TemperingError> {
    if loglik.is_empty() {
        return Err(TemperingError::Empty);
    }
    match loglik.iter().position(|l| !l.is_finite()) {
        Some(index) => Err(TemperingError::NonFinite {
            index,
            value: loglik[index],
        }),
        None => Ok(()),
    }
}

fn tempered(loglik: &[f64], base: Option<&[f64]>, delta: f64) -> Vec<f64> {
    match base {
        Some(b) => loglik.iter().zip(b).map(|(l, b)| b + delta * l).collect(),
        None => loglik.iter().map(|l| delta * l).collect(),
    }
}

/// Weights `∝ exp((φ − φ_prev) ℓ_j)`.
pub fn incremental_weights(loglik: &[f64], phi_prev: f64, phi: f64) -> Result<WeightSet, TemperingError> {
    check_logliks(loglik)?;
    if !(0.0 <= phi_prev && phi_prev < phi && phi <= 1.0) {
        return Err(TemperingError::InvalidPhi {
            prev: phi_prev,
            next: phi,
        });
    }
    WeightSet::from_log_weights(tempered(loglik, None, phi - phi_prev))
}

/// `1 / Σ W_j²`.
pub fn ess(weights: &WeightSet) -> f64 {
    1.0 / weights.normalized.iter().map(|w| w * w).sum::<f64>()
}

/// ESS computed without any log-space shift, as a naive implementation would.
fn naive_ess(log_weights: &[f64]) -> Option<f64> {
    let w: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    (s > 0.0 && s.is_finite()).then(|| if s2 > 0.0 { s * s / s2 } else { f64::INFINITY })
}

/// How the next tempering parameter is searched for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiSafeguard {
    /// Log-space weights; every φ in `(φ_prev, 1]` is admissible.
    #[default]
    LogSpace,
    /// Naive weights: first cap φ at the largest value whose weights do not
    /// all underflow, then search below the cap.
    NaiveCap,
}

/// Result of one adaptive step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiChoice {
    pub phi: f64,
    /// ESS of the weights at the chosen φ.
    pub ess: f64,
    /// The search was limited by the underflow cap.
    pub capped: bool,
    /// A coarse scan found ESS increasing somewhere on `(φ_prev, 1]`.
    pub nonmonotone: bool,
}

/// Next tempering parameter for plain (equal-weight) ensembles.
pub fn next_phi(loglik: &[f64], phi_prev: f64, thresh: f64) -> Result<f64, TemperingError> {
    Ok(select_phi(loglik, None, phi_prev, thresh, PhiSafeguard::LogSpace)?.phi)
}

/// Adaptive choice of the next tempering parameter.
///
/// Returns 1 when the ESS at φ = 1 exceeds `thresh`. Otherwise bisects on the
/// dyadic grid for the smallest φ whose ESS is at most `thresh`. `base`
/// carries log-weights of an ensemble that was not resampled.
pub fn select_phi(
    loglik: &[f64],
    base: Option<&[f64]>,
    phi_prev: f64,
    thresh: f64,
    safeguard: PhiSafeguard,
) -> Result<PhiChoice, TemperingError> {
    check_logliks(loglik)?;
    let size = loglik.len();
    if let Some(b) = base {
        if b.len() != size {
            return Err(TemperingError::Length(size, b.len()));
        }
    }
    if !(0.0..1.0).contains(&phi_prev) {
        return Err(TemperingError::InvalidPhi {
            prev: phi_prev,
            next: 1.0,
        });
    }
    if !(thresh >= 1.0 && thresh <= size as f64) {
        return Err(TemperingError::InvalidThreshold { thresh, size });
    }
    let k_prev = (phi_prev * PHI_SCALE).floor() as u64;
    let top = 1u64 << PHI_BITS;

    let ess_at = |k: u64| -> Result<f64, TemperingError> {
        let lw = tempered(loglik, base, grid_phi(k) - phi_prev);
        match safeguard {
            PhiSafeguard::LogSpace => Ok(WeightSet::from_log_weights(lw)?.ess()),
            PhiSafeguard::NaiveCap => naive_ess(&lw).ok_or(TemperingError::Degenerate),
        }
    };

    let mut capped = false;
    let mut hi = top;
    if safeguard == PhiSafeguard::NaiveCap {
        // Largest grid point whose naive weights are still representable.
        let representable = |k: u64| naive_ess(&tempered(loglik, base, grid_phi(k) - phi_prev)).is_some();
        if !representable(top) {
            capped = true;
            let mut lo = k_prev;
            let mut up = top;
            for _ in 0..MAX_BISECTIONS {
                if up - lo <= 1 {
                    break;
                }
                let mid = lo + (up - lo) / 2;
                if representable(mid) {
                    lo = mid;
                } else {
                    up = mid;
                }
            }
            if lo == k_prev {
                return Err(TemperingError::Degenerate);
            }
            hi = lo;
        }
    }

    let nonmonotone = scan_nonmonotone(k_prev, hi, size, &ess_at);
    let ess_hi = ess_at(hi)?;
    if ess_hi > thresh {
        return Ok(PhiChoice {
            phi: grid_phi(hi),
            ess: ess_hi,
            capped,
            nonmonotone,
        });
    }
    let mut lo = k_prev;
    let width = (PHI_TOLERANCE * PHI_SCALE) as u64;
    let mut ess_best = ess_hi;
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= width.max(1) {
            break;
        }
        let mid = lo + (hi - lo) / 2;
        let e = ess_at(mid)?;
        if e > thresh {
            lo = mid;
        } else {
            hi = mid;
            ess_best = e;
        }
    }
    Ok(PhiChoice {
        phi: grid_phi(hi),
        ess: ess_best,
        capped,
        nonmonotone,
    })
}

fn scan_nonmonotone(
    k_prev: u64,
    k_hi: u64,
    size: usize,
    ess_at: &dyn Fn(u64) -> Result<f64, TemperingError>,
) -> bool {
    let span = k_hi - k_prev;
    let slack = 1e-9 * size as f64;
    let mut last = f64::INFINITY;
    for i in 1..=SCAN_POINTS as u64 {
        let Ok(e) = ess_at(k_prev + span / SCAN_POINTS as u64 * i) else {
            return false;
        };
        if e > last + slack {
            return true;
        }
        last = e;
    }
    false
}

/// `J` i.i.d. categorical draws from the normalized weights.
pub fn multinomial_resample<R: Rng + ?Sized>(weights: &WeightSet, rng: &mut R) -> Vec<usize> {
    let dist = WeightedIndex::new(weights.normalized()).expect("normalized weights are valid");
    (0..weights.len()).map(|_| dist.sample(rng)).collect()
}

/// One accepted tempering step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperStage {
    /// One-based observation index.
    pub n: usize,
    /// One-based stage within the observation time.
    pub r: usize,
    pub phi: f64,
    /// `φ_r − φ_{r−1}`, exact on the dyadic grid.
    pub increment: f64,
    /// `1 / increment`.
    pub alpha: f64,
    pub ess: f64,
    pub capped: bool,
    pub nonmonotone: bool,
}

/// All tempering steps of a run, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemperTrace {
    stages: Vec<TemperStage>,
}

impl TemperTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stages(&self) -> &[TemperStage] {
        &self.stages
    }

    /// Appends the step to `phi` for time `n`, deriving `r`, the increment and α.
    pub fn record(&mut self, n: usize, choice: &PhiChoice) -> TemperStage {
        let (r, prev) = match self.stages.last() {
            Some(s) if s.n == n => (s.r + 1, s.phi),
            _ => (1, 0.0),
        };
        let increment = choice.phi - prev;
        let stage = TemperStage {
            n,
            r,
            phi: choice.phi,
            increment,
            alpha: 1.0 / increment,
            ess: choice.ess,
            capped: choice.capped,
            nonmonotone: choice.nonmonotone,
        };
        self.stages.push(stage);
        stage
    }

    /// Stages for time `n`.
    pub fn for_time(&self, n: usize) -> impl Iterator<Item = &TemperStage> {
        self.stages.iter().filter(move |s| s.n == n)
    }

    /// `q_n` for `n = 1..=times`.
    pub fn counts(&self, times: usize) -> Vec<usize> {
        (1..=times).map(|n| self.for_time(n).count()).collect()
    }

    /// Sum of the increments at time `n`.
    pub fn increment_sum(&self, n: usize) -> f64 {
        self.for_time(n).map(|s| s.increment).sum()
    }
}

/// Relative cost `g_n / g_N` of a forward solve up to each observation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSchedule {
    pub ratios: Vec<f64>,
}

impl CostSchedule {
    /// Cost proportional to the number of time steps, `t_n / t_N`.
    pub fn from_times(times: &[f64]) -> Self {
        let last = times.last().copied().unwrap_or(1.0);
        Self {
            ratios: times.iter().map(|t| t / last).collect(),
        }
    }

    /// Cost from measured per-solve durations, normalized by the last.
    pub fn from_measured(costs: &[f64]) -> Self {
        Self::from_times(costs)
    }

    /// `Σ_n q_n g_n / g_N`.
    pub fn weighted_count(&self, counts: &[usize]) -> f64 {
        counts.iter().zip(&self.ratios).map(|(&q, g)| q as f64 * g).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn uniform_and_one_hot() {
        let w = incremental_weights(&[-3.0; 4], 0.0, 0.5).unwrap();
        assert!(w.normalized().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let w = incremental_weights(&[0.0, -1e9], 0.0, 1.0).unwrap();
        assert_eq!(w.normalized(), &[1.0, 0.0]);
        assert!(incremental_weights(&[], 0.0, 1.0).is_err());
        assert!(incremental_weights(&[0.0], 0.5, 0.5).is_err());
        assert!(incremental_weights(&[f64::NAN], 0.0, 0.5).is_err());
    }

    #[test]
    fn ess_examples() {
        assert!((WeightSet::uniform(100).unwrap().ess() - 100.0).abs() < 1e-10);
        let w = WeightSet::from_log_weights(vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
        assert_eq!(w.ess(), 1.0);
        let w = WeightSet::from_log_weights(vec![0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
        assert_eq!(w.ess(), 2.0);
        assert!(WeightSet::from_log_weights(vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn equal_logliks_give_one() {
        assert_eq!(next_phi(&[-4.0; 10], 0.0, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn two_particle_closed_form() {
        // Weights (1, a) with a = e^{-2δ}: (1+a)² = 1.6 (1+a²) gives a = 1/3.
        let phi = next_phi(&[0.0, -2.0], 0.0, 1.6).unwrap();
        assert!((phi - 3f64.ln() / 2.0).abs() < 1e-9, "phi = {phi}");
    }

    #[test]
    fn next_phi_validates_inputs() {
        assert!(next_phi(&[0.0, f64::NEG_INFINITY], 0.0, 1.5).is_err());
        assert!(next_phi(&[0.0, -1.0], 1.0, 1.5).is_err());
        assert!(next_phi(&[0.0, -1.0], 0.0, 3.0).is_err());
        assert!(next_phi(&[0.0, -1.0], 0.0, 0.5).is_err());
    }

    #[test]
    fn naive_cap_limits_phi_when_weights_underflow() {
        let loglik = [-2000.0, -2001.0, -2003.0];
        let c = select_phi(&loglik, None, 0.0, 1.5, PhiSafeguard::NaiveCap).unwrap();
        assert!(c.capped);
        assert!(c.phi < 0.4 && c.phi > 0.3, "phi {}", c.phi);
        let l = select_phi(&loglik, None, 0.0, 1.5, PhiSafeguard::LogSpace).unwrap();
        assert!(!l.capped);
        assert!(l.phi > c.phi);
    }

    #[test]
    fn resample_one_hot_and_determinism() {
        let w = WeightSet::from_log_weights(vec![f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0])
            .unwrap();
        assert!(multinomial_resample(&w, &mut stream(1, &[])).iter().all(|&i| i == 3));
        let w = WeightSet::from_log_weights(vec![0.0, -1.0, -0.5, -2.0]).unwrap();
        let a = multinomial_resample(&w, &mut stream(4, &[2]));
        let b = multinomial_resample(&w, &mut stream(4, &[2]));
        assert_eq!(a, b);
    }

    #[test]
    fn trace_bookkeeping() {
        let mut t = TemperTrace::new();
        for (n, phi) in [(1, 0.25), (1, 1.0), (2, 1.0)] {
            t.record(
                n,
                &PhiChoice {
                    phi,
                    ess: 1.0,
                    capped: false,
                    nonmonotone: false,
                },
            );
        }
        assert_eq!(t.counts(3), vec![2, 1, 0]);
        assert_eq!(t.stages()[1].r, 2);
        assert_eq!(t.stages()[1].increment, 0.75);
        assert_eq!(t.increment_sum(1), 1.0);
        assert_eq!(t.increment_sum(2), 1.0);
    }

    #[test]
    fn cost_schedule() {
        let c = CostSchedule::from_times(&[0.1, 0.2]);
        assert_eq!(c.ratios, vec![0.5, 1.0]);
        assert_eq!(c.weighted_count(&[1, 1]), 1.5);
    }
}
