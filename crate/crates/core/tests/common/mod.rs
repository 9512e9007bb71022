//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use rtm_core::forward::{FrontSolver, Grid1D, LogPermField, ModelConstants, SolverSettings};
use rtm_core::prior::{GaussianPrior, MaternParams};
use rtm_core::rng::stream;

/// Default prior on the 60-cell inversion grid, built once per test binary.
pub fn prior60() -> &'static GaussianPrior {
    static PRIOR: OnceLock<GaussianPrior> = OnceLock::new();
    PRIOR.get_or_init(|| GaussianPrior::new(Grid1D::unit(60), MaternParams::default()).expect("prior"))
}

pub fn solver() -> FrontSolver {
    FrontSolver::new(ModelConstants::default(), SolverSettings::default()).expect("solver")
}

/// A prior draw on the 60-cell grid.
pub fn prior_field(seed: u64) -> LogPermField {
    prior60().sample(&mut stream(seed, &[0xf1e1d])).expect("sample").1
}

/// A prior draw rescaled so that `‖u‖_∞ = sup`.
pub fn bounded_field(seed: u64, sup: f64) -> LogPermField {
    let f = prior_field(seed);
    let scale = sup / f.sup_norm();
    let values = f.values().iter().map(|v| v * scale).collect();
    LogPermField::new(f.grid(), values).expect("field")
}

pub fn with_values(field: &LogPermField, values: Vec<f64>) -> LogPermField {
    LogPermField::new(field.grid(), values).expect("field")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Earliest time at which the continuity bounds are checked.
pub const LIPSCHITZ_T1: f64 = 0.072;

/// Worst observed difference divided by its bound over fronts, sensor
/// pressures and filling times for one pair; values above 1 are violations.
pub fn lipschitz_worst_ratio(a: &LogPermField, b: &LogPermField, times: &[f64], sensors: &[f64]) -> f64 {
    use rtm_core::forward::{filling_time, ForwardModel, LipschitzConstants};
    let solver = solver();
    let c = solver.constants;
    let (tau_a, tau_b) = (filling_time(a, &c), filling_time(b, &c));
    // The constants are stated for `u` with the later filling time.
    let (u, v, tau_u, tau_v) = if tau_a >= tau_b { (a, b, tau_a, tau_b) } else { (b, a, tau_b, tau_a) };
    let d = max_abs_diff(u.values(), v.values());
    if d == 0.0 {
        return 0.0;
    }
    let lc = LipschitzConstants::new(u.sup_norm(), v.sup_norm(), LIPSCHITZ_T1, u.grid().length());
    let bound = lc.b_uv();
    let out_u = solver.predict(u, times, sensors).expect("solve u");
    let out_v = solver.predict(v, times, sensors).expect("solve v");
    let mut worst = (tau_u - tau_v).abs() / (lc.filling_factor(bound) * d);
    for (ou, ov) in out_u.iter().zip(&out_v) {
        worst = worst.max((ou.front - ov.front).abs() / (lc.front_factor(bound) * d));
        worst = worst.max(max_abs_diff(&ou.pressures, &ov.pressures) / (lc.pressure_factor(bound) * d));
    }
    worst
}
