//! Dimensionless 1D moving-boundary injection model.
//!
//! Resin enters at `x = 0` under constant inlet pressure and displaces air in
//! a porous strip `[0, x*]`. With log-permeability `u`, the resistance integral
//! `F_u(x) = ∫_0^x e^{-u}` determines everything: the front obeys
//! `dΥ/dt = 1/F_u(Υ)`, the pressure behind the front is
//! `p = 2 - F_u(x)/F_u(Υ)` and ahead of it `p = 1`.
//!
//! `F_u` is evaluated with a smoothed Heaviside `½ + ½ tanh(r z)` centred on
//! each cell, which makes the front equation smooth for the implicit solve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by grid construction and the forward solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("{what} = {value} lies outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("front solve failed at step {step}: {reason}")]
    Solver { step: usize, reason: &'static str },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

/// Uniform cell grid on `[0, length]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    num_cells: usize,
    length: f64,
}

impl Grid1D {
    pub fn new(num_cells: usize, length: f64) -> Result<Self, ForwardError> {
        if num_cells == 0 {
            return Err(ForwardError::InvalidGrid("need at least one cell".into()));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(ForwardError::InvalidGrid(format!(
                "domain length must be positive, got {length}"
            )));
        }
        Ok(Self { num_cells, length })
    }

    /// Grid on the unit interval. Panics if `num_cells == 0`.
    pub fn unit(num_cells: usize) -> Self {
        Self::new(num_cells, 1.0).expect("unit grid needs at least one cell")
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.num_cells as f64
    }

    /// Edge `i` for `i in 0..=S`; the last edge equals the length exactly.
    pub fn edge(&self, i: usize) -> f64 {
        self.length * i as f64 / self.num_cells as f64
    }

    pub fn center(&self, s: usize) -> f64 {
        (s as f64 + 0.5) * self.dx()
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.num_cells).map(|i| self.edge(i)).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.num_cells).map(|s| self.center(s)).collect()
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn cell_index(&self, x: f64) -> usize {
        let s = (x / self.dx()).floor();
        if s <= 0.0 {
            0
        } else {
            (s as usize).min(self.num_cells - 1)
        }
    }
}

/// How a field is moved between grids of the same domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transfer {
    /// Linear interpolation of source cell-centre values at target centres.
    #[default]
    CenterSample,
    /// Exact average of the piecewise-constant source over each target cell.
    CellAverage,
}

/// Piecewise-constant log-permeability on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogPermField {
    grid: Grid1D,
    values: Vec<f64>,
}

impl LogPermField {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self, ForwardError> {
        if values.len() != grid.num_cells() {
            return Err(ForwardError::InvalidField(format!(
                "{} values for {} cells",
                values.len(),
                grid.num_cells()
            )));
        }
        if let Some(s) = values.iter().position(|v| !v.is_finite()) {
            return Err(ForwardError::InvalidField(format!(
                "non-finite value {} in cell {s}",
                values[s]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid1D, c: f64) -> Result<Self, ForwardError> {
        Self::new(grid, vec![c; grid.num_cells()])
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.values[self.grid.cell_index(x)]
    }

    /// Moves the field onto `target`, which must cover the same domain.
    pub fn transfer(&self, target: Grid1D, method: Transfer) -> Result<Self, ForwardError> {
        if (target.length() - self.grid.length()).abs() > 1e-12 * self.grid.length() {
            return Err(ForwardError::InvalidGrid(format!(
                "cannot transfer from length {} to length {}",
                self.grid.length(),
                target.length()
            )));
        }
        let src = self.grid;
        let values = match method {
            Transfer::CenterSample => target
                .centers()
                .into_iter()
                .map(|x| {
                    let pos = x / src.dx() - 0.5;
                    if pos <= 0.0 {
                        return self.values[0];
                    }
                    let i = pos.floor() as usize;
                    if i + 1 >= src.num_cells() {
                        return self.values[src.num_cells() - 1];
                    }
                    let w = pos - i as f64;
                    (1.0 - w) * self.values[i] + w * self.values[i + 1]
                })
                .collect(),
            Transfer::CellAverage => (0..target.num_cells())
                .map(|s| {
                    let (a, b) = (target.edge(s), target.edge(s + 1));
                    let first = src.cell_index(a);
                    let last = src.cell_index(b - 1e-14 * src.length());
                    let mut acc = 0.0;
                    for i in first..=last {
                        let overlap = b.min(src.edge(i + 1)) - a.max(src.edge(i));
                        if overlap > 0.0 {
                            acc += overlap * self.values[i];
                        }
                    }
                    acc / (b - a)
                })
                .collect(),
        };
        Self::new(target, values)
    }
}

/// Physical constants of the dimensionless model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConstants {
    pub inlet_pressure: f64,
    pub ambient_pressure: f64,
    pub porosity: f64,
    /// Sharpness `r` of the smoothed Heaviside.
    pub sharpness: f64,
}

impl Default for ModelConstants {
    fn default() -> Self {
        Self {
            inlet_pressure: 2.0,
            ambient_pressure: 1.0,
            porosity: 1.0,
            sharpness: 300.0,
        }
    }
}

impl ModelConstants {
    pub fn validate(&self) -> Result<(), ForwardError> {
        let ok = self.ambient_pressure > 0.0
            && (self.inlet_pressure - 2.0 * self.ambient_pressure).abs()
                <= 1e-12 * self.inlet_pressure
            && self.porosity > 0.0
            && self.sharpness > 0.0
            && self.sharpness.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ForwardError::InvalidSettings(format!(
                "model constants {self:?} violate p_I = 2 p_0 > 0, porosity > 0, r > 0"
            )))
        }
    }

    /// Front speed numerator: `dΥ/dt = drive / F(Υ)`.
    fn drive(&self) -> f64 {
        (self.inlet_pressure - self.ambient_pressure) / (self.porosity * self.ambient_pressure)
    }

    fn pressure(&self, f_x: f64, f_front: f64) -> f64 {
        let drop = self.inlet_pressure - self.ambient_pressure;
        (self.inlet_pressure - drop * f_x / f_front).clamp(self.ambient_pressure, self.inlet_pressure)
    }
}

/// Arguments of `tanh` beyond this magnitude saturate in double precision,
/// so cells farther than `CUTOFF / r` contribute exactly 0 or their full weight.
const CUTOFF: f64 = 20.0;

/// Smoothed resistance integral `F_u` for one field.
///
/// Cells far behind `x` are summed through a prefix table and cells far ahead
/// are skipped, so one evaluation costs a handful of operations regardless of
/// the grid size.
#[derive(Debug, Clone)]
pub struct Resistance {
    dx: f64,
    two_r: f64,
    reach: f64,
    ratio: f64,
    weights: Vec<f64>,
    prefix: Vec<f64>,
}

impl Resistance {
    pub fn new(field: &LogPermField, sharpness: f64) -> Self {
        let dx = field.grid().dx();
        let weights: Vec<f64> = field.values().iter().map(|u| (-u).exp() * dx).collect();
        let mut prefix = Vec::with_capacity(weights.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for w in &weights {
            acc += w;
            prefix.push(acc);
        }
        Self {
            dx,
            two_r: 2.0 * sharpness,
            reach: CUTOFF / sharpness,
            ratio: (2.0 * sharpness * dx).exp(),
            weights,
            prefix,
        }
    }

    fn window(&self, x: f64) -> (usize, usize) {
        let n = self.weights.len() as f64;
        let lo = (((x - self.reach) / self.dx - 0.5).floor() + 1.0).clamp(0.0, n);
        let hi = ((x + self.reach) / self.dx - 0.5).ceil().clamp(lo, n);
        (lo as usize, hi as usize)
    }

    /// `F_u(x)` and `F_u'(x)`.
    pub fn value_and_slope(&self, x: f64) -> (f64, f64) {
        let (lo, hi) = self.window(x);
        let mut value = self.prefix[lo];
        let mut slope = 0.0;
        if lo < hi {
            // Logistic form: ½ + ½ tanh(rz) = 1 / (1 + e^{-2rz}).
            let mut e = (-self.two_r * (x - (lo as f64 + 0.5) * self.dx)).exp();
            for w in &self.weights[lo..hi] {
                let h = 1.0 / (1.0 + e);
                value += w * h;
                slope += w * self.two_r * h * (1.0 - h);
                e *= self.ratio;
            }
        }
        (value, slope)
    }

    pub fn value(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let mut value = self.prefix[lo];
        if lo < hi {
            let mut e = (-self.two_r * (x - (lo as f64 + 0.5) * self.dx)).exp();
            for w in &self.weights[lo..hi] {
                value += w / (1.0 + e);
                e *= self.ratio;
            }
        }
        value
    }

    /// Unsmoothed `∫_0^{x*} e^{-u}`.
    pub fn total(&self) -> f64 {
        self.prefix[self.weights.len()]
    }
}

fn check_in_domain(what: &'static str, x: f64, grid: Grid1D) -> Result<(), ForwardError> {
    if (0.0..=grid.length()).contains(&x) {
        Ok(())
    } else {
        Err(ForwardError::Domain {
            what,
            value: x,
            lo: 0.0,
            hi: grid.length(),
        })
    }
}

/// Smoothed `F_u(x) = Σ_s e^{-u_s} Ĥ(x - x_s) Δx`.
pub fn f_integral(field: &LogPermField, x: f64, sharpness: f64) -> Result<f64, ForwardError> {
    check_in_domain("x", x, field.grid())?;
    Ok(Resistance::new(field, sharpness).value(x))
}

/// Filling time `τ* = ∫_0^{x*} F_u` by the midpoint rule on cell centres.
pub fn filling_time(field: &LogPermField, constants: &ModelConstants) -> f64 {
    let res = Resistance::new(field, constants.sharpness);
    let grid = field.grid();
    let sum: f64 = (0..grid.num_cells()).map(|s| res.value(grid.center(s))).sum();
    sum * grid.dx() / constants.drive()
}

/// Pressure at `x` when the front sits at `front`.
pub fn pressure_at(
    field: &LogPermField,
    front: f64,
    x: f64,
    constants: &ModelConstants,
) -> Result<f64, ForwardError> {
    let grid = field.grid();
    if !(front > 0.0 && front <= grid.length()) {
        return Err(ForwardError::Domain {
            what: "front",
            value: front,
            lo: 0.0,
            hi: grid.length(),
        });
    }
    check_in_domain("x", x, grid)?;
    if x >= front {
        return Ok(constants.ambient_pressure);
    }
    let res = Resistance::new(field, constants.sharpness);
    Ok(constants.pressure(res.value(x), res.value(front)))
}

/// Discrete front path on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontTrajectory {
    time_step: f64,
    length: f64,
    values: Vec<f64>,
    filling_time: Option<f64>,
}

impl FrontTrajectory {
    pub fn time_step(&self) -> f64 {
        self.time_step
    }

    /// `Υ_k` for every computed step. Stops at the step that reaches `x*`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn filling_time(&self) -> Option<f64> {
        self.filling_time
    }

    /// Last time covered by the trajectory.
    pub fn end_time(&self) -> f64 {
        self.filling_time
            .unwrap_or((self.values.len() - 1) as f64 * self.time_step)
    }

    /// `Υ(t ∧ τ*)` by linear interpolation between steps.
    pub fn front_at(&self, t: f64) -> Result<f64, ForwardError> {
        if let Some(tau) = self.filling_time {
            if t >= tau {
                return Ok(self.length);
            }
        }
        let end = self.end_time();
        if !(t >= 0.0 && t <= end * (1.0 + 1e-12)) {
            return Err(ForwardError::Domain {
                what: "t",
                value: t,
                lo: 0.0,
                hi: end,
            });
        }
        let last = self.values.len() - 1;
        let k = ((t / self.time_step).floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return Ok(self.values[0]);
        }
        let t0 = k as f64 * self.time_step;
        let t1 = match self.filling_time {
            Some(tau) if k + 1 == last => tau,
            _ => t0 + self.time_step,
        };
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        Ok(self.values[k] + w * (self.values[k + 1] - self.values[k]))
    }
}

/// Time stepping and root-solve settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Temporal domain `[0, horizon]` split into `steps` equal steps.
    pub horizon: f64,
    pub steps: usize,
    /// Absolute tolerance on each front increment.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            horizon: 0.4,
            steps: 2000,
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

impl SolverSettings {
    pub fn time_step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<(), ForwardError> {
        if self.steps == 0
            || !(self.horizon > 0.0 && self.horizon.is_finite())
            || !(self.tolerance > 0.0)
            || self.max_iterations == 0
        {
            return Err(ForwardError::InvalidSettings(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Newton steps shorter than this are accepted without another residual
/// evaluation: the residual curvature ratio stays below ~10 for the smoothed
/// integral, so the remaining error is at most ~10·step² ≤ tolerance.
fn accept_step(settings: &SolverSettings) -> f64 {
    (0.1 * settings.tolerance).sqrt()
}

/// Solves `δ F(y0 + δ) = target` for the increment `δ > 0`.
///
/// Safeguarded Newton: the residual is strictly increasing in `δ`, so every
/// iterate tightens a bracket and falls back to bisection (or doubling while
/// no upper bound is known) whenever the Newton step leaves it.
fn solve_increment(
    res: &Resistance,
    y0: f64,
    target: f64,
    guess: f64,
    settings: &SolverSettings,
    limit: f64,
    step: usize,
) -> Result<f64, ForwardError> {
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut d = guess;
    let quick = accept_step(settings);
    for _ in 0..settings.max_iterations {
        let (f, slope) = res.value_and_slope(y0 + d);
        let g = d * f - target;
        if g == 0.0 {
            return Ok(d);
        }
        if g > 0.0 {
            hi = d;
        } else {
            lo = d;
        }
        let mut next = d - g / (f + d * slope);
        if !(next > lo && next < hi) {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * d };
        } else if (next - d).abs() <= quick {
            return Ok(next);
        }
        if (next - d).abs() <= settings.tolerance || hi - lo <= settings.tolerance {
            return Ok(next);
        }
        if next > limit {
            return Err(ForwardError::Solver {
                step,
                reason: "no bracketing interval for the front increment",
            });
        }
        d = next;
    }
    Err(ForwardError::Solver {
        step,
        reason: "iteration limit reached",
    })
}

fn march(
    field: &LogPermField,
    res: &Resistance,
    constants: &ModelConstants,
    settings: &SolverSettings,
    dt: f64,
    steps: usize,
) -> Result<FrontTrajectory, ForwardError> {
    let length = field.grid().length();
    let target = dt * constants.drive();
    let limit = 1e6 * (length + target);
    let mut values = Vec::with_capacity(steps + 1);
    values.push(0.0);
    let mut y = 0.0;
    // Near the inlet F(δ) ≈ e^{-u_1} δ, so δ² e^{-u_1} ≈ target.
    let mut guess = (target * field.values()[0].exp()).sqrt();
    let mut previous = None;
    let mut filling_time = None;
    for k in 0..steps {
        let d = solve_increment(res, y, target, guess, settings, limit, k)?;
        if y + d >= length {
            filling_time = Some(k as f64 * dt + dt * (length - y) / d);
            values.push(length);
            break;
        }
        y += d;
        values.push(y);
        // Increments vary slowly; linear extrapolation is usually within the
        // quick-accept radius of the next root.
        guess = match previous {
            Some(p) if 2.0 * d > p => 2.0 * d - p,
            _ => d,
        };
        previous = Some(d);
    }
    Ok(FrontTrajectory {
        time_step: dt,
        length,
        values,
        filling_time,
    })
}

/// Backward-Euler front path over `[0, t_final]` in `steps` steps.
pub fn advance_front(
    field: &LogPermField,
    t_final: f64,
    steps: usize,
    constants: &ModelConstants,
    tolerance: f64,
) -> Result<FrontTrajectory, ForwardError> {
    if !(t_final > 0.0 && t_final.is_finite()) || steps == 0 {
        return Err(ForwardError::InvalidSettings(format!(
            "need t_final > 0 and steps >= 1, got {t_final} and {steps}"
        )));
    }
    let settings = SolverSettings {
        horizon: t_final,
        steps,
        tolerance,
        ..SolverSettings::default()
    };
    let res = Resistance::new(field, constants.sharpness);
    march(field, &res, constants, &settings, t_final / steps as f64, steps)
}

/// Predicted observables at one observation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    /// `Υ(t ∧ τ*)`.
    pub front: f64,
    /// `p(x_m, t ∧ τ*)` at each sensor.
    pub pressures: Vec<f64>,
}

/// Anything that maps a field to predicted observables at a set of times.
pub trait ForwardModel: Sync {
    /// Outputs at each of `times`, which must be increasing and positive.
    fn predict(
        &self,
        field: &LogPermField,
        times: &[f64],
        sensors: &[f64],
    ) -> Result<Vec<ForwardOutput>, ForwardError>;
}

/// The semi-analytic solver for the 1D model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrontSolver {
    pub constants: ModelConstants,
    pub settings: SolverSettings,
}

impl FrontSolver {
    pub fn new(constants: ModelConstants, settings: SolverSettings) -> Result<Self, ForwardError> {
        constants.validate()?;
        settings.validate()?;
        Ok(Self {
            constants,
            settings,
        })
    }

    /// Front path up to `t_final` with the configured time step.
    pub fn trajectory(&self, field: &LogPermField, t_final: f64) -> Result<FrontTrajectory, ForwardError> {
        let res = Resistance::new(field, self.constants.sharpness);
        self.trajectory_with(field, &res, t_final)
    }

    fn trajectory_with(
        &self,
        field: &LogPermField,
        res: &Resistance,
        t_final: f64,
    ) -> Result<FrontTrajectory, ForwardError> {
        let dt = self.settings.time_step();
        let steps = ((t_final / dt) - 1e-9).ceil().max(1.0) as usize;
        march(field, res, &self.constants, &self.settings, dt, steps)
    }
}

impl ForwardModel for FrontSolver {
    fn predict(
        &self,
        field: &LogPermField,
        times: &[f64],
        sensors: &[f64],
    ) -> Result<Vec<ForwardOutput>, ForwardError> {
        let Some(&t_last) = times.last() else {
            return Ok(Vec::new());
        };
        let grid = field.grid();
        for &x in sensors {
            check_in_domain("sensor", x, grid)?;
        }
        if !(times[0] > 0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ForwardError::InvalidSettings(
                "observation times must be positive and increasing".into(),
            ));
        }
        let res = Resistance::new(field, self.constants.sharpness);
        let path = self.trajectory_with(field, &res, t_last)?;
        times
            .iter()
            .map(|&t| {
                let front = path.front_at(t)?;
                let f_front = res.value(front);
                let pressures = sensors
                    .iter()
                    .map(|&x| {
                        if x >= front {
                            self.constants.ambient_pressure
                        } else {
                            self.constants.pressure(res.value(x), f_front)
                        }
                    })
                    .collect();
                Ok(ForwardOutput { front, pressures })
            })
            .collect()
    }
}

/// `G_n(u)` at a single time.
pub fn forward_map(
    field: &LogPermField,
    t: f64,
    sensors: &[f64],
    solver: &FrontSolver,
) -> Result<ForwardOutput, ForwardError> {
    let mut out = solver.predict(field, &[t], sensors)?;
    Ok(out.remove(0))
}

/// Explicit continuity constants for a pair of fields.
///
/// With `M = e^{max(‖u‖,‖v‖)}`, `A_u = (x*/t₁) e^{2‖u‖}` bounds the front
/// speed after `t₁`, `C` is the Gronwall constant for the front difference,
/// and `B` combines the three per-quantity constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConstants {
    pub a_u: f64,
    pub m_uv: f64,
    pub c_uv: f64,
    /// Pressure-difference constant `(x*/t₁) M³ (2x* + C)`.
    pub pressure_uv: f64,
    /// Filling-time constant `½ (x*)² M`.
    pub filling_uv: f64,
    pub t1: f64,
    pub length: f64,
}

impl LipschitzConstants {
    /// `sup_u` belongs to the field with the later filling time.
    pub fn new(sup_u: f64, sup_v: f64, t1: f64, length: f64) -> Self {
        let m = sup_u.max(sup_v).exp();
        let m6 = m.powi(6);
        let c = (length.powi(4) / (t1 * t1) * m6).exp() * length.powi(5) / (t1 * t1) * m6;
        Self {
            a_u: length / t1 * (2.0 * sup_u).exp(),
            m_uv: m,
            c_uv: c,
            pressure_uv: length / t1 * m.powi(3) * (2.0 * length + c),
            filling_uv: 0.5 * length * length * m,
            t1,
            length,
        }
    }

    /// The combined constant taken as the minimum of the three.
    pub fn b_uv(&self) -> f64 {
        self.c_uv.min(self.pressure_uv).min(self.filling_uv)
    }

    /// The combined constant taken as the maximum of the three.
    pub fn b_uv_conservative(&self) -> f64 {
        self.c_uv.max(self.pressure_uv).max(self.filling_uv)
    }

    /// Bound on `|Υᵘ(t∧τᵘ) − Υᵛ(t∧τᵛ)| / ‖u − v‖` for `t ≥ t₁`.
    pub fn front_factor(&self, b: f64) -> f64 {
        b * (1.0 + self.a_u)
    }

    /// Bound on sensor pressure differences per unit `‖u − v‖` for `t ≥ t₁`.
    pub fn pressure_factor(&self, b: f64) -> f64 {
        b + 4.0 * self.length / self.t1 * self.m_uv.powi(3) * (self.length + self.a_u * b)
    }

    /// Bound on `|τᵘ − τᵛ| / ‖u − v‖`.
    pub fn filling_factor(&self, b: f64) -> f64 {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_field(s: usize, c: f64) -> LogPermField {
        LogPermField::constant(Grid1D::unit(s), c).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = Grid1D::new(4, 2.0).unwrap();
        assert_eq!(g.edges(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.centers(), vec![0.25, 0.75, 1.25, 1.75]);
        assert_eq!(g.cell_index(-1.0), 0);
        assert_eq!(g.cell_index(0.6), 1);
        assert_eq!(g.cell_index(2.0), 3);
        assert!(Grid1D::new(0, 1.0).is_err());
        assert!(Grid1D::new(3, 0.0).is_err());
    }

    #[test]
    fn field_rejects_bad_values() {
        let g = Grid1D::unit(3);
        assert!(LogPermField::new(g, vec![0.0; 2]).is_err());
        assert!(LogPermField::new(g, vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(LogPermField::new(g, vec![0.0, f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn f_integral_constant_fields() {
        let f = f_integral(&unit_field(60, 0.0), 0.5, 300.0).unwrap();
        assert!((f - 0.5).abs() < 2e-3);
        let f = f_integral(&unit_field(60, 2f64.ln()), 1.0, 300.0).unwrap();
        assert!((f - 0.5).abs() < 2e-3);
        assert!(f_integral(&unit_field(60, 0.0), 1.5, 300.0).is_err());
    }

    #[test]
    fn window_matches_full_sum() {
        let g = Grid1D::unit(60);
        let values: Vec<f64> = g.centers().iter().map(|x| (7.0 * x).sin()).collect();
        let field = LogPermField::new(g, values.clone()).unwrap();
        let res = Resistance::new(&field, 300.0);
        for i in 0..=200 {
            let x = i as f64 / 200.0;
            let full: f64 = g
                .centers()
                .iter()
                .zip(&values)
                .map(|(xs, u)| (-u).exp() * (0.5 + 0.5 * (300.0 * (x - xs)).tanh()) * g.dx())
                .sum();
            assert!((res.value(x) - full).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn filling_time_constant_fields() {
        let c = ModelConstants::default();
        assert!((filling_time(&unit_field(60, 0.0), &c) - 0.5).abs() < 5e-3);
        assert!((filling_time(&unit_field(60, 2f64.ln()), &c) - 0.25).abs() < 5e-3);
    }

    #[test]
    fn front_examples() {
        let c = ModelConstants::default();
        let path = advance_front(&unit_field(60, 0.0), 0.02, 100, &c, 1e-10).unwrap();
        assert!((path.front_at(0.02).unwrap() - 0.2).abs() < 5e-3);
        let path = advance_front(&unit_field(60, 2f64.ln()), 0.01, 50, &c, 1e-10).unwrap();
        assert!((path.front_at(0.01).unwrap() - 0.2).abs() < 5e-3);
    }

    #[test]
    fn trajectory_reaches_end_and_stops() {
        let c = ModelConstants::default();
        let path = advance_front(&unit_field(60, 2f64.ln()), 0.4, 2000, &c, 1e-10).unwrap();
        let tau = path.filling_time().expect("fills before 0.4");
        assert!((tau - 0.25).abs() < 0.25 * 0.01);
        assert_eq!(path.front_at(tau).unwrap(), 1.0);
        assert_eq!(path.front_at(0.39).unwrap(), 1.0);
        assert_eq!(*path.values().last().unwrap(), 1.0);
        assert_eq!(path.values()[0], 0.0);
        assert!(path.values().windows(2).all(|w| w[1] >= w[0]));
        let just_before = path.front_at(tau * (1.0 - 1e-12)).unwrap();
        assert!((just_before - 1.0).abs() < 1e-9);
    }

    #[test]
    fn front_beyond_computed_range_is_an_error() {
        let c = ModelConstants::default();
        let path = advance_front(&unit_field(60, 0.0), 0.1, 100, &c, 1e-10).unwrap();
        assert!(path.front_at(0.2).is_err());
        assert!(advance_front(&unit_field(60, 0.0), 0.0, 10, &c, 1e-10).is_err());
        assert!(advance_front(&unit_field(60, 0.0), 0.1, 0, &c, 1e-10).is_err());
    }

    #[test]
    fn pressure_examples() {
        let c = ModelConstants::default();
        let u = unit_field(60, 0.0);
        assert!((pressure_at(&u, 0.2, 0.1, &c).unwrap() - 1.5).abs() < 1e-2);
        assert_eq!(pressure_at(&u, 0.2, 0.2, &c).unwrap(), 1.0);
        assert_eq!(pressure_at(&u, 0.2, 0.7, &c).unwrap(), 1.0);
        assert!((pressure_at(&u, 0.2, 0.0, &c).unwrap() - 2.0).abs() < 1e-2);
        assert!(pressure_at(&u, 0.0, 0.1, &c).is_err());
        assert!(pressure_at(&u, -0.1, 0.1, &c).is_err());
    }

    #[test]
    fn forward_map_examples() {
        let solver = FrontSolver::default();
        let u = unit_field(60, 0.0);
        let out = forward_map(&u, 0.6, &[0.25, 0.5, 0.75], &solver).unwrap();
        assert_eq!(out.front, 1.0);
        for (p, x) in out.pressures.iter().zip([0.25, 0.5, 0.75]) {
            assert!((p - (2.0 - x)).abs() < 1e-2);
        }
        let out = forward_map(&u, 0.02, &[0.3], &solver).unwrap();
        assert!((out.front - 0.2).abs() < 5e-3);
        assert_eq!(out.pressures, vec![1.0]);
        assert!(forward_map(&u, 0.1, &[1.2], &solver).is_err());
    }

    #[test]
    fn transfer_between_grids() {
        let fine = Grid1D::unit(8);
        let coarse = Grid1D::unit(4);
        let f = LogPermField::new(fine, (0..8).map(|i| i as f64).collect()).unwrap();
        let a = f.transfer(coarse, Transfer::CenterSample).unwrap();
        let b = f.transfer(coarse, Transfer::CellAverage).unwrap();
        assert_eq!(a.values(), &[0.5, 2.5, 4.5, 6.5]);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(f.transfer(Grid1D::new(4, 2.0).unwrap(), Transfer::CenterSample).is_err());
    }

    #[test]
    fn lipschitz_constants_shape() {
        let k = LipschitzConstants::new(0.5, 0.3, 0.072, 1.0);
        assert!((k.m_uv - 0.5f64.exp()).abs() < 1e-15);
        assert!((k.a_u - 1.0f64.exp() / 0.072).abs() < 1e-12);
        assert!(k.c_uv.is_infinite());
        assert_eq!(k.b_uv(), k.filling_uv);
        assert!(k.b_uv_conservative().is_infinite());
    }
}
