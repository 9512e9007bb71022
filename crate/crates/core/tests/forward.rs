mod common;

use common::{bounded_field, max_abs_diff, prior_field, solver, with_values};
use proptest::prelude::*;
use rtm_core::forward::{
    advance_front, f_integral, filling_time, pressure_at, ForwardModel, Grid1D, LogPermField, ModelConstants,
};

/// `∫_0^x e^{-u}` for the piecewise-constant field, with no smoothing.
fn exact_integral(field: &LogPermField, x: f64) -> f64 {
    let grid = field.grid();
    let mut sum = 0.0;
    for (s, u) in field.values().iter().enumerate() {
        let (a, b) = (grid.edge(s), grid.edge(s + 1));
        if a >= x {
            break;
        }
        sum += (b.min(x) - a) * (-u).exp();
    }
    sum
}

/// `∫_0^{x*} ∫_0^x e^{-u}` for the piecewise-constant field.
fn exact_double_integral(field: &LogPermField) -> f64 {
    let grid = field.grid();
    let dx = grid.dx();
    let mut prefix = 0.0;
    let mut sum = 0.0;
    for u in field.values() {
        let w = (-u).exp();
        sum += prefix * dx + w * dx * dx / 2.0;
        prefix += w * dx;
    }
    sum
}

#[test]
fn resistance_matches_exact_integral_at_edges_and_centres() {
    let r = ModelConstants::default().sharpness;
    for seed in 0..8 {
        let field = prior_field(seed);
        let grid = field.grid();
        let nodes = grid.edges().into_iter().chain(grid.centers());
        for x in nodes {
            let got = f_integral(&field, x, r).unwrap();
            let want = exact_integral(&field, x);
            assert!((got - want).abs() <= 5e-3, "seed {seed} x {x}: {got} vs {want}");
        }
    }
}

#[test]
fn resistance_between_nodes_stays_within_half_a_cell() {
    let r = ModelConstants::default().sharpness;
    let field = prior_field(3);
    let dx = field.grid().dx();
    let w_max = field.values().iter().map(|u| (-u).exp()).fold(0.0, f64::max);
    for i in 0..=6000 {
        let x = i as f64 / 6000.0;
        let err = (f_integral(&field, x, r).unwrap() - exact_integral(&field, x)).abs();
        assert!(err <= 0.5 * dx * w_max + 1e-12, "x {x}: {err}");
    }
}

#[test]
fn filling_time_matches_nested_cell_integral() {
    let c = ModelConstants::default();
    let drive = (c.inlet_pressure - c.ambient_pressure) / (c.porosity * c.ambient_pressure);
    for seed in 0..8 {
        let field = prior_field(seed);
        let want = exact_double_integral(&field) / drive;
        let got = filling_time(&field, &c);
        assert!(((got - want) / want).abs() <= 1e-2, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn front_error_decays_at_first_order_in_the_time_step() {
    let c = ModelConstants::default();
    let field = prior_field(11);
    let t = 0.2;
    let front = |steps: usize| advance_front(&field, t, steps, &c, 1e-12).unwrap().front_at(t).unwrap();
    let reference = front(256_000);
    let errors: Vec<f64> = [1000, 2000, 4000, 8000].iter().map(|&k| (front(k) - reference).abs()).collect();
    for pair in errors.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        assert!((0.8..=1.4).contains(&order), "observed order {order} from {errors:?}");
    }
}

#[test]
fn pressure_takes_inlet_and_ambient_values_at_the_ends() {
    let c = ModelConstants::default();
    let solver = solver();
    for seed in 0..6 {
        let field = prior_field(seed);
        let path = solver.trajectory(&field, 0.4).unwrap();
        for t in [0.02, 0.05, 0.1, 0.2, 0.3, 0.4] {
            let front = path.front_at(t).unwrap();
            let p0 = pressure_at(&field, front, 0.0, &c).unwrap();
            let p_front = pressure_at(&field, front, front * (1.0 - 1e-12), &c).unwrap();
            assert!((p0 - c.inlet_pressure).abs() <= 1e-2, "seed {seed} t {t}: p(0) = {p0}");
            assert!((p_front - c.ambient_pressure).abs() <= 1e-2, "seed {seed} t {t}: p(front) = {p_front}");
            assert_eq!(pressure_at(&field, front, front, &c).unwrap(), c.ambient_pressure);
        }
    }
}

#[test]
fn sensor_outputs_at_the_front_are_ambient_before_it_arrives() {
    let field = LogPermField::constant(Grid1D::unit(60), 0.0).unwrap();
    let out = solver().predict(&field, &[0.02], &[0.3]).unwrap();
    assert!((out[0].front - 0.2).abs() < 2e-3);
    assert_eq!(out[0].pressures, vec![1.0]);
}

fn cells_beyond(field: &LogPermField, x: f64) -> Vec<usize> {
    let grid = field.grid();
    (0..grid.num_cells()).filter(|&s| grid.center(s) > x).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn front_increases_and_pressure_decreases(seed in 0u64..1_000_000) {
        let c = ModelConstants::default();
        let field = prior_field(seed);
        let path = solver().trajectory(&field, 0.4).unwrap();
        let fronts = path.values();
        for w in fronts.windows(2) {
            prop_assert!(w[1] > w[0] || w[1] == field.grid().length(), "front stalled: {:?}", w);
        }
        for t in [0.01, 0.05, 0.1, 0.2, 0.3, 0.4] {
            let front = path.front_at(t).unwrap();
            let mut last = f64::INFINITY;
            for i in 0..=200 {
                let p = pressure_at(&field, front, front * i as f64 / 200.0, &c).unwrap();
                prop_assert!(p <= last + 1e-12 && (c.ambient_pressure..=c.inlet_pressure).contains(&p));
                last = p;
            }
        }
    }

    #[test]
    fn outputs_ignore_the_field_ahead_of_the_front(seed in 0u64..1_000_000, shift in -2.0f64..2.0) {
        let solver = solver();
        let field = prior_field(seed);
        let times = [0.05, 0.1, 0.15];
        let sensors: Vec<f64> = (1..=9).map(|m| m as f64 / 10.0).collect();
        let base = solver.predict(&field, &times, &sensors).unwrap();
        let last = base.last().unwrap().front;
        let r = solver.constants.sharpness;
        let mut values = field.values().to_vec();
        for s in cells_beyond(&field, last + 3.0 / r) {
            values[s] += shift;
        }
        let moved = solver.predict(&with_values(&field, values), &times, &sensors).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a.front - b.front).abs() <= 1e-3);
            prop_assert!(max_abs_diff(&a.pressures, &b.pressures) <= 1e-3);
        }
    }

    #[test]
    fn continuity_bounds_hold_for_bounded_pairs(seed in 0u64..1_000_000, sup in 0.05f64..0.5, gap in 0.001f64..0.5) {
        let u = bounded_field(seed, sup);
        let w = bounded_field(seed ^ 0xabcdef, 1.0);
        let values = u.values().iter().zip(w.values()).map(|(a, b)| (a + gap * b).clamp(-0.5, 0.5)).collect();
        let v = with_values(&u, values);
        let times = [common::LIPSCHITZ_T1, 0.1, 0.2, 0.3, 0.4];
        let sensors: Vec<f64> = (1..=9).map(|m| m as f64 / 10.0).collect();
        let worst = common::lipschitz_worst_ratio(&u, &v, &times, &sensors);
        prop_assert!(worst <= 1.0, "difference exceeds its bound by a factor {}", worst);
    }
}
