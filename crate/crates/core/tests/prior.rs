mod common;

use common::prior60;
use proptest::prelude::*;
use rtm_core::forward::Grid1D;
use rtm_core::prior::{build_covariance, matern_covariance, GaussianPrior, MaternParams};

#[test]
fn matern_matches_closed_forms_for_half_integer_smoothness() {
    for &(nu, l) in &[(0.5, 0.05), (1.5, 0.05), (2.5, 0.2), (1.5, 1.0)] {
        let p = MaternParams {
            variance: 0.7,
            smoothness: nu,
            length_scale: l,
        };
        for i in 0..=200 {
            let d = i as f64 * 0.005;
            let z = d / l;
            let want = 0.7
                * (-z).exp()
                * match nu {
                    0.5 => 1.0,
                    1.5 => 1.0 + z,
                    _ => 1.0 + z + z * z / 3.0,
                };
            let got = matern_covariance(d, &p);
            assert!((got - want).abs() <= 1e-10, "ν {nu} l {l} d {d}: {got} vs {want}");
        }
    }
}

#[test]
fn clipped_eigenvalues_are_nonnegative_and_sorted() {
    for s in [30, 60, 120] {
        let prior = GaussianPrior::new(Grid1D::unit(s), MaternParams::default()).unwrap();
        let eig = prior.basis().eigenvalues();
        assert!(eig.iter().all(|&l| l >= 0.0));
        assert!(eig.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn basis_reproduces_the_covariance_and_is_orthonormal() {
    let prior = prior60();
    let basis = prior.basis();
    let cov = build_covariance(prior.grid(), prior.params()).unwrap();
    let back = basis.reconstruct();
    assert!((&back - &cov).amax() <= 1e-10 * cov.amax());
    for a in 0..basis.dim() {
        for b in 0..basis.dim() {
            let ip = basis.inner(&basis.mode(a), &basis.mode(b));
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((ip - want).abs() <= 1e-9, "modes {a}, {b}: {ip}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coefficients_survive_a_round_trip(coeffs in proptest::collection::vec(-4.0f64..4.0, 60)) {
        let prior = prior60();
        let field = prior.field(&coeffs.clone().into()).unwrap();
        let back = prior.coeffs(&field).unwrap();
        for (k, (a, b)) in coeffs.iter().zip(back.iter()).enumerate() {
            let kept = prior.basis().eigenvalues()[k] > 0.0;
            let want = if kept { *a } else { 0.0 };
            prop_assert!((b - want).abs() <= 1e-6, "mode {}: {} vs {}", k, b, want);
        }
    }

    #[test]
    fn matern_is_positive_decreasing_and_bounded(l in 0.01f64..1.0, nu in 0.3f64..3.0, d in 0.0f64..1.0) {
        let p = MaternParams { variance: 0.5, smoothness: nu, length_scale: l };
        let c = matern_covariance(d, &p);
        let c2 = matern_covariance(d + 0.01, &p);
        prop_assert!((0.0..=0.5).contains(&c));
        prop_assert!(c2 <= c + 1e-15);
    }
}
