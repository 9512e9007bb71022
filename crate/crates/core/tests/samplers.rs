mod common;

use std::sync::OnceLock;

use common::prior60;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rtm_core::diagnostics::{summarize_snapshot, variance_ratio};
use rtm_core::experiment::{simulate, with_workers, Dataset, RunConfig};
use rtm_core::renka::{empirical_covariances, kalman_update, run_renka, PerturbationStreams, RenkaConfig};
use rtm_core::smc::{pcn_mutate, pcn_propose, run_smc, SmcConfig, TemperedTarget};
use rtm_core::tempering::TemperTrace;

fn data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| simulate(&RunConfig::default()).expect("simulate"))
}

fn sensors() -> Vec<f64> {
    RunConfig::default().measurement.sensors
}

fn smc_config(seed: u64) -> SmcConfig {
    SmcConfig {
        ensemble_size: 80,
        mcmc_steps: 4,
        tune_step: true,
        seed,
        ..SmcConfig::default()
    }
}

fn renka_config(seed: u64) -> RenkaConfig {
    RenkaConfig {
        ensemble_size: 200,
        seed,
        ..RenkaConfig::default()
    }
}

fn assert_increments_sum_to_one(trace: &TemperTrace, times: usize) {
    for n in 1..=times {
        assert_eq!(trace.increment_sum(n), 1.0, "time {n}");
        let inverse: f64 = trace.for_time(n).map(|s| 1.0 / s.alpha).sum();
        assert!((inverse - 1.0).abs() <= 1e-12, "time {n}: Σ 1/α = {inverse}");
    }
}

#[test]
fn smc_is_independent_of_worker_count() {
    let records = &data().records[..2];
    let run = |w| with_workers(Some(w), || run_smc(&smc_config(4), prior60(), &common::solver(), &sensors(), records)).unwrap().unwrap();
    let (one, three) = (run(1), run(3));
    assert_eq!(one, three);
    assert_increments_sum_to_one(&one.trace, records.len());
}

#[test]
fn renka_is_independent_of_worker_count() {
    let records = &data().records;
    let run = |w| with_workers(Some(w), || run_renka(&renka_config(9), prior60(), &common::solver(), &sensors(), records)).unwrap().unwrap();
    let (one, three) = (run(1), run(3));
    assert_eq!(one, three);
    assert_increments_sum_to_one(&one.trace, records.len());
}

#[test]
fn posterior_spread_is_below_the_prior_spread() {
    let grid = prior60().grid();
    let renka = run_renka(&renka_config(1), prior60(), &common::solver(), &sensors(), &data().records).unwrap();
    let smc = run_smc(&smc_config(1), prior60(), &common::solver(), &sensors(), &data().records[..2]).unwrap();
    for (prior, posteriors) in [(&renka.prior, &renka.posteriors), (&smc.prior, &smc.posteriors)] {
        let base = summarize_snapshot(prior).unwrap();
        for post in posteriors {
            let ratio = variance_ratio(&summarize_snapshot(post).unwrap().variance, &base.variance, grid).unwrap();
            assert!(ratio < 1.0, "time {}: variance ratio {ratio}", post.n);
        }
    }
}

#[test]
fn pcn_leaves_the_prior_invariant_without_data() {
    let prior = prior60();
    let solver = common::solver();
    let sensors = sensors();
    let target = TemperedTarget {
        prior,
        model: &solver,
        sensors: &sensors,
        records: &[],
        phi: 1.0,
        restriction: Default::default(),
    };
    let j = 400;
    let mut particles: Vec<_> = (0..j)
        .map(|i| target.particle(prior.sample_coeffs(&mut ChaCha8Rng::seed_from_u64(i))).unwrap())
        .collect();
    let report = pcn_mutate(&mut particles, &target, 200, 0.3, None, 5, (1, 1)).unwrap();
    assert_eq!(report.acceptance, 1.0);
    for k in [0, 1, 5, 20] {
        let xs: Vec<f64> = particles.iter().map(|p| p.coeffs[k]).collect();
        let mean = xs.iter().sum::<f64>() / j as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (j - 1) as f64;
        assert!(mean.abs() <= 4.0 / (j as f64).sqrt(), "mode {k}: mean {mean}");
        assert!((var - 1.0).abs() <= 4.0 * (2.0 / j as f64).sqrt(), "mode {k}: variance {var}");
    }
}

#[test]
fn pcn_proposal_is_a_stationary_ar1_chain() {
    let beta = 0.4;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let steps = 200_000;
    let mut x = vec![rng.sample::<f64, _>(StandardNormal)];
    let mut chain = Vec::with_capacity(steps);
    for _ in 0..steps {
        x = pcn_propose(&x, beta, &mut rng).0;
        chain.push(x[0]);
    }
    let n = steps as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let var = chain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let lag1 = chain.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0) / var;
    let rho = (1.0 - beta * beta).sqrt();
    // Effective sample size of an AR(1) chain is n(1−ρ)/(1+ρ).
    let ess = n * (1.0 - rho) / (1.0 + rho);
    assert!(mean.abs() <= 4.0 / ess.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() <= 4.0 * (2.0 / ess).sqrt(), "variance {var}");
    assert!((lag1 - rho).abs() <= 0.01, "lag-1 autocorrelation {lag1} vs {rho}");
}

fn gaussian_ensemble(j: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..j).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

#[test]
fn kalman_update_commutes_with_translation() {
    let states = gaussian_ensemble(300, 6, 1);
    let outputs: Vec<Vec<f64>> = states.iter().map(|s| vec![s[0] + s[1], s[2] * s[2], s[3] - 0.5 * s[5]]).collect();
    let data = [0.4, 1.2, -0.3];
    let variances = [0.1, 0.2, 0.05];
    let noise = PerturbationStreams { seed: 3, path: vec![1, 2] };
    let shift = [5.0, -2.0, 0.25, 10.0, -7.5, 1.0];
    let mut plain = states.clone();
    let mut moved: Vec<Vec<f64>> = states.iter().map(|s| s.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
    kalman_update(&mut plain, &outputs, &data, &variances, 2.5, &noise).unwrap();
    kalman_update(&mut moved, &outputs, &data, &variances, 2.5, &noise).unwrap();
    for (a, b) in plain.iter().zip(&moved) {
        for ((x, y), s) in a.iter().zip(b).zip(&shift) {
            assert!((y - x - s).abs() <= 1e-9);
        }
    }
}

#[test]
fn shuffled_outputs_have_no_cross_covariance() {
    let j = 20_000;
    let states = gaussian_ensemble(j, 3, 2);
    let mut outputs: Vec<Vec<f64>> = states.iter().map(|s| vec![s[0] + 0.1 * s[1], s[2]]).collect();
    let linked = empirical_covariances(&states, &outputs).unwrap();
    assert!((linked.cross[(0, 0)] - 1.0).abs() <= 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in (1..j).rev() {
        outputs.swap(i, rng.random_range(0..=i));
    }
    let shuffled = empirical_covariances(&states, &outputs).unwrap();
    let band = 4.0 * 1.1 / (j as f64).sqrt();
    assert!(shuffled.cross.iter().all(|c| c.abs() <= band), "{}", shuffled.cross);
}
