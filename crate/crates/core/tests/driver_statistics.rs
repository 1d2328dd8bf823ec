use mvsde::verification::{for_each_path, Summary};
use mvsde::DriverConfig;

const PATHS: usize = 4000;

fn terminals(cfg: &DriverConfig) -> Vec<f64> {
    for_each_path(PATHS, |i| Ok(cfg.sample(1, i)?.terminal()[0])).unwrap()
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

// sample variance of n draws has relative sd about sqrt(2/n) for Gaussian data
fn variance_tolerance(kurtosis_excess: f64) -> f64 {
    5.0 * ((2.0 + kurtosis_excess) / PATHS as f64).sqrt()
}

#[test]
fn brownian_terminal_is_centred_with_variance_t() {
    let horizon = 2.0;
    let y = terminals(&DriverConfig::brownian(200, horizon, 31));
    let s = Summary::of(&y);
    assert!(s.mean.abs() <= 4.0 * s.se, "mean {} se {}", s.mean, s.se);
    let v = variance(&y);
    assert!((v / horizon - 1.0).abs() < variance_tolerance(0.0), "variance {v}");
}

#[test]
fn compensated_poisson_terminal_moments() {
    let (lambda, beta, horizon) = (3.0, 0.5, 1.0);
    let y = terminals(&DriverConfig::cpoisson(lambda, beta, 400, horizon, 32));
    let s = Summary::of(&y);
    assert!(s.mean.abs() <= 4.0 * s.se, "mean {} se {}", s.mean, s.se);
    // Var = β² λ T; a Poisson count has excess kurtosis 1/(λT)
    let v = variance(&y);
    let expected = beta * beta * lambda * horizon;
    assert!((v / expected - 1.0).abs() < variance_tolerance(1.0 / (lambda * horizon)), "variance {v}");
}

#[test]
fn jump_counts_are_poisson() {
    let (lambda, horizon) = (5.0, 1.0);
    let cfg = DriverConfig::cpoisson(lambda, 0.2, 1000, horizon, 33);
    let counts: Vec<f64> = for_each_path(PATHS, |i| Ok(cfg.sample(1, i)?.jump_count() as f64)).unwrap();
    let s = Summary::of(&counts);
    // jump times are exact exponential gaps, so the count is Poisson(λT)
    let mean = lambda * horizon;
    assert!((s.mean - mean).abs() <= 4.0 * s.se, "mean {} vs {mean}", s.mean);
    let v = variance(&counts);
    assert!((v / mean - 1.0).abs() < variance_tolerance(1.0 / mean), "variance {v}");
}

#[test]
fn mixed_driver_adds_both_variances() {
    let (lambda, beta) = (2.0, 0.6);
    let y = terminals(&DriverConfig::mixed(lambda, beta, 400, 1.0, 34));
    let expected = 1.0 + beta * beta * lambda;
    let v = variance(&y);
    assert!((v / expected - 1.0).abs() < variance_tolerance(0.5), "variance {v} vs {expected}");
}

#[test]
fn components_are_uncorrelated() {
    let cfg = DriverConfig::brownian(100, 1.0, 35);
    let pairs = for_each_path(PATHS, |i| {
        let y = cfg.sample(2, i)?.terminal();
        Ok(y[0] * y[1])
    })
    .unwrap();
    let s = Summary::of(&pairs);
    assert!(s.mean.abs() <= 4.0 * s.se, "covariance {} se {}", s.mean, s.se);
}

#[test]
fn paths_do_not_depend_on_draw_order() {
    let cfg = DriverConfig::mixed(2.0, 0.4, 64, 1.0, 36);
    let forward: Vec<_> = (0..20).map(|i| cfg.sample(1, i).unwrap().values()).collect();
    let backward: Vec<_> = (0..20).rev().map(|i| cfg.sample(1, i).unwrap().values()).collect();
    assert!(forward.iter().eq(backward.iter().rev()));
    let parallel = for_each_path(20, |i| Ok(cfg.sample(1, i)?.values())).unwrap();
    assert_eq!(forward, parallel);
}
