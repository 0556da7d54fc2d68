//! Synthetic county data for the election experiment.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::experiment::CountyRecord;
use crate::rng::{stream, streams};

/// Mean and standard deviation of log-population.
const LOG_POP_MEAN: f64 = 10.0;
const LOG_POP_SD: f64 = 1.3;
/// Residual noise standard deviation for a county of median size.
const BASE_NOISE: f64 = 0.04;
/// Noise scale goes as (population / median)^(−NOISE_EXPONENT).
const NOISE_EXPONENT: f64 = 0.35;
const MIN_RESIDUAL: f64 = -0.9;

/// `n` counties with `d` covariates, deterministic given `seed`.
///
/// Populations are log-normal. Each covariate is a noisy copy of the
/// standardized log-population with its own loading. The relative vote
/// change r = (y − y_prev)/y_prev is linear in the covariates plus noise
/// whose scale falls with population, so small counties are harder to
/// predict and an ordering that favours large counties shifts the residual
/// distribution over time.
pub fn generate_synthetic_counties(n: usize, d: usize, seed: u64) -> Vec<CountyRecord> {
    let mut rng = stream(seed, streams::DATA);
    let loadings: Vec<f64> = (0..d)
        .map(|j| 0.8 - 0.6 * j as f64 / d.max(2) as f64)
        .collect();
    let effects: Vec<f64> = (0..d)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * 0.02 / (1.0 + j as f64)
        })
        .collect();
    let median = LOG_POP_MEAN.exp();
    (0..n)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let population = (LOG_POP_MEAN + LOG_POP_SD * z).exp().round().max(1.0);
            let covariates: Vec<f64> = loadings
                .iter()
                .map(|&rho| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    rho * z + (1.0 - rho * rho).sqrt() * e
                })
                .collect();
            let linear: f64 = 0.01
                + effects
                    .iter()
                    .zip(&covariates)
                    .map(|(b, x)| b * x)
                    .sum::<f64>();
            let scale = BASE_NOISE * (population / median).powf(-NOISE_EXPONENT);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let r = (linear + scale * noise).max(MIN_RESIDUAL);
            let turnout = rng.random_range(0.3..0.6);
            let y_prev = (population * turnout).max(1.0);
            CountyRecord {
                id: format!("c{i:05}"),
                population,
                covariates,
                y_prev,
                y: y_prev * (1.0 + r),
            }
        })
        .collect()
}
