//! Simulated GARCH return series and price paths.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use chrono::{Days, NaiveDate};

use super::experiment::PriceSeries;
use super::garch::{forecast_next_sigma2, GarchParams};
use crate::error::{Error, Result};
use crate::rng::{stream, streams};

/// Steps simulated and discarded before the returned series starts.
pub const BURN_IN: usize = 500;
/// Regime length of the default benchmark. Longer than the local-coverage
/// window and comparable to the calibration window, so a fixed-level method
/// is visibly miscalibrated within each stretch.
pub const BENCHMARK_STRETCH: usize = 1500;

/// Unit-variance innovation law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Innovation {
    Normal,
    /// Uniform on [−√3, √3].
    Uniform,
}

impl Innovation {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Innovation::Normal => StandardNormal.sample(rng),
            Innovation::Uniform => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
        }
    }
}

/// A stretch of `length` returns generated by one GARCH specification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub params: GarchParams,
    pub innovation: Innovation,
    pub length: usize,
}

/// GARCH(1,1) returns with Gaussian innovations, started from the
/// unconditional variance and run through a burn-in.
pub fn simulate_garch<R: Rng + ?Sized>(params: &GarchParams, n: usize, rng: &mut R) -> Vec<f64> {
    let regime = Regime {
        params: *params,
        innovation: Innovation::Normal,
        length: n,
    };
    simulate_regimes(&[regime], rng).expect("single valid regime")
}

/// Concatenated regimes. The variance recursion carries across regime
/// boundaries; the first regime is preceded by a burn-in.
pub fn simulate_regimes<R: Rng + ?Sized>(regimes: &[Regime], rng: &mut R) -> Result<Vec<f64>> {
    let first = regimes
        .first()
        .ok_or_else(|| Error::Config("at least one regime is required".into()))?;
    for r in regimes {
        r.params.validate()?;
    }
    let total: usize = regimes.iter().map(|r| r.length).sum();
    let mut out = Vec::with_capacity(total);
    let mut h = first.params.unconditional_variance();
    let mut prev = 0.0;
    let step =
        |p: &GarchParams, innovation: Innovation, h: &mut f64, prev: &mut f64, rng: &mut R| {
            *h = forecast_next_sigma2(p, *prev * *prev, *h);
            *prev = h.sqrt() * innovation.sample(rng);
            *prev
        };
    for _ in 0..BURN_IN {
        step(&first.params, first.innovation, &mut h, &mut prev, rng);
    }
    for r in regimes {
        for _ in 0..r.length {
            out.push(step(&r.params, r.innovation, &mut h, &mut prev, rng));
        }
    }
    Ok(out)
}

/// Prices P_0 = `start`, P_t = P_{t−1}(1 + R_t). Returns must exceed −1.
pub fn prices_from_returns(start: f64, returns: &[f64]) -> Result<Vec<f64>> {
    let mut prices = Vec::with_capacity(returns.len() + 1);
    prices.push(start);
    let mut p = start;
    for (t, r) in returns.iter().enumerate() {
        if !(*r > -1.0) {
            return Err(Error::Domain(format!(
                "return {r} at step {} would make the price nonpositive",
                t + 1
            )));
        }
        p *= 1.0 + r;
        prices.push(p);
    }
    Ok(prices)
}

/// Default regime-switching benchmark: alternating stretches of Gaussian
/// and uniform innovations, with persistence and variance level changing
/// between stretches. `n_returns` is split into stretches of `stretch` steps.
pub fn regime_switching_benchmark(n_returns: usize, stretch: usize) -> Vec<Regime> {
    let calm = GarchParams {
        omega: 2e-6,
        arch_coef: 0.08,
        garch_coef: 0.90,
    };
    let turbulent = GarchParams {
        omega: 1.5e-5,
        arch_coef: 0.15,
        garch_coef: 0.80,
    };
    let mut regimes = Vec::new();
    let mut left = n_returns;
    let mut i = 0;
    while left > 0 {
        let len = stretch.min(left);
        let (params, innovation) = if i % 2 == 0 {
            (calm, Innovation::Normal)
        } else {
            (turbulent, Innovation::Uniform)
        };
        regimes.push(Regime {
            params,
            innovation,
            length: len,
        });
        left -= len;
        i += 1;
    }
    regimes
}

/// Prices from the default benchmark with `n_returns` returns, labelled
/// by consecutive calendar dates from 2000-01-01.
pub fn benchmark_prices(n_returns: usize, seed: u64) -> Result<PriceSeries> {
    let regimes = regime_switching_benchmark(n_returns, BENCHMARK_STRETCH);
    let returns = simulate_regimes(&regimes, &mut stream(seed, streams::DATA))?;
    let prices = prices_from_returns(100.0, &returns)?;
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let labels = (0..prices.len())
        .map(|i| (start + Days::new(i as u64)).to_string())
        .collect();
    Ok(PriceSeries { labels, prices })
}
