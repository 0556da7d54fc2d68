//! Rolling-window GARCH forecasting with conformal volatility intervals.

use serde::{Deserialize, Serialize};

use super::garch::{fit_garch, forecast_next_sigma2, returns_from_prices, GarchFit};
use crate::aci::{init, AciConfig};
use crate::conformal::{
    compute_score, err_indicator, invert_to_interval, threshold_for_level, RollingCalibration,
    ScoreContext,
};
use crate::error::{Error, Result};
use crate::metrics::TrajectoryReport;

pub const DEFAULT_WINDOW: usize = 1250;

/// Price observations with one label (usually a date) per price.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    pub labels: Vec<String>,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    /// Series labelled by position.
    pub fn unlabelled(prices: Vec<f64>) -> Self {
        Self {
            labels: (0..prices.len()).map(|i| i.to_string()).collect(),
            prices,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolatilityRunConfig {
    /// Returns used per GARCH fit and scores kept for calibration.
    pub window: usize,
    /// Refit every this many steps; forecasts are made every step.
    pub refit_every: usize,
}

impl Default for VolatilityRunConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            refit_every: 1,
        }
    }
}

/// Everything about a volatility run that does not depend on α_t.
#[derive(Clone, Debug)]
pub struct ForecastPath {
    /// In-sample normalized scores of the first fit; they fill the
    /// calibration window before any out-of-sample score exists.
    pub seed_scores: Vec<f64>,
    pub labels: Vec<String>,
    pub sigma2: Vec<f64>,
    pub realized: Vec<f64>,
    pub scores: Vec<f64>,
    pub window: usize,
    pub failure: Option<String>,
}

fn fit_window(returns: &[f64], step: usize) -> Result<GarchFit> {
    match fit_garch(returns) {
        Ok(fit) => Ok(fit),
        Err(Error::Convergence {
            message,
            best: Some(best),
        }) => {
            log::warn!("step {step}: {message}; using best fit found");
            Ok(*best)
        }
        Err(e) => Err(e),
    }
}

fn normalized_score(sigma2: f64, realized: f64) -> Result<f64> {
    compute_score(&ScoreContext::normalized(sigma2)?, realized)
}

/// One-step variance forecasts and normalized scores for every return after
/// the first `window`.
pub fn volatility_forecasts(
    series: &PriceSeries,
    run: &VolatilityRunConfig,
) -> Result<ForecastPath> {
    if run.refit_every == 0 {
        return Err(Error::Config("refit_every must be at least 1".into()));
    }
    if series.labels.len() != series.prices.len() {
        return Err(Error::Config("one label per price is required".into()));
    }
    let window = run.window;
    if series.prices.len() <= window + 1 {
        return Err(Error::NoData(format!(
            "{} prices leave no step after a window of {window}",
            series.prices.len()
        )));
    }
    let returns = returns_from_prices(&series.prices)?;
    let steps = returns.len() - window;
    let mut path = ForecastPath {
        seed_scores: Vec::new(),
        labels: Vec::with_capacity(steps),
        sigma2: Vec::with_capacity(steps),
        realized: Vec::with_capacity(steps),
        scores: Vec::with_capacity(steps),
        window,
        failure: None,
    };
    let mut fit: Option<GarchFit> = None;
    let mut sigma2_prev = 0.0;
    for j in 0..steps {
        let i = window + j;
        if j % run.refit_every == 0 {
            let history = &returns[i - window..i];
            match fit_window(history, j + 1) {
                Ok(f) => {
                    if j == 0 {
                        path.seed_scores = history
                            .iter()
                            .zip(&f.sigma2_path)
                            .map(|(r, h)| normalized_score(*h, r * r))
                            .collect::<Result<_>>()?;
                    }
                    sigma2_prev = *f.sigma2_path.last().expect("nonempty window");
                    fit = Some(f);
                }
                Err(e) if j == 0 => return Err(e),
                Err(e) => {
                    log::error!("step {}: GARCH fit failed: {e}", j + 1);
                    path.failure = Some(format!("step {}: {e}", j + 1));
                    break;
                }
            }
        }
        let params = fit.as_ref().expect("fitted at step 0").params;
        let v_prev = returns[i - 1] * returns[i - 1];
        let sigma2 = forecast_next_sigma2(&params, v_prev, sigma2_prev);
        sigma2_prev = sigma2;
        let realized = returns[i] * returns[i];
        let score = match normalized_score(sigma2, realized) {
            Ok(s) => s,
            Err(e) => {
                path.failure = Some(format!("step {}: {e}", j + 1));
                break;
            }
        };
        path.labels.push(series.labels[i + 1].clone());
        path.sigma2.push(sigma2);
        path.realized.push(realized);
        path.scores.push(score);
    }
    Ok(path)
}

/// Conformal intervals for the realized variance with level α_t from `config`.
pub fn aci_on_forecasts(
    path: &ForecastPath,
    config: AciConfig<f64>,
) -> Result<TrajectoryReport<f64>> {
    let mut state = init(config)?;
    let mut cal = RollingCalibration::new(path.window);
    for &s in &path.seed_scores {
        cal.push(s)?;
    }
    let mut report = TrajectoryReport::new(config);
    for j in 0..path.scores.len() {
        let threshold = threshold_for_level(cal.sorted(), state.effective_quantile_level())?;
        let ctx = ScoreContext::normalized(path.sigma2[j])?;
        let interval = invert_to_interval(&ctx, threshold);
        let err = err_indicator(path.scores[j], threshold);
        report.push(path.labels[j].clone(), state.current_level, interval, err);
        state = state.update(err);
        cal.push(path.scores[j])?;
    }
    report.failure = path.failure.clone();
    Ok(report)
}

pub fn run_volatility_experiment(
    series: &PriceSeries,
    config: AciConfig<f64>,
    run: &VolatilityRunConfig,
) -> Result<TrajectoryReport<f64>> {
    config.validate()?;
    aci_on_forecasts(&volatility_forecasts(series, run)?, config)
}

/// Several ACI configurations over one set of forecasts; the GARCH fits do
/// not depend on α_t, so they are computed once.
pub fn run_volatility_experiment_multi(
    series: &PriceSeries,
    configs: &[AciConfig<f64>],
    run: &VolatilityRunConfig,
) -> Result<Vec<TrajectoryReport<f64>>> {
    for c in configs {
        c.validate()?;
    }
    let path = volatility_forecasts(series, run)?;
    configs
        .iter()
        .map(|c| aci_on_forecasts(&path, *c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aci::{prop_bound, UpdateRule};
    use crate::rng::stream;
    use crate::volatility::garch::GarchParams;
    use crate::volatility::synthetic::{prices_from_returns, simulate_garch};

    fn series(n_prices: usize, seed: u64) -> PriceSeries {
        let p = GarchParams::new(1e-5, 0.1, 0.85).unwrap();
        let r = simulate_garch(&p, n_prices - 1, &mut stream(seed, 0));
        PriceSeries::unlabelled(prices_from_returns(100.0, &r).unwrap())
    }

    fn small_run() -> VolatilityRunConfig {
        VolatilityRunConfig {
            window: 200,
            refit_every: 10,
        }
    }

    #[test]
    fn report_has_one_step_per_price_after_window() {
        let m = 37;
        let s = series(200 + 1 + m, 1);
        let r = run_volatility_experiment(&s, AciConfig::simple(0.1, 0.005).unwrap(), &small_run())
            .unwrap();
        assert_eq!(r.len(), m);
        assert!(r.is_complete());
        assert_eq!(r.step_labels[0], "201");
        assert!(matches!(
            run_volatility_experiment(
                &series(201, 1),
                AciConfig::simple(0.1, 0.005).unwrap(),
                &small_run()
            ),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn zero_step_size_pins_the_level() {
        let s = series(600, 2);
        let fixed = AciConfig::simple(0.1, 0.0).unwrap();
        let r = run_volatility_experiment(&s, fixed, &small_run()).unwrap();
        assert!(r.alphas.iter().all(|&a| a == 0.1));
    }

    #[test]
    fn runs_satisfy_the_coverage_bound_and_are_deterministic() {
        let s = series(900, 3);
        let cfgs = [
            AciConfig::simple(0.1, 0.005).unwrap(),
            AciConfig::new(
                0.1,
                0.005,
                0.1,
                UpdateRule::WeightedGeometric { decay: 0.95 },
            )
            .unwrap(),
        ];
        let a = run_volatility_experiment_multi(&s, &cfgs, &small_run()).unwrap();
        let b = run_volatility_experiment_multi(&s, &cfgs, &small_run()).unwrap();
        assert_eq!(a, b);
        for (r, c) in a.iter().zip(&cfgs) {
            r.validate().unwrap();
            let miss = r.errs.iter().filter(|e| e.0).count() as f64 / r.len() as f64;
            assert!((miss - 0.1).abs() <= prop_bound(c, r.len() as u64).unwrap());
            for (iv, a) in r.intervals.iter().zip(&r.alphas) {
                if (0.0..=1.0).contains(a) {
                    assert!(iv.lower >= 0.0);
                }
            }
        }
    }

    #[test]
    fn refit_every_step_differs_from_sparse_refits() {
        let s = series(330, 4);
        let cfg = AciConfig::simple(0.1, 0.005).unwrap();
        let dense = run_volatility_experiment(
            &s,
            cfg,
            &VolatilityRunConfig {
                window: 200,
                refit_every: 1,
            },
        )
        .unwrap();
        let sparse = run_volatility_experiment(&s, cfg, &small_run()).unwrap();
        assert_eq!(dense.len(), sparse.len());
        assert_eq!(dense.intervals[0], sparse.intervals[0]);
        assert_ne!(dense.intervals, sparse.intervals);
    }
}
