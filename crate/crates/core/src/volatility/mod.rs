//! GARCH(1,1) forecasting and the rolling volatility experiment.

pub mod experiment;
pub mod garch;
pub mod synthetic;

pub use experiment::{
    aci_on_forecasts, run_volatility_experiment, run_volatility_experiment_multi,
    volatility_forecasts, ForecastPath, PriceSeries, VolatilityRunConfig,
};
pub use garch::{
    fit_garch, forecast_next_sigma2, garch_neg_loglik, garch_neg_loglik_with_initial,
    returns_from_prices, sigma2_path, GarchFit, GarchParams,
};
pub use synthetic::{
    benchmark_prices, prices_from_returns, regime_switching_benchmark, simulate_garch,
    simulate_regimes, Innovation, Regime,
};
