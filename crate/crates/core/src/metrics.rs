//! Coverage diagnostics over experiment trajectories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aci::{prop_bound, AciConfig, ErrBit};
use crate::conformal::{quantile_of_sorted, PredictionInterval};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default local-coverage window for the volatility pipeline.
pub const VOLATILITY_WINDOW: usize = 500;
/// Default local-coverage window for the election pipeline.
pub const ELECTION_WINDOW: usize = 300;

/// Per-step record of an online run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport<T> {
    pub errs: Vec<ErrBit>,
    /// α_t used at each step, before the update.
    pub alphas: Vec<T>,
    pub intervals: Vec<PredictionInterval<T>>,
    pub step_labels: Vec<String>,
    pub config_echo: AciConfig<T>,
    /// Set when the run aborted; the report then holds a prefix only.
    pub failure: Option<String>,
}

impl<T: Scalar> TrajectoryReport<T> {
    pub fn new(config: AciConfig<T>) -> Self {
        Self {
            errs: Vec::new(),
            alphas: Vec::new(),
            intervals: Vec::new(),
            step_labels: Vec::new(),
            config_echo: config,
            failure: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn push(&mut self, label: String, alpha: T, interval: PredictionInterval<T>, err: ErrBit) {
        self.step_labels.push(label);
        self.alphas.push(alpha);
        self.intervals.push(interval);
        self.errs.push(err);
    }

    pub fn len(&self) -> usize {
        self.errs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errs.is_empty()
    }

    /// Checks that all series have equal length and that every α_t lies in
    /// the range the update rule guarantees.
    pub fn validate(&self) -> Result<()> {
        let n = self.errs.len();
        if self.alphas.len() != n || self.intervals.len() != n || self.step_labels.len() != n {
            return Err(Error::Validation(
                "trajectory series have different lengths".into(),
            ));
        }
        let (lo, hi) = self.config_echo.level_bounds();
        let tol = T::lit(1e-9);
        if let Some((t, a)) = self
            .alphas
            .iter()
            .enumerate()
            .find(|(_, a)| !(**a >= lo - tol && **a <= hi + tol))
        {
            return Err(Error::Validation(format!(
                "alpha_t at step {} is {a}, outside [{lo}, {hi}]",
                t + 1
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub steps: usize,
    pub window: usize,
    pub average_coverage: f64,
    pub max_local_deviation: f64,
    pub min_local_coverage: f64,
    /// None when the step size is 0 and no finite bound exists.
    pub prop_bound_value: Option<f64>,
    pub prop_bound_satisfied: bool,
}

fn check_window(len: usize, window: usize) -> Result<()> {
    if window == 0 || !window.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "local coverage window must be a positive even number, got {window}"
        )));
    }
    if window > len {
        return Err(Error::NoData(format!(
            "window {window} exceeds trajectory length {len}"
        )));
    }
    Ok(())
}

/// 1 − mean(err) over each full window of `window` consecutive steps.
///
/// Entry i covers steps i..i+window, i.e. it is centred on the 0-based step
/// i + window/2 − 1. The output has length `errs.len() − window + 1`.
pub fn local_coverage<T: Scalar>(errs: &[ErrBit], window: usize) -> Result<Vec<T>> {
    check_window(errs.len(), window)?;
    let mut count: usize = errs[..window].iter().map(|e| e.value() as usize).sum();
    let w = T::count(window);
    let mut out = Vec::with_capacity(errs.len() - window + 1);
    out.push(T::one() - T::count(count) / w);
    for i in window..errs.len() {
        count += errs[i].value() as usize;
        count -= errs[i - window].value() as usize;
        out.push(T::one() - T::count(count) / w);
    }
    Ok(out)
}

/// 0-based step index at which local coverage entry `i` is reported.
pub fn local_coverage_center(i: usize, window: usize) -> usize {
    i + window / 2 - 1
}

pub fn average_coverage<T: Scalar>(errs: &[ErrBit]) -> Result<T> {
    if errs.is_empty() {
        return Err(Error::NoData("no steps to average".into()));
    }
    let misses = errs.iter().filter(|e| e.0).count();
    Ok(T::one() - T::count(misses) / T::count(errs.len()))
}

pub fn summarize<T: Scalar>(
    report: &TrajectoryReport<T>,
    window: usize,
) -> Result<CoverageSummary> {
    if report.is_empty() {
        return Err(Error::NoData("empty trajectory".into()));
    }
    let local = local_coverage::<f64>(&report.errs, window)?;
    let cfg = &report.config_echo;
    let target = 1.0 - cfg.target_miscoverage.as_f64();
    let average = average_coverage::<f64>(&report.errs)?;
    let max_dev = local.iter().map(|c| (c - target).abs()).fold(0.0, f64::max);
    let min_local = local.iter().copied().fold(f64::INFINITY, f64::min);
    let steps = report.len();
    let (bound, satisfied) = if cfg.step_size > T::zero() {
        let bound = prop_bound(cfg, steps as u64)?.as_f64();
        let gap = ((1.0 - average) - cfg.target_miscoverage.as_f64()).abs();
        (Some(bound), gap <= bound)
    } else {
        (None, true)
    };
    Ok(CoverageSummary {
        steps,
        window,
        average_coverage: average,
        max_local_deviation: max_dev,
        min_local_coverage: min_local,
        prop_bound_value: bound,
        prop_bound_satisfied: satisfied,
    })
}

/// Pointwise envelope of local coverage under i.i.d. Bernoulli(α) errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliBand {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BernoulliBand {
    /// Whether every entry of `local` lies inside the band at the same position.
    pub fn contains_series(&self, local: &[f64]) -> bool {
        local
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(c, (lo, hi))| lo <= c && c <= hi)
    }

    /// First position where `local` leaves the band.
    pub fn first_exit(&self, local: &[f64]) -> Option<usize> {
        local
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .position(|(c, (lo, hi))| c < lo || c > hi)
    }
}

/// Simulates `reps` Bernoulli(α) error sequences of length `horizon` and
/// takes the (1 ∓ band_quantile)/2 empirical quantiles of their local
/// coverage at every position.
pub fn bernoulli_band<R: Rng + ?Sized>(
    horizon: usize,
    alpha: f64,
    window: usize,
    reps: usize,
    band_quantile: f64,
    rng: &mut R,
) -> Result<BernoulliBand> {
    if reps < 100 {
        return Err(Error::Config(format!(
            "band needs at least 100 replications, got {reps}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) || !(band_quantile > 0.0 && band_quantile < 1.0) {
        return Err(Error::Config(
            "alpha and band quantile must lie in (0,1)".into(),
        ));
    }
    check_window(horizon, window)?;
    let positions = horizon - window + 1;
    let mut by_position = vec![Vec::with_capacity(reps); positions];
    let mut errs = vec![ErrBit::COVERED; horizon];
    for _ in 0..reps {
        for e in errs.iter_mut() {
            *e = ErrBit(rng.random::<f64>() < alpha);
        }
        for (slot, c) in by_position
            .iter_mut()
            .zip(local_coverage::<f64>(&errs, window)?)
        {
            slot.push(c);
        }
    }
    let lo_p = (1.0 - band_quantile) / 2.0;
    let hi_p = (1.0 + band_quantile) / 2.0;
    let mut lower = Vec::with_capacity(positions);
    let mut upper = Vec::with_capacity(positions);
    for mut column in by_position {
        column.sort_by(f64::total_cmp);
        lower.push(quantile_of_sorted(&column, lo_p)?);
        upper.push(quantile_of_sorted(&column, hi_p)?);
    }
    Ok(BernoulliBand { lower, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aci::{init, UpdateRule};

    fn errs(bits: &[u8]) -> Vec<ErrBit> {
        bits.iter().map(|&b| ErrBit(b == 1)).collect()
    }

    #[test]
    fn local_coverage_examples() {
        let zeros = vec![ErrBit::COVERED; 1000];
        let lc = local_coverage::<f64>(&zeros, 500).unwrap();
        assert_eq!(lc.len(), 501);
        assert!(lc.iter().all(|&c| c == 1.0));
        let alt: Vec<ErrBit> = (0..1000).map(|i| ErrBit(i % 2 == 1)).collect();
        assert!(local_coverage::<f64>(&alt, 500)
            .unwrap()
            .iter()
            .all(|&c| c == 0.5));
        let ones = vec![ErrBit::MISSED; 600];
        assert!(local_coverage::<f64>(&ones, 500)
            .unwrap()
            .iter()
            .all(|&c| c == 0.0));
        assert!(matches!(
            local_coverage::<f64>(&ones, 700),
            Err(Error::NoData(_))
        ));
        assert!(local_coverage::<f64>(&ones, 5).is_err());
    }

    #[test]
    fn local_coverage_matches_direct_windows() {
        let e = errs(&[0, 1, 1, 0, 0, 0, 1, 0, 1, 1]);
        let lc = local_coverage::<f64>(&e, 4).unwrap();
        for (i, c) in lc.iter().enumerate() {
            let misses = e[i..i + 4].iter().filter(|b| b.0).count() as f64;
            assert_eq!(*c, 1.0 - misses / 4.0);
        }
        assert_eq!(local_coverage_center(0, 500), 249);
    }

    #[test]
    fn average_coverage_examples() {
        assert_eq!(average_coverage::<f64>(&errs(&[0, 0, 1, 0])).unwrap(), 0.75);
        assert_eq!(average_coverage::<f64>(&errs(&[0, 0])).unwrap(), 1.0);
        assert_eq!(average_coverage::<f64>(&errs(&[1, 1])).unwrap(), 0.0);
        assert!(average_coverage::<f64>(&[]).is_err());
    }

    fn report_from(errs: Vec<ErrBit>, cfg: AciConfig<f64>) -> TrajectoryReport<f64> {
        let mut r = TrajectoryReport::new(cfg);
        let mut s = init(cfg).unwrap();
        for (t, e) in errs.into_iter().enumerate() {
            r.push(
                t.to_string(),
                s.current_level,
                PredictionInterval::whole_line(),
                e,
            );
            s = s.update(e);
        }
        r
    }

    #[test]
    fn summary_of_perfect_coverage() {
        let cfg = AciConfig::simple(0.1, 0.005).unwrap();
        // gap is α = 0.1 and the bound 0.905/(0.005·T) stays above it until T = 1810
        let short = summarize(&report_from(vec![ErrBit::COVERED; 1800], cfg), 500).unwrap();
        assert_eq!(short.average_coverage, 1.0);
        assert!(short.prop_bound_satisfied);
        assert_eq!(short.min_local_coverage, 1.0);
        let long = summarize(&report_from(vec![ErrBit::COVERED; 1900], cfg), 500).unwrap();
        assert!(!long.prop_bound_satisfied);
    }

    #[test]
    fn summary_flags_impossible_trajectory() {
        let cfg = AciConfig::simple(0.1, 0.005).unwrap();
        let mut r = TrajectoryReport::new(cfg);
        for t in 0..20_000 {
            r.push(
                t.to_string(),
                0.1,
                PredictionInterval::empty(),
                ErrBit::MISSED,
            );
        }
        let s = summarize(&r, 500).unwrap();
        assert!(!s.prop_bound_satisfied);
        assert_eq!(s.average_coverage, 0.0);
        assert!((s.max_local_deviation - 0.9).abs() < 1e-12);
    }

    #[test]
    fn summary_without_step_size_has_no_bound() {
        let cfg = AciConfig::new(0.1, 0.0, 0.1, UpdateRule::Simple).unwrap();
        let s = summarize(&report_from(vec![ErrBit::MISSED; 600], cfg), 500).unwrap();
        assert_eq!(s.prop_bound_value, None);
        assert!(s.prop_bound_satisfied);
    }

    #[test]
    fn validate_rejects_out_of_range_levels() {
        let cfg = AciConfig::simple(0.1, 0.005).unwrap();
        let mut r = report_from(vec![ErrBit::COVERED; 5], cfg);
        r.validate().unwrap();
        r.alphas[2] = 1.5;
        assert!(matches!(r.validate(), Err(Error::Validation(_))));
        r.alphas.pop();
        assert!(r.validate().is_err());
    }

    #[test]
    fn band_matches_binomial_quantiles() {
        use statrs::distribution::{Binomial, DiscreteCDF};
        // window coverage is 1 − M/500 with M ~ Binomial(500, 0.1)
        let m = Binomial::new(0.1, 500).unwrap();
        let want_lo = 1.0 - m.inverse_cdf(0.995) as f64 / 500.0;
        let want_hi = 1.0 - m.inverse_cdf(0.005) as f64 / 500.0;
        let mut rng = crate::rng::stream(3, 0);
        let band = bernoulli_band(1500, 0.1, 500, 2000, 0.99, &mut rng).unwrap();
        // the 0.5% tails hold ten draws each, so allow a few counts of noise
        for (lo, hi) in band.lower.iter().zip(&band.upper) {
            assert!((lo - want_lo).abs() <= 0.01, "lower {lo} vs {want_lo}");
            assert!((hi - want_hi).abs() <= 0.01, "upper {hi} vs {want_hi}");
        }
    }

    #[test]
    fn band_narrows_with_window_and_is_reproducible() {
        let a = bernoulli_band(2000, 0.1, 2000, 200, 0.99, &mut crate::rng::stream(9, 0)).unwrap();
        let b = bernoulli_band(2000, 0.1, 2000, 200, 0.99, &mut crate::rng::stream(9, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.upper[0] - a.lower[0] < 0.04);
        assert!(bernoulli_band(100, 0.1, 10, 50, 0.99, &mut crate::rng::stream(9, 0)).is_err());
    }
}
