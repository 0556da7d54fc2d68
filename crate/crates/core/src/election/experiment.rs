//! Conformalized quantile regression for counties arriving one at a time.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::quantreg::{fit_quantile_regression, QrModel};
use crate::aci::{init, AciConfig};
use crate::conformal::{
    compute_score, err_indicator, invert_to_interval, threshold_for_level, ScoreContext,
};
use crate::error::{Error, Result};
use crate::metrics::TrajectoryReport;

pub const DEFAULT_WARMUP: usize = 500;
pub const DEFAULT_CAL_FRAC: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountyRecord {
    pub id: String,
    pub population: f64,
    pub covariates: Vec<f64>,
    /// Votes in the previous election.
    pub y_prev: f64,
    /// Votes in the current election.
    pub y: f64,
}

impl CountyRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.population > 0.0 && self.population.is_finite()) {
            return Err(Error::Validation(format!(
                "county {}: population must be positive",
                self.id
            )));
        }
        if !(self.y_prev > 0.0 && self.y_prev.is_finite()) {
            return Err(Error::Validation(format!(
                "county {}: y_prev must be positive",
                self.id
            )));
        }
        if !(self.y >= 0.0 && self.y.is_finite()) {
            return Err(Error::Validation(format!(
                "county {}: y must be nonnegative",
                self.id
            )));
        }
        if self.covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "county {}: covariates must be finite",
                self.id
            )));
        }
        Ok(())
    }

    /// Relative change r = (y − y_prev) / y_prev.
    pub fn residual(&self) -> f64 {
        (self.y - self.y_prev) / self.y_prev
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectionRunConfig {
    /// Counties observed before the first prediction.
    pub warmup: usize,
    /// Share of the observed counties held out for calibration.
    pub cal_frac: f64,
    /// Refit the quantile models and redraw the split every this many steps.
    pub refit_every: usize,
}

impl Default for ElectionRunConfig {
    fn default() -> Self {
        Self {
            warmup: DEFAULT_WARMUP,
            cal_frac: DEFAULT_CAL_FRAC,
            refit_every: 1,
        }
    }
}

impl ElectionRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cal_frac > 0.0 && self.cal_frac < 1.0) {
            return Err(Error::Config(format!(
                "cal_frac must lie in (0,1), got {}",
                self.cal_frac
            )));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be at least 1".into()));
        }
        if self.warmup < 2 {
            return Err(Error::Config("warmup must be at least 2".into()));
        }
        Ok(())
    }

    /// Training-set size when `observed` counties are available.
    pub fn train_size(&self, observed: usize) -> usize {
        (observed as f64 * (1.0 - self.cal_frac)).floor() as usize
    }
}

/// Everything about an election run that does not depend on α_t.
#[derive(Clone, Debug)]
pub struct ElectionPath {
    pub labels: Vec<String>,
    pub y_prev: Vec<f64>,
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    /// CQR score of the county being predicted.
    pub scores: Vec<f64>,
    /// Sorted calibration scores used at each step; shared between steps
    /// that reuse one fit.
    pub calibration: Vec<Arc<[f64]>>,
    pub target_miscoverage: f64,
}

struct Fit {
    lo: QrModel,
    hi: QrModel,
    calibration: Arc<[f64]>,
}

fn fit_on_prefix<R: Rng + ?Sized>(
    counties: &[CountyRecord],
    observed: &[usize],
    alpha: f64,
    run: &ElectionRunConfig,
    rng: &mut R,
) -> Result<Fit> {
    let mut shuffled = observed.to_vec();
    shuffled.shuffle(rng);
    let (train, cal) = shuffled.split_at(run.train_size(observed.len()));
    let d = counties[observed[0]].covariates.len();
    let design = DMatrix::from_fn(train.len(), d, |i, j| counties[train[i]].covariates[j]);
    let r: Vec<f64> = train.iter().map(|&i| counties[i].residual()).collect();
    let lo = fit_quantile_regression(&design, &r, alpha / 2.0)?;
    let hi = fit_quantile_regression(&design, &r, 1.0 - alpha / 2.0)?;
    let mut scores = cal
        .iter()
        .map(|&i| {
            let c = &counties[i];
            compute_score(
                &ScoreContext::cqr(lo.predict(&c.covariates), hi.predict(&c.covariates)),
                c.residual(),
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    scores.sort_by(f64::total_cmp);
    Ok(Fit {
        lo,
        hi,
        calibration: scores.into(),
    })
}

/// Fits the quantile models along `ordering` and scores each county after
/// the warm-up. `alpha` sets the quantile-regression levels α/2 and 1 − α/2.
pub fn election_path<R: Rng + ?Sized>(
    counties: &[CountyRecord],
    ordering: &[usize],
    alpha: f64,
    run: &ElectionRunConfig,
    rng: &mut R,
) -> Result<ElectionPath> {
    run.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "target miscoverage must lie in (0,1), got {alpha}"
        )));
    }
    if ordering.len() != counties.len() {
        return Err(Error::Config(format!(
            "ordering has {} entries for {} counties",
            ordering.len(),
            counties.len()
        )));
    }
    let mut seen = vec![false; counties.len()];
    for &i in ordering {
        if i >= counties.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Config("ordering is not a permutation".into()));
        }
    }
    if counties.len() < run.warmup + 1 {
        return Err(Error::NoData(format!(
            "{} counties leave nothing to predict after a warm-up of {}",
            counties.len(),
            run.warmup
        )));
    }
    let d = counties[0].covariates.len();
    for c in counties {
        c.validate()?;
        if c.covariates.len() != d {
            return Err(Error::Validation(format!(
                "county {} has {} covariates, expected {d}",
                c.id,
                c.covariates.len()
            )));
        }
    }

    let steps = counties.len() - run.warmup;
    let mut path = ElectionPath {
        labels: Vec::with_capacity(steps),
        y_prev: Vec::with_capacity(steps),
        q_lo: Vec::with_capacity(steps),
        q_hi: Vec::with_capacity(steps),
        scores: Vec::with_capacity(steps),
        calibration: Vec::with_capacity(steps),
        target_miscoverage: alpha,
    };
    let mut fit: Option<Fit> = None;
    for (k, t) in (run.warmup..counties.len()).enumerate() {
        if k % run.refit_every == 0 || fit.is_none() {
            fit = Some(fit_on_prefix(counties, &ordering[..t], alpha, run, rng)?);
        }
        let f = fit.as_ref().expect("fit exists");
        let c = &counties[ordering[t]];
        let (q_lo, q_hi) = (f.lo.predict(&c.covariates), f.hi.predict(&c.covariates));
        path.labels.push(c.id.clone());
        path.y_prev.push(c.y_prev);
        path.q_lo.push(q_lo);
        path.q_hi.push(q_hi);
        path.scores
            .push(compute_score(&ScoreContext::cqr(q_lo, q_hi), c.residual())?);
        path.calibration.push(f.calibration.clone());
        if (k + 1) % 250 == 0 {
            log::debug!("election: {} of {steps} counties predicted", k + 1);
        }
    }
    Ok(path)
}

/// Intervals for the vote counts y with level α_t from `config`.
pub fn aci_on_election_path(
    path: &ElectionPath,
    config: AciConfig<f64>,
) -> Result<TrajectoryReport<f64>> {
    config.validate()?;
    let mut state = init(config)?;
    let mut report = TrajectoryReport::new(config);
    for j in 0..path.scores.len() {
        let threshold =
            threshold_for_level(&path.calibration[j], state.effective_quantile_level())?;
        let ctx = ScoreContext::cqr(path.q_lo[j], path.q_hi[j]);
        let interval = invert_to_interval(&ctx, threshold).affine(path.y_prev[j], path.y_prev[j]);
        let err = err_indicator(path.scores[j], threshold);
        report.push(path.labels[j].clone(), state.current_level, interval, err);
        state = state.update(err);
    }
    Ok(report)
}

pub fn run_election_experiment<R: Rng + ?Sized>(
    counties: &[CountyRecord],
    ordering: &[usize],
    config: AciConfig<f64>,
    run: &ElectionRunConfig,
    rng: &mut R,
) -> Result<TrajectoryReport<f64>> {
    config.validate()?;
    let path = election_path(counties, ordering, config.target_miscoverage, run, rng)?;
    aci_on_election_path(&path, config)
}

/// Several ACI configurations sharing one set of splits and fits. All
/// configurations must have the same target miscoverage, because it sets
/// the quantile-regression levels.
pub fn run_election_experiment_multi<R: Rng + ?Sized>(
    counties: &[CountyRecord],
    ordering: &[usize],
    configs: &[AciConfig<f64>],
    run: &ElectionRunConfig,
    rng: &mut R,
) -> Result<Vec<TrajectoryReport<f64>>> {
    let Some(first) = configs.first() else {
        return Ok(Vec::new());
    };
    for c in configs {
        c.validate()?;
        if c.target_miscoverage != first.target_miscoverage {
            return Err(Error::Config(
                "all configurations must share the target miscoverage".into(),
            ));
        }
    }
    let path = election_path(counties, ordering, first.target_miscoverage, run, rng)?;
    configs
        .iter()
        .map(|c| aci_on_election_path(&path, *c))
        .collect()
}
