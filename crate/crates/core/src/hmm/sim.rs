//! The hidden-Markov score model and fixed-quantile ACI runs on it.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::chain::{stationary_distribution, validate_transition};
use crate::aci::{init, AciConfig, ExtendedLevel};
use crate::conformal::{err_indicator, quantile_of_sorted, CalibrationScores, PredictionInterval};
use crate::error::{Error, Result};
use crate::metrics::TrajectoryReport;

/// Conformity-score distribution attached to one hidden state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScoreDist {
    Normal {
        mean: f64,
        scale: f64,
    },
    /// Uniform on [low, high]; gives M_a(p) exactly linear in p when the
    /// fixed quantile function is uniform too.
    Uniform {
        low: f64,
        high: f64,
    },
}

impl ScoreDist {
    fn validate(&self) -> Result<()> {
        match *self {
            ScoreDist::Normal { mean, scale } => {
                if !mean.is_finite() || !(scale > 0.0) || !scale.is_finite() {
                    return Err(Error::Domain(format!(
                        "normal score distribution needs finite mean and positive scale, got ({mean}, {scale})"
                    )));
                }
            }
            ScoreDist::Uniform { low, high } => {
                if !low.is_finite() || !high.is_finite() || !(low < high) {
                    return Err(Error::Domain(format!(
                        "uniform score distribution needs low < high, got [{low}, {high}]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        match *self {
            ScoreDist::Normal { mean, scale } => std_normal().cdf((x - mean) / scale),
            ScoreDist::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScoreDist::Normal { mean, scale } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + scale * z
            }
            ScoreDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Finite-state environment chain with per-state score distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmSpec {
    transition: DMatrix<f64>,
    score_dist: Vec<ScoreDist>,
    stationary: Vec<f64>,
    stationary_cumulative: Vec<f64>,
    /// Row-wise cumulative transition probabilities for sampling.
    cumulative: Vec<Vec<f64>>,
}

impl HmmSpec {
    /// Validates the chain and computes its stationary distribution.
    pub fn new(transition: DMatrix<f64>, score_dist: Vec<ScoreDist>) -> Result<Self> {
        validate_transition(&transition)?;
        if score_dist.len() != transition.nrows() {
            return Err(Error::Domain(format!(
                "{} score distributions for {} states",
                score_dist.len(),
                transition.nrows()
            )));
        }
        for d in &score_dist {
            d.validate()?;
        }
        let stationary: Vec<f64> = stationary_distribution(&transition)?
            .iter()
            .copied()
            .collect();
        let stationary_cumulative = running_sum(&stationary);
        let cumulative = transition
            .row_iter()
            .map(|row| running_sum(&row.iter().copied().collect::<Vec<_>>()))
            .collect();
        Ok(Self {
            transition,
            score_dist,
            stationary,
            stationary_cumulative,
            cumulative,
        })
    }

    pub fn n_states(&self) -> usize {
        self.score_dist.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn score_dist(&self) -> &[ScoreDist] {
        &self.score_dist
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub(crate) fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        pick(&self.stationary_cumulative, rng.random::<f64>())
    }

    pub(crate) fn next_state<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        pick(&self.cumulative[state], rng.random::<f64>())
    }
}

fn running_sum(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Inverse-transform sampling from a cumulative probability row.
fn pick(cumulative: &[f64], u: f64) -> usize {
    let i = cumulative.partition_point(|&c| c <= u);
    if i < cumulative.len() {
        return i;
    }
    // u fell into the rounding slack of a row summing to 1 − ε: take the
    // last state with positive probability
    (0..cumulative.len())
        .rev()
        .find(|&j| j == 0 || cumulative[j] > cumulative[j - 1])
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmmPath {
    pub states: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Simulates `horizon` steps with A₁ drawn from the stationary distribution.
pub fn simulate_hmm<R: Rng + ?Sized>(spec: &HmmSpec, horizon: usize, rng: &mut R) -> HmmPath {
    let mut states = Vec::with_capacity(horizon);
    let mut scores = Vec::with_capacity(horizon);
    if horizon == 0 {
        return HmmPath { states, scores };
    }
    let mut a = spec.initial_state(rng);
    for t in 0..horizon {
        if t > 0 {
            a = spec.next_state(a, rng);
        }
        states.push(a);
        scores.push(spec.score_dist[a].sample(rng));
    }
    HmmPath { states, scores }
}

/// A quantile function that does not change over time.
#[derive(Clone, Debug, PartialEq)]
pub enum FixedQuantileFn {
    Normal { mean: f64, scale: f64 },
    Uniform { low: f64, high: f64 },
    Empirical(CalibrationScores<f64>),
}

impl FixedQuantileFn {
    /// Exact quantile function of a score distribution.
    pub fn exact(dist: &ScoreDist) -> Self {
        match *dist {
            ScoreDist::Normal { mean, scale } => FixedQuantileFn::Normal { mean, scale },
            ScoreDist::Uniform { low, high } => FixedQuantileFn::Uniform { low, high },
        }
    }

    /// Q̂(x), with −∞ below 0 and +∞ above 1.
    pub fn eval(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if x > 1.0 {
            return f64::INFINITY;
        }
        match self {
            FixedQuantileFn::Normal { mean, scale } => {
                if x == 0.0 {
                    f64::NEG_INFINITY
                } else if x == 1.0 {
                    f64::INFINITY
                } else {
                    mean + scale * std_normal().inverse_cdf(x)
                }
            }
            FixedQuantileFn::Uniform { low, high } => low + (high - low) * x,
            FixedQuantileFn::Empirical(cal) => {
                quantile_of_sorted(cal.sorted(), x).unwrap_or(f64::INFINITY)
            }
        }
    }

    /// Threshold for an effective ACI level.
    pub fn threshold(&self, level: ExtendedLevel<f64>) -> f64 {
        match level {
            ExtendedLevel::CoverEverything => f64::INFINITY,
            ExtendedLevel::CoverNothing => f64::NEG_INFINITY,
            ExtendedLevel::Level(p) => self.eval(p),
        }
    }
}

/// M_a(β) = P(S > Q̂(1 − β) | A = a), extended by 0 below β = 0 and 1 above β = 1.
pub fn miscoverage_curve(dist: &ScoreDist, qhat: &FixedQuantileFn, beta: f64) -> f64 {
    if beta < 0.0 {
        return 0.0;
    }
    if beta > 1.0 {
        return 1.0;
    }
    1.0 - dist.cdf(qhat.eval(1.0 - beta))
}

/// ACI over a score stream with a fixed quantile function. Intervals are
/// reported in score space as (−∞, threshold].
pub fn run_fixed_quantile_aci(
    scores: &[f64],
    qhat: &FixedQuantileFn,
    config: AciConfig<f64>,
) -> Result<TrajectoryReport<f64>> {
    let mut state = init(config)?;
    let mut report = TrajectoryReport::new(config);
    for (t, &s) in scores.iter().enumerate() {
        let threshold = qhat.threshold(state.effective_quantile_level());
        let err = err_indicator(s, threshold);
        let interval = if threshold == f64::NEG_INFINITY {
            PredictionInterval::empty()
        } else {
            PredictionInterval::new(f64::NEG_INFINITY, threshold)
        };
        report.push((t + 1).to_string(), state.current_level, interval, err);
        state = state.update(err);
    }
    Ok(report)
}
