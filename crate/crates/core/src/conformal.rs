//! Conformity scores, empirical score quantiles and prediction intervals.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::aci::{ErrBit, ExtendedLevel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sorted multiset of calibration scores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationScores<T> {
    sorted: Vec<T>,
}

impl<T: Scalar> CalibrationScores<T> {
    /// Builds the set, rejecting non-finite scores.
    pub fn new(mut scores: Vec<T>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Domain(format!(
                "calibration score {bad} is not finite"
            )));
        }
        scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores are ordered"));
        Ok(Self { sorted: scores })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[T] {
        &self.sorted
    }

    pub fn quantile(&self, p: T) -> Result<T> {
        quantile_of_sorted(&self.sorted, p)
    }
}

/// inf{s : (1/n) Σ 1{S_r ≤ s} ≥ p} over an ascending slice, with −∞ for
/// p ≤ 0 and +∞ for p > 1.
pub fn quantile_of_sorted<T: Scalar>(sorted: &[T], p: T) -> Result<T> {
    if p <= T::zero() {
        return Ok(T::neg_infinity());
    }
    if p > T::one() {
        return Ok(T::infinity());
    }
    if p.is_nan() {
        return Err(Error::Domain("quantile level is NaN".into()));
    }
    let n = sorted.len();
    if n == 0 {
        return Err(Error::NoData("empty calibration set".into()));
    }
    let nf = T::count(n);
    let frac = |k: usize| T::count(k) / nf;
    // ⌈p·n⌉ can be off by one after rounding; settle on the smallest k with k/n ≥ p.
    let mut k = (p * nf).ceil().to_usize().unwrap_or(n).clamp(1, n);
    while k > 1 && frac(k - 1) >= p {
        k -= 1;
    }
    while k < n && frac(k) < p {
        k += 1;
    }
    Ok(sorted[k - 1])
}

/// Free-function form of [`CalibrationScores::quantile`].
pub fn empirical_quantile<T: Scalar>(cal: &CalibrationScores<T>, p: T) -> Result<T> {
    cal.quantile(p)
}

/// Score threshold for an effective level: +∞, −∞, or the empirical quantile.
pub fn threshold_for_level<T: Scalar>(sorted: &[T], level: ExtendedLevel<T>) -> Result<T> {
    match level {
        ExtendedLevel::CoverEverything => Ok(T::infinity()),
        ExtendedLevel::CoverNothing => Ok(T::neg_infinity()),
        ExtendedLevel::Level(p) => quantile_of_sorted(sorted, p),
    }
}

/// Trailing window of scores kept sorted for repeated quantile queries.
#[derive(Clone, Debug)]
pub struct RollingCalibration<T> {
    capacity: usize,
    arrival: VecDeque<T>,
    sorted: Vec<T>,
}

impl<T: Scalar> RollingCalibration<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(
            capacity > 0,
            "rolling calibration needs a positive capacity"
        );
        Self {
            capacity,
            arrival: VecDeque::with_capacity(capacity + 1),
            sorted: Vec::with_capacity(capacity + 1),
        }
    }

    pub fn push(&mut self, score: T) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Domain(format!(
                "calibration score {score} is not finite"
            )));
        }
        let pos = self.sorted.partition_point(|s| *s <= score);
        self.sorted.insert(pos, score);
        self.arrival.push_back(score);
        if self.arrival.len() > self.capacity {
            let old = self.arrival.pop_front().expect("nonempty");
            let pos = self.sorted.partition_point(|s| *s < old);
            self.sorted.remove(pos);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[T] {
        &self.sorted
    }

    pub fn quantile(&self, p: T) -> Result<T> {
        quantile_of_sorted(&self.sorted, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreContext<T> {
    /// |pred − y|
    Absolute { point_prediction: T },
    /// |y − σ̂²| / σ̂²
    Normalized { sigma2_hat: T },
    /// max{q_lo − y, y − q_hi}
    Cqr { q_lo: T, q_hi: T },
}

impl<T: Scalar> ScoreContext<T> {
    pub fn absolute(point_prediction: T) -> Self {
        ScoreContext::Absolute { point_prediction }
    }

    pub fn normalized(sigma2_hat: T) -> Result<Self> {
        if !(sigma2_hat > T::zero()) || !sigma2_hat.is_finite() {
            return Err(Error::Domain(format!(
                "normalized score needs a positive variance forecast, got {sigma2_hat}"
            )));
        }
        Ok(ScoreContext::Normalized { sigma2_hat })
    }

    /// CQR context; crossed quantile fits are swapped.
    pub fn cqr(q_lo: T, q_hi: T) -> Self {
        if q_lo > q_hi {
            log::warn!("crossed quantile fits ({q_lo} > {q_hi}); swapping");
            ScoreContext::Cqr {
                q_lo: q_hi,
                q_hi: q_lo,
            }
        } else {
            ScoreContext::Cqr { q_lo, q_hi }
        }
    }
}

/// Interval on the extended real line. The empty set is stored as
/// lower = +∞, upper = −∞.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> PredictionInterval<T> {
    pub fn new(lower: T, upper: T) -> Self {
        if lower > upper {
            Self::empty()
        } else {
            Self { lower, upper }
        }
    }

    pub fn empty() -> Self {
        Self {
            lower: T::infinity(),
            upper: T::neg_infinity(),
        }
    }

    pub fn whole_line() -> Self {
        Self {
            lower: T::neg_infinity(),
            upper: T::infinity(),
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.lower <= self.upper)
    }

    pub fn contains(&self, y: T) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn width(&self) -> T {
        if self.is_empty() {
            T::zero()
        } else {
            self.upper - self.lower
        }
    }

    /// Image under y ↦ offset + scale·y with scale > 0.
    pub fn affine(&self, offset: T, scale: T) -> Self {
        if self.is_empty() {
            return *self;
        }
        Self::new(offset + scale * self.lower, offset + scale * self.upper)
    }
}

pub fn compute_score<T: Scalar>(ctx: &ScoreContext<T>, y: T) -> Result<T> {
    Ok(match *ctx {
        ScoreContext::Absolute { point_prediction } => (point_prediction - y).abs(),
        ScoreContext::Normalized { sigma2_hat } => {
            if !(sigma2_hat > T::zero()) {
                return Err(Error::Domain(format!(
                    "normalized score needs a positive variance forecast, got {sigma2_hat}"
                )));
            }
            (y - sigma2_hat).abs() / sigma2_hat
        }
        ScoreContext::Cqr { q_lo, q_hi } => (q_lo - y).max(y - q_hi),
    })
}

/// The set {y : score(y) ≤ threshold} as an explicit interval.
pub fn invert_to_interval<T: Scalar>(ctx: &ScoreContext<T>, threshold: T) -> PredictionInterval<T> {
    if threshold == T::infinity() {
        return PredictionInterval::whole_line();
    }
    if threshold == T::neg_infinity() || threshold.is_nan() {
        return PredictionInterval::empty();
    }
    let q = threshold;
    match *ctx {
        ScoreContext::Absolute { point_prediction } => {
            if q < T::zero() {
                PredictionInterval::empty()
            } else {
                PredictionInterval::new(point_prediction - q, point_prediction + q)
            }
        }
        ScoreContext::Normalized { sigma2_hat } => {
            if q < T::zero() {
                PredictionInterval::empty()
            } else {
                let lower = (sigma2_hat * (T::one() - q)).max(T::zero());
                PredictionInterval::new(lower, sigma2_hat * (T::one() + q))
            }
        }
        ScoreContext::Cqr { q_lo, q_hi } => PredictionInterval::new(q_lo - q, q_hi + q),
    }
}

pub fn err_indicator<T: Scalar>(score: T, threshold: T) -> ErrBit {
    ErrBit(score > threshold)
}
