//! Adaptive conformal inference: online recalibration of conformal
//! prediction intervals under distribution shift.
//!
//! The level-update and scoring code is generic over the
//! floating point type through [`Scalar`]; the experiment pipelines work in
//! `f64`. The aliases below fix the scalar for the common cases.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aci;
pub mod cli;
pub mod conformal;
pub mod election;
pub mod error;
pub mod hmm;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod volatility;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type AciConfig64 = aci::AciConfig<f64>;
pub type AciConfig32 = aci::AciConfig<f32>;
pub type AciState64 = aci::AciState<f64>;
pub type AciState32 = aci::AciState<f32>;
pub type UpdateRule64 = aci::UpdateRule<f64>;
pub type PredictionInterval64 = conformal::PredictionInterval<f64>;
pub type ScoreContext64 = conformal::ScoreContext<f64>;
pub type CalibrationScores64 = conformal::CalibrationScores<f64>;
pub type TrajectoryReport64 = metrics::TrajectoryReport<f64>;
