//! Population-biased county orderings.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::error::{Error, Result};

/// Counties are drawn without replacement with probability proportional to
/// exp(σ·population). σ = ∞ orders them exactly by decreasing population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderingSpec {
    pub sigma: f64,
}

impl OrderingSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!(
                "ordering sigma must be nonnegative, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn uniform() -> Self {
        Self { sigma: 0.0 }
    }

    pub fn by_population() -> Self {
        Self {
            sigma: f64::INFINITY,
        }
    }
}

/// A permutation of `0..populations.len()` giving the arrival order.
///
/// Sorting by σ·population + G with i.i.d. standard Gumbel G has the same
/// law as sequential weighted sampling, and the keys never leave the log
/// domain, so large σ·population cannot overflow.
pub fn sample_ordering<R: Rng + ?Sized>(
    populations: &[f64],
    spec: OrderingSpec,
    rng: &mut R,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..populations.len()).collect();
    if spec.sigma == f64::INFINITY {
        order.sort_by(|&i, &j| populations[j].total_cmp(&populations[i]));
        return order;
    }
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let keys: Vec<f64> = populations
        .iter()
        .map(|&p| spec.sigma * p + gumbel.sample(rng))
        .collect();
    order.sort_by(|&i, &j| keys[j].total_cmp(&keys[i]));
    order
}
