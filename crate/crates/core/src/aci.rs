//! The adaptive miscoverage level α_t and its online update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default step size γ.
pub const DEFAULT_STEP_SIZE: f64 = 0.005;
/// Default decay of the weighted rule.
pub const DEFAULT_DECAY: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateRule<T> {
    /// α_{t+1} = α_t + γ(α − err_t)
    Simple,
    /// α_{t+1} = α_t + γ(α − W_t) where W_t is the decay-weighted mean of past errors.
    WeightedGeometric { decay: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AciConfig<T> {
    pub target_miscoverage: T,
    pub step_size: T,
    pub initial_level: T,
    pub update_rule: UpdateRule<T>,
}

impl<T: Scalar> AciConfig<T> {
    /// Validated constructor.
    pub fn new(alpha: T, gamma: T, initial_level: T, update_rule: UpdateRule<T>) -> Result<Self> {
        let cfg = Self {
            target_miscoverage: alpha,
            step_size: gamma,
            initial_level,
            update_rule,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Simple rule starting at α₁ = α.
    pub fn simple(alpha: T, gamma: T) -> Result<Self> {
        Self::new(alpha, gamma, alpha, UpdateRule::Simple)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.target_miscoverage;
        if !(a > T::zero() && a < T::one()) {
            return Err(Error::Config(format!(
                "target miscoverage must lie in (0,1), got {a}"
            )));
        }
        if !(self.step_size >= T::zero()) || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "step size must be finite and nonnegative, got {}",
                self.step_size
            )));
        }
        let a1 = self.initial_level;
        if !(a1 >= T::zero() && a1 <= T::one()) {
            return Err(Error::Config(format!(
                "initial level must lie in [0,1], got {a1}"
            )));
        }
        if let UpdateRule::WeightedGeometric { decay } = self.update_rule {
            if !(decay > T::zero() && decay < T::one()) {
                return Err(Error::Config(format!(
                    "decay must lie in (0,1), got {decay}"
                )));
            }
        }
        Ok(())
    }

    /// Effective memory of the update rule: 1/(1 − decay) for the weighted
    /// rule and 1 for the simple rule.
    pub fn memory(&self) -> T {
        match self.update_rule {
            UpdateRule::Simple => T::one(),
            UpdateRule::WeightedGeometric { decay } => T::one() / (T::one() - decay),
        }
    }

    /// Range every α_t is guaranteed to stay in: [−γ, 1+γ] for the simple
    /// rule, [−γK, 1+γK] with K = 1/(1 − decay) for the weighted rule.
    pub fn level_bounds(&self) -> (T, T) {
        let slack = self.step_size * self.memory();
        (-slack, T::one() + slack)
    }
}

/// Binary miscoverage indicator err_t.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ErrBit(pub bool);

impl ErrBit {
    pub const COVERED: ErrBit = ErrBit(false);
    pub const MISSED: ErrBit = ErrBit(true);

    #[inline]
    pub fn value(self) -> u8 {
        self.0 as u8
    }

    #[inline]
    pub fn as_scalar<T: Scalar>(self) -> T {
        if self.0 {
            T::one()
        } else {
            T::zero()
        }
    }
}

impl From<bool> for ErrBit {
    fn from(b: bool) -> Self {
        ErrBit(b)
    }
}

/// The level at which the conformal quantile is taken, with the
/// out-of-range conventions made explicit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtendedLevel<T> {
    /// α_t < 0: threshold +∞, the set is the whole line and err is 0.
    CoverEverything,
    /// α_t > 1: threshold −∞, the set is empty and err is 1.
    CoverNothing,
    /// Quantile level 1 − α_t ∈ \[0,1\].
    Level(T),
}

impl<T: Scalar> ExtendedLevel<T> {
    /// The err value this level forces, if any.
    pub fn forced_err(self) -> Option<ErrBit> {
        match self {
            ExtendedLevel::CoverEverything => Some(ErrBit::COVERED),
            ExtendedLevel::CoverNothing => Some(ErrBit::MISSED),
            ExtendedLevel::Level(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AciState<T> {
    pub current_level: T,
    /// 1-based index of the step whose level is `current_level`.
    pub step_index: u64,
    pub weighted_err_numerator: T,
    pub weighted_err_denominator: T,
    pub cumulative_err_count: u64,
    pub config: AciConfig<T>,
}

/// Fresh state at t = 1.
pub fn init<T: Scalar>(config: AciConfig<T>) -> Result<AciState<T>> {
    config.validate()?;
    Ok(AciState {
        current_level: config.initial_level,
        step_index: 1,
        weighted_err_numerator: T::zero(),
        weighted_err_denominator: T::zero(),
        cumulative_err_count: 0,
        config,
    })
}

impl<T: Scalar> AciState<T> {
    pub fn effective_quantile_level(&self) -> ExtendedLevel<T> {
        let a = self.current_level;
        if a < T::zero() {
            ExtendedLevel::CoverEverything
        } else if a > T::one() {
            ExtendedLevel::CoverNothing
        } else {
            ExtendedLevel::Level(T::one() - a)
        }
    }

    /// Advances one step. When the current level forces err (α_t outside
    /// \[0,1\]) the forced value replaces `err`.
    pub fn update(&self, err: ErrBit) -> AciState<T> {
        let err = match self.effective_quantile_level().forced_err() {
            Some(forced) => {
                if forced != err {
                    log::debug!(
                        "step {}: err {} overridden by forced value {}",
                        self.step_index,
                        err.value(),
                        forced.value()
                    );
                }
                forced
            }
            None => err,
        };
        let cfg = &self.config;
        let e = err.as_scalar::<T>();
        let mut next = *self;
        let signal = match cfg.update_rule {
            UpdateRule::Simple => e,
            UpdateRule::WeightedGeometric { decay } => {
                next.weighted_err_numerator = decay * self.weighted_err_numerator + e;
                next.weighted_err_denominator = decay * self.weighted_err_denominator + T::one();
                next.weighted_err_numerator / next.weighted_err_denominator
            }
        };
        next.current_level = self.current_level + cfg.step_size * (cfg.target_miscoverage - signal);
        next.step_index += 1;
        next.cumulative_err_count += err.value() as u64;
        next
    }

    /// Number of completed steps, t − 1.
    pub fn steps_taken(&self) -> u64 {
        self.step_index - 1
    }

    pub fn empirical_miscoverage(&self) -> Result<T> {
        if self.step_index < 2 {
            return Err(Error::NoData("no steps have been taken".into()));
        }
        Ok(T::lit(self.cumulative_err_count as f64) / T::lit(self.steps_taken() as f64))
    }
}

/// Free-function form of [`AciState::update`].
pub fn update<T: Scalar>(state: &AciState<T>, err: ErrBit) -> AciState<T> {
    state.update(err)
}

/// Free-function form of [`AciState::effective_quantile_level`].
pub fn effective_quantile_level<T: Scalar>(state: &AciState<T>) -> ExtendedLevel<T> {
    state.effective_quantile_level()
}

/// Free-function form of [`AciState::empirical_miscoverage`].
pub fn empirical_miscoverage<T: Scalar>(state: &AciState<T>) -> Result<T> {
    state.empirical_miscoverage()
}

/// Deterministic bound on |T⁻¹ Σ err_t − α| after `horizon` steps.
///
/// Simple rule: (max{α₁, 1−α₁} + γ)/(Tγ).
///
/// Weighted rule: the level range widens to [−γK, 1+γK], and the gap between
/// Σ W_t and Σ err_t adds at most max(S_T, E_T) where
/// S_T = Σ_{j=1..T} decay^j and E_T = Σ_{s=1..T} decay^s/(1 − decay^s), giving
/// (max{α₁, 1−α₁} + γK)/(Tγ) + max(S_T, E_T)/T.
pub fn prop_bound<T: Scalar>(config: &AciConfig<T>, horizon: u64) -> Result<T> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let gamma = config.step_size;
    if !(gamma > T::zero()) {
        return Err(Error::Domain(
            "coverage bound is undefined for step size 0".into(),
        ));
    }
    let a1 = config.initial_level;
    let t = T::lit(horizon as f64);
    let reach = a1.max(T::one() - a1);
    let base = (reach + gamma * config.memory()) / (t * gamma);
    match config.update_rule {
        UpdateRule::Simple => Ok(base),
        UpdateRule::WeightedGeometric { decay } => {
            let (tail, head) = weighting_slack(decay.as_f64(), horizon);
            Ok(base + T::lit(tail.max(head)) / t)
        }
    }
}

/// (S_T, E_T) for the weighted rule; both sums converge, so the loop stops
/// once terms are negligible.
fn weighting_slack(decay: f64, horizon: u64) -> (f64, f64) {
    let mut tail = 0.0;
    let mut head = 0.0;
    let mut pow = 1.0;
    for _ in 0..horizon {
        pow *= decay;
        tail += pow;
        head += pow / (1.0 - pow);
        if pow < 1e-18 {
            break;
        }
    }
    (tail, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(alpha: f64, gamma: f64, a1: f64) -> AciConfig<f64> {
        AciConfig::new(alpha, gamma, a1, UpdateRule::Simple).unwrap()
    }

    #[test]
    fn init_examples() {
        let s = init(cfg(0.1, 0.005, 0.1)).unwrap();
        assert_eq!(s.current_level, 0.1);
        assert_eq!(s.step_index, 1);
        assert_eq!(s.cumulative_err_count, 0);
        let s = init(cfg(0.05, 0.0, 0.05)).unwrap();
        assert_eq!(s.update(ErrBit::MISSED).current_level, 0.05);
        assert!(matches!(
            AciConfig::new(0.1, 0.005, 1.5, UpdateRule::Simple),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_rejects_bad_fields() {
        assert!(AciConfig::new(0.0, 0.005, 0.1, UpdateRule::Simple).is_err());
        assert!(AciConfig::new(1.0, 0.005, 0.1, UpdateRule::Simple).is_err());
        assert!(AciConfig::new(0.1, -0.1, 0.1, UpdateRule::Simple).is_err());
        assert!(AciConfig::new(0.1, f64::NAN, 0.1, UpdateRule::Simple).is_err());
        assert!(AciConfig::new(
            0.1,
            0.005,
            0.1,
            UpdateRule::WeightedGeometric { decay: 1.0 }
        )
        .is_err());
    }

    #[test]
    fn effective_level_examples() {
        let mut s = init(cfg(0.1, 0.005, 0.1)).unwrap();
        assert_eq!(s.effective_quantile_level(), ExtendedLevel::Level(0.9));
        s.current_level = -0.002;
        assert_eq!(s.effective_quantile_level(), ExtendedLevel::CoverEverything);
        s.current_level = 1.01;
        assert_eq!(s.effective_quantile_level(), ExtendedLevel::CoverNothing);
    }

    #[test]
    fn simple_update_examples() {
        let s = init(cfg(0.1, 0.005, 0.1)).unwrap();
        assert!((s.update(ErrBit::COVERED).current_level - 0.1005).abs() < 1e-15);
        let n = s.update(ErrBit::MISSED);
        assert!((n.current_level - 0.0955).abs() < 1e-15);
        assert_eq!(n.step_index, 2);
        assert_eq!(n.cumulative_err_count, 1);
    }

    #[test]
    fn forced_err_overrides_caller() {
        let mut s = init(cfg(0.1, 0.005, 0.1)).unwrap();
        s.current_level = -0.002;
        let n = s.update(ErrBit::MISSED);
        assert_eq!(n.cumulative_err_count, 0);
        assert!((n.current_level - (-0.002 + 0.0005)).abs() < 1e-15);
        s.current_level = 1.01;
        let n = s.update(ErrBit::COVERED);
        assert_eq!(n.cumulative_err_count, 1);
    }

    /// W_t recomputed as the literal normalized weighted sum over all past errors.
    fn weighted_oracle(errs: &[bool], alpha: f64, gamma: f64, a1: f64, decay: f64) -> Vec<f64> {
        let mut levels = vec![a1];
        let mut seen = Vec::with_capacity(errs.len());
        for t in 0..errs.len() {
            let last = *levels.last().unwrap();
            let e = if last < 0.0 {
                false
            } else if last > 1.0 {
                true
            } else {
                errs[t]
            };
            seen.push(e);
            let mut num = 0.0;
            let mut den = 0.0;
            for s in 0..=t {
                let w = decay.powi((t - s) as i32);
                num += w * seen[s] as u8 as f64;
                den += w;
            }
            levels.push(last + gamma * (alpha - num / den));
        }
        levels
    }

    #[test]
    fn weighted_example_matches_hand_arithmetic() {
        let c = AciConfig::<f64>::new(
            0.1,
            0.005,
            0.1,
            UpdateRule::WeightedGeometric { decay: 0.95 },
        )
        .unwrap();
        let s = init(c)
            .unwrap()
            .update(ErrBit::MISSED)
            .update(ErrBit::COVERED);
        let w2 = s.weighted_err_numerator / s.weighted_err_denominator;
        assert!((w2 - 0.95 / 1.95).abs() < 1e-15);
        let expected = 0.0955 + 0.005 * (0.1 - 0.95 / 1.95);
        assert!((s.current_level - expected).abs() < 1e-15);
        assert!((s.current_level - 0.0935641).abs() < 1e-7);
    }

    #[test]
    fn weighted_first_step_matches_simple() {
        for e in [ErrBit::COVERED, ErrBit::MISSED] {
            let simple = init(cfg(0.1, 0.01, 0.3)).unwrap().update(e);
            let w = AciConfig::new(0.1, 0.01, 0.3, UpdateRule::WeightedGeometric { decay: 0.9 })
                .unwrap();
            let weighted = init(w).unwrap().update(e);
            assert_eq!(simple.current_level, weighted.current_level);
        }
    }

    #[test]
    fn empirical_miscoverage_examples() {
        let mut s = init(cfg(0.1, 0.005, 0.1)).unwrap();
        assert!(matches!(s.empirical_miscoverage(), Err(Error::NoData(_))));
        for i in 0..10 {
            s = s.update(ErrBit(i < 3));
        }
        assert!((s.empirical_miscoverage().unwrap() - 0.3).abs() < 1e-15);
        let mut s = init(cfg(0.1, 0.005, 0.1)).unwrap();
        for _ in 0..5 {
            s = s.update(ErrBit::COVERED);
        }
        assert_eq!(s.empirical_miscoverage().unwrap(), 0.0);
    }

    #[test]
    fn prop_bound_examples() {
        let b = prop_bound(&cfg(0.1, 0.005, 0.1), 200).unwrap();
        assert!((b - 0.905).abs() < 1e-12);
        let b = prop_bound(&cfg(0.5, 0.01, 0.5), 1).unwrap();
        assert!((b - 51.0).abs() < 1e-12);
        let b = prop_bound(&cfg(0.1, 0.005, 0.1), 2500).unwrap();
        assert!((b - 0.0724).abs() < 1e-12);
        assert!(matches!(
            prop_bound(&cfg(0.1, 0.0, 0.1), 10),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let c = AciConfig::<f32>::simple(0.1, 0.005).unwrap();
        let s = init(c).unwrap().update(ErrBit::COVERED);
        assert!((s.current_level - 0.1005).abs() < 1e-6);
        assert!((prop_bound(&c, 200).unwrap() - 0.905).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn weighted_recursion_matches_literal_sum(
            errs in proptest::collection::vec(any::<bool>(), 1..200),
            decay in 0.5f64..0.99,
        ) {
            let c = AciConfig::new(0.1, 0.005, 0.1, UpdateRule::WeightedGeometric { decay }).unwrap();
            let oracle = weighted_oracle(&errs, 0.1, 0.005, 0.1, decay);
            let mut s = init(c).unwrap();
            for (t, &e) in errs.iter().enumerate() {
                s = s.update(ErrBit(e));
                prop_assert!((s.current_level - oracle[t + 1]).abs() < 1e-12);
            }
        }

        #[test]
        fn miss_strictly_lowers_level(a1 in 0.0f64..=1.0, gamma in 1e-4f64..0.5, steps in 0usize..20) {
            let mut s = init(cfg(0.1, gamma, a1)).unwrap();
            for i in 0..steps {
                s = s.update(ErrBit(i % 3 == 0));
            }
            if s.effective_quantile_level().forced_err().is_none() {
                prop_assert!(s.update(ErrBit::MISSED).current_level < s.update(ErrBit::COVERED).current_level);
            }
        }

        #[test]
        fn levels_and_coverage_stay_bounded(
            seq in proptest::collection::vec(any::<bool>(), 1..2000),
            alpha in 0.01f64..0.99,
            gamma in 1e-3f64..0.3,
            a1 in 0.0f64..=1.0,
            weighted in any::<bool>(),
            decay in 0.3f64..0.98,
        ) {
            let rule = if weighted { UpdateRule::WeightedGeometric { decay } } else { UpdateRule::Simple };
            let c = AciConfig::new(alpha, gamma, a1, rule).unwrap();
            let (lo, hi) = c.level_bounds();
            let mut s = init(c).unwrap();
            for (t, &e) in seq.iter().enumerate() {
                s = s.update(ErrBit(e));
                prop_assert!(s.current_level >= lo - 1e-12 && s.current_level <= hi + 1e-12);
                let gap = (s.empirical_miscoverage().unwrap() - alpha).abs();
                prop_assert!(gap <= prop_bound(&c, t as u64 + 1).unwrap() + 1e-12);
            }
        }

        #[test]
        fn zero_step_size_freezes_level(seq in proptest::collection::vec(any::<bool>(), 1..100), a1 in 0.0f64..=1.0) {
            let mut s = init(cfg(0.2, 0.0, a1)).unwrap();
            for &e in &seq {
                s = s.update(ErrBit(e));
                prop_assert_eq!(s.current_level, a1);
            }
        }
    }
}
