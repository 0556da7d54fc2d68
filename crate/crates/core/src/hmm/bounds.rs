//! Closed-form evaluators for the coverage guarantees.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance of [`lattice_check`].
pub const LATTICE_TOL: f64 = 1e-9;

/// P(|T⁻¹ Σ err_t − α| ≥ ε) ≤ 2exp(−Tε²/8) + 2exp(−T(1−η)ε² / (8(1+η)σ²_B + 40Bε)).
pub fn large_deviation_rhs<T: Scalar>(
    horizon: u64,
    epsilon: T,
    eta: T,
    sigma_b2: T,
    b: T,
) -> Result<T> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    if !(epsilon > T::zero()) {
        return Err(Error::Domain(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(eta >= T::zero() && eta < T::one()) {
        return Err(Error::Domain(format!("eta must lie in [0,1), got {eta}")));
    }
    if !(sigma_b2 >= T::zero() && b >= T::zero()) {
        return Err(Error::Domain("bias terms must be nonnegative".into()));
    }
    let t = T::lit(horizon as f64);
    let two = T::lit(2.0);
    let eps2 = epsilon * epsilon;
    let first = two * (-(t * eps2) / T::lit(8.0)).exp();
    let denom = T::lit(8.0) * (T::one() + eta) * sigma_b2 + T::lit(40.0) * b * epsilon;
    let second = if denom > T::zero() {
        two * (-(t * (T::one() - eta) * eps2) / denom).exp()
    } else {
        T::zero()
    };
    Ok(first + second)
}

/// L(1+γ)/γ · E|α*_{A_{t+1}} − α*_{A_t}| + Lγ/2.
pub fn regret_rhs<T: Scalar>(lipschitz: T, gamma: T, delta_mean: T) -> Result<T> {
    if !(gamma > T::zero()) {
        return Err(Error::Domain(format!(
            "step size must be positive, got {gamma}"
        )));
    }
    if !(lipschitz > T::zero()) || !(delta_mean >= T::zero()) {
        return Err(Error::Domain("need L > 0 and a nonnegative shift".into()));
    }
    Ok(lipschitz * (T::one() + gamma) / gamma * delta_mean + lipschitz * gamma / T::lit(2.0))
}

/// Step size √(2 E|Δα*|) minimizing the dominant terms of [`regret_rhs`].
pub fn gamma_star<T: Scalar>(delta_mean: T) -> Result<T> {
    if !(delta_mean >= T::zero()) {
        return Err(Error::Domain(format!(
            "shift must be nonnegative, got {delta_mean}"
        )));
    }
    Ok((T::lit(2.0) * delta_mean).sqrt())
}

/// E\[err_t\] = α + (1−γ)^{t−1}(α₁ − α) when M(p) = p.
pub fn ideal_expectation<T: Scalar>(t: u64, alpha1: T, gamma: T, alpha: T) -> Result<T> {
    if t == 0 {
        return Err(Error::Domain("t is 1-based".into()));
    }
    let decay = (T::one() - gamma).powf(T::lit((t - 1) as f64));
    Ok(alpha + decay * (alpha1 - alpha))
}

/// C(γ + γ⁻¹(ε₁ + ε₂)).
pub fn bias_upper_bound<T: Scalar>(c: T, gamma: T, eps1: T, eps2: T) -> Result<T> {
    if !(gamma > T::zero()) {
        return Err(Error::Domain(format!(
            "step size must be positive, got {gamma}"
        )));
    }
    if !(c >= T::zero() && eps1 >= T::zero() && eps2 >= T::zero()) {
        return Err(Error::Domain("constants must be nonnegative".into()));
    }
    Ok(c * (gamma + (eps1 + eps2) / gamma))
}

/// Whether every level sits within 1e−9 of {α + kγα : k ∈ ℤ}.
pub fn lattice_check<T: Scalar>(alphas: &[T], alpha: T, gamma: T) -> bool {
    let spacing = gamma * alpha;
    let tol = T::lit(LATTICE_TOL);
    alphas.iter().all(|&a| {
        let k = ((a - alpha) / spacing).round();
        (a - (alpha + k * spacing)).abs() <= tol
    })
}
