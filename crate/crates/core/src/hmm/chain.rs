//! Finite Markov chains: construction, stationary distribution, spectral gap.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Row sums must match 1 to this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Detailed-balance tolerance for the reversibility check.
pub const REVERSIBILITY_TOL: f64 = 1e-9;
/// Rows of P^k agreeing to this tolerance count as converged.
const STATIONARY_TOL: f64 = 1e-12;
/// 2^17 > 10^5 steps of power iteration.
const MAX_SQUARINGS: usize = 17;

/// P = (p − (1−p)/(n−1)) I + ((1−p)/(n−1)) 11ᵀ: stay with probability p,
/// otherwise move uniformly to another state.
pub fn symmetric_chain(n: usize, p: f64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::Domain(format!(
            "symmetric chain needs n ≥ 2 states, got {n}"
        )));
    }
    let lo = 1.0 / n as f64;
    if !(p > lo && p < 1.0) {
        return Err(Error::Domain(format!(
            "stay probability must lie in ({lo}, 1), got {p}"
        )));
    }
    let off = (1.0 - p) / (n - 1) as f64;
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { p } else { off }))
}

pub fn validate_transition(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() == 0 || !p.is_square() {
        return Err(Error::Domain(format!(
            "transition matrix must be square and nonempty, got {}×{}",
            p.nrows(),
            p.ncols()
        )));
    }
    for (i, row) in p.row_iter().enumerate() {
        if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Domain(format!(
                "row {i} has a negative or non-finite entry"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Domain(format!("row {i} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Stationary distribution by repeated squaring of P. Fails with an
/// ergodicity error if the rows of P^k have not agreed after 2^17 steps,
/// which catches reducible and periodic chains.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    validate_transition(p)?;
    let mut m = p.clone();
    for _ in 0..=MAX_SQUARINGS {
        let first = m.row(0).into_owned();
        let spread = m
            .row_iter()
            .map(|r| (r - &first).amax())
            .fold(0.0, f64::max);
        if spread <= STATIONARY_TOL {
            let pi = first.transpose();
            let total = pi.sum();
            return Ok(pi / total);
        }
        m = &m * &m;
    }
    Err(Error::Ergodicity(
        "power iteration did not converge within 1e5 steps".into(),
    ))
}

/// Absolute spectral gap 1 − η of a reversible chain, η being the largest
/// absolute eigenvalue on mean-zero functions.
pub fn spectral_gap(p: &DMatrix<f64>) -> Result<f64> {
    let pi = stationary_distribution(p)?;
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let flow = pi[i] * p[(i, j)];
            let back = pi[j] * p[(j, i)];
            if (flow - back).abs() > REVERSIBILITY_TOL {
                return Err(Error::UnsupportedChain(format!(
                    "chain is not reversible: π_{i}P_{i}{j} = {flow} but π_{j}P_{j}{i} = {back}"
                )));
            }
        }
    }
    let root: DVector<f64> = pi.map(f64::sqrt);
    let mut s = DMatrix::from_fn(n, n, |i, j| root[i] * p[(i, j)] / root[j]);
    // symmetrize away rounding, then remove the eigenvalue 1 carried by √π
    s = (&s + s.transpose()) * 0.5;
    s -= &root * root.transpose();
    let eig = SymmetricEigen::new(s);
    let eta = eig.eigenvalues.amax();
    Ok(1.0 - eta)
}
