//! Linear quantile regression by a primal-dual interior point method.
//!
//! The fit solves the dual linear program
//!
//! ```text
//! max y'x  subject to  X'x = (1 − τ) X'1,  0 ≤ x ≤ 1
//! ```
//!
//! with Mehrotra predictor-corrector steps. The regression coefficients are
//! the negated equality multipliers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const STEP_FRACTION: f64 = 0.99995;
const GAP_TOL: f64 = 1e-9;
const RIDGE: f64 = 1e-8;
/// Columns whose standard deviation is below this fraction of their scale
/// are treated as constant.
const CONSTANT_COLUMN_TOL: f64 = 1e-12;

/// p·u for u ≥ 0, (p − 1)·u otherwise.
pub fn pinball_loss(residual: f64, level: f64) -> f64 {
    if residual >= 0.0 {
        level * residual
    } else {
        (level - 1.0) * residual
    }
}

/// Mean pinball loss of `responses − intercept − design·coefficients`.
pub fn mean_pinball(
    design: &DMatrix<f64>,
    responses: &[f64],
    level: f64,
    intercept: f64,
    coefficients: &[f64],
) -> f64 {
    let n = responses.len();
    (0..n)
        .map(|i| {
            let fit = intercept
                + (0..coefficients.len())
                    .map(|j| design[(i, j)] * coefficients[j])
                    .sum::<f64>();
            pinball_loss(responses[i] - fit, level)
        })
        .sum::<f64>()
        / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QrModel {
    pub level: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// True when a ridge term was needed because the design was singular.
    pub regularized: bool,
}

impl QrModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }
}

/// Fits the `level` conditional quantile of `responses` on an intercept plus
/// the columns of `design`.
///
/// Columns are standardized internally; the returned coefficients are on the
/// original scale. Constant columns get coefficient 0 and mark the model as
/// regularized.
pub fn fit_quantile_regression(
    design: &DMatrix<f64>,
    responses: &[f64],
    level: f64,
) -> Result<QrModel> {
    let n = design.nrows();
    let d = design.ncols();
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "quantile level must lie in (0,1), got {level}"
        )));
    }
    if responses.len() != n {
        return Err(Error::Config(format!(
            "{} responses for {n} design rows",
            responses.len()
        )));
    }
    if n < d + 1 {
        return Err(Error::Degenerate(format!(
            "{n} observations cannot identify {} coefficients",
            d + 1
        )));
    }
    if responses.iter().any(|y| !y.is_finite()) || design.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(
            "quantile regression inputs must be finite".into(),
        ));
    }

    let mut means = vec![0.0; d];
    let mut scales = vec![0.0; d];
    let mut constant = false;
    for j in 0..d {
        let col = design.column(j);
        let m = col.mean();
        let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
        means[j] = m;
        if sd > CONSTANT_COLUMN_TOL * m.abs().max(1.0) {
            scales[j] = sd;
        } else {
            constant = true;
        }
    }
    // A = X' with X = [1, standardized design]; constant columns are zeroed.
    let p = d + 1;
    let a = DMatrix::from_fn(p, n, |k, i| {
        if k == 0 {
            1.0
        } else if scales[k - 1] > 0.0 {
            (design[(i, k - 1)] - means[k - 1]) / scales[k - 1]
        } else {
            0.0
        }
    });
    let y = DVector::from_column_slice(responses);
    let (beta, ridged) = solve_dual(&a, &y, level)?;

    let mut coefficients = vec![0.0; d];
    let mut intercept = beta[0];
    for j in 0..d {
        if scales[j] > 0.0 {
            coefficients[j] = beta[j + 1] / scales[j];
            intercept -= coefficients[j] * means[j];
        }
    }
    Ok(QrModel {
        level,
        intercept,
        coefficients,
        regularized: constant || ridged,
    })
}

/// Solves M v = rhs for symmetric positive (semi)definite M, adding a small
/// relative ridge when the Cholesky factorization fails.
fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, ridged: &mut bool) -> Result<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    let scale = m.diagonal().amax().max(1.0);
    let mut reg = m.clone();
    for k in 0..reg.nrows() {
        reg[(k, k)] += RIDGE * scale;
    }
    *ridged = true;
    reg.cholesky().map(|ch| ch.solve(rhs)).ok_or_else(|| {
        Error::Degenerate("design is singular even after ridge regularization".into())
    })
}

/// Largest step in (0, 1] keeping v + step·dv nonnegative.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

/// Returns β and whether a ridge was used.
fn solve_dual(a: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<(DVector<f64>, bool)> {
    let (p, n) = a.shape();
    let mut ridged = false;
    let c = -y;
    let b = a * DVector::from_element(n, 1.0 - tau);

    // least-squares start for the multipliers
    let gram = a * a.transpose();
    let beta_ls = spd_solve(&gram, &(a * y), &mut ridged)?;
    let resid = y - a.transpose() * &beta_ls;
    let delta = 0.1 * resid.abs().mean() + 1e-8;
    let mut lambda = -beta_ls;
    let mut x = DVector::from_element(n, 1.0 - tau);
    let mut s = DVector::from_element(n, tau);
    // dual feasibility A'λ + z − w = c holds exactly: w − z = resid
    let mut z = resid.map(|r| (-r).max(0.0) + delta);
    let mut w = resid.map(|r| r.max(0.0) + delta);

    let tol = GAP_TOL * (1.0 + y.abs().sum());
    for _ in 0..MAX_ITERATIONS {
        let gap = x.dot(&z) + s.dot(&w);
        if gap < tol {
            break;
        }
        let rp = &b - a * &x;
        let rd = &c - a.transpose() * &lambda - &z + &w;
        let q = DVector::from_fn(n, |i, _| z[i] / x[i] + w[i] / s[i]);
        let qinv = q.map(|v| 1.0 / v);
        let mut m = DMatrix::zeros(p, p);
        for i in 0..n {
            let col = a.column(i);
            let wi = qinv[i];
            for j in 0..p {
                let aj = col[j] * wi;
                for k in j..p {
                    m[(j, k)] += aj * col[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                m[(j, k)] = m[(k, j)];
            }
        }

        let newton = |r3: &DVector<f64>,
                      r4: &DVector<f64>,
                      ridged: &mut bool|
         -> Result<[DVector<f64>; 4]> {
            let r = DVector::from_fn(n, |i, _| rd[i] - r3[i] / x[i] + r4[i] / s[i]);
            let qr = r.component_mul(&qinv);
            let dlambda = spd_solve(&m, &(&rp + a * &qr), ridged)?;
            let dx = (a.transpose() * &dlambda - &r).component_mul(&qinv);
            let dz = DVector::from_fn(n, |i, _| (r3[i] - z[i] * dx[i]) / x[i]);
            let dw = DVector::from_fn(n, |i, _| (r4[i] + w[i] * dx[i]) / s[i]);
            Ok([dlambda, dx, dz, dw])
        };
        let steps = |dx: &DVector<f64>, dz: &DVector<f64>, dw: &DVector<f64>| {
            let primal = max_step(&x, dx).min(max_step(&s, &(-dx)));
            let dual = max_step(&z, dz).min(max_step(&w, dw));
            (primal, dual)
        };

        // predictor
        let r3 = -x.component_mul(&z);
        let r4 = -s.component_mul(&w);
        let [_, dxa, dza, dwa] = newton(&r3, &r4, &mut ridged)?;
        let (ap, ad) = steps(&dxa, &dza, &dwa);
        let mu = gap / (2 * n) as f64;
        let mu_aff = ((&x + ap * &dxa).dot(&(&z + ad * &dza))
            + (&s - ap * &dxa).dot(&(&w + ad * &dwa)))
            / (2 * n) as f64;
        let sigma = (mu_aff / mu).powi(3);

        // corrector
        let r3 = DVector::from_fn(n, |i, _| sigma * mu - x[i] * z[i] - dxa[i] * dza[i]);
        let r4 = DVector::from_fn(n, |i, _| sigma * mu - s[i] * w[i] + dxa[i] * dwa[i]);
        let [dlambda, dx, dz, dw] = newton(&r3, &r4, &mut ridged)?;
        let (ap, ad) = steps(&dx, &dz, &dw);
        let (ap, ad) = ((STEP_FRACTION * ap).min(1.0), (STEP_FRACTION * ad).min(1.0));
        x += ap * &dx;
        s -= ap * &dx;
        lambda += ad * &dlambda;
        z += ad * &dz;
        w += ad * &dw;
    }
    Ok((-lambda, ridged))
}
