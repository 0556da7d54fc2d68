//! Gaussian GARCH(1,1): likelihood, variance recursion and maximum-likelihood fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conditional variances below this are treated as a numerical failure.
pub const SIGMA2_FLOOR: f64 = 1e-12;
/// Shortest series [`fit_garch`] accepts.
pub const MIN_FIT_LEN: usize = 30;
/// Iteration cap per optimizer start.
pub const MAX_ITERATIONS: usize = 500;
/// Sup-norm of the gradient of the mean negative log-likelihood, in the
/// transformed coordinates, at which a start counts as converged.
pub const GRADIENT_TOL: f64 = 1e-5;

/// (a, b) start points; ω is set so the start matches the sample variance.
const STARTS: [(f64, f64); 4] = [(0.05, 0.90), (0.10, 0.80), (0.20, 0.50), (0.05, 0.10)];

/// Converged starts whose mean nll differs by less than this are treated as
/// tied, and the lower-persistence one wins. When a ≈ 0 the likelihood is
/// flat along b, so without this the reported b depends on the start.
const TIE_TOL: f64 = 1e-7;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub arch_coef: f64,
    pub garch_coef: f64,
}

impl GarchParams {
    pub fn new(omega: f64, arch_coef: f64, garch_coef: f64) -> Result<Self> {
        let p = Self {
            omega,
            arch_coef,
            garch_coef,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            omega,
            arch_coef: a,
            garch_coef: b,
        } = *self;
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::Domain(format!(
                "omega must be positive, got {omega}"
            )));
        }
        if !(a >= 0.0) || !(b >= 0.0) {
            return Err(Error::Domain(format!(
                "GARCH coefficients must be nonnegative, got a={a}, b={b}"
            )));
        }
        if !(a + b < 1.0) {
            return Err(Error::Domain(format!(
                "a + b must be below 1, got {}",
                a + b
            )));
        }
        Ok(())
    }

    pub fn persistence(&self) -> f64 {
        self.arch_coef + self.garch_coef
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.persistence())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarchFit {
    pub params: GarchParams,
    /// In-sample σ̂²_s, one per return.
    pub sigma2_path: Vec<f64>,
    pub neg_loglik: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl GarchFit {
    /// One-step forecast of the variance following the last fitted return.
    pub fn forecast(&self, last_return: f64) -> f64 {
        let last = *self.sigma2_path.last().expect("fit has a nonempty path");
        forecast_next_sigma2(&self.params, last_return * last_return, last)
    }
}

/// R_t = (P_t − P_{t−1}) / P_{t−1}.
pub fn returns_from_prices(prices: &[f64]) -> Result<Vec<f64>> {
    if let Some((i, p)) = prices
        .iter()
        .enumerate()
        .find(|(_, p)| !(**p > 0.0) || !p.is_finite())
    {
        return Err(Error::Domain(format!(
            "price {i} is {p}; prices must be positive"
        )));
    }
    if prices.len() < 2 {
        return Err(Error::NoData("need at least two prices".into()));
    }
    Ok(prices.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect())
}

/// σ² = ω + a·v_prev + b·σ²_prev.
pub fn forecast_next_sigma2(params: &GarchParams, v_prev: f64, sigma2_prev: f64) -> f64 {
    params.omega + params.arch_coef * v_prev + params.garch_coef * sigma2_prev
}

/// Sample variance with the n − 1 denominator (0 for a single value).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

/// Conditional variance path started at `sigma2_init`.
pub fn sigma2_path_with_initial(
    params: &GarchParams,
    returns: &[f64],
    sigma2_init: f64,
) -> Result<Vec<f64>> {
    let mut path = Vec::with_capacity(returns.len());
    let mut h = sigma2_init;
    for t in 0..returns.len() {
        if t > 0 {
            h = forecast_next_sigma2(params, returns[t - 1] * returns[t - 1], h);
        }
        if !(h >= SIGMA2_FLOOR) || !h.is_finite() {
            return Err(Error::Domain(format!(
                "conditional variance {h} at step {} is below 1e-12",
                t + 1
            )));
        }
        path.push(h);
    }
    Ok(path)
}

/// Conditional variance path started at the sample variance of `returns`.
pub fn sigma2_path(params: &GarchParams, returns: &[f64]) -> Result<Vec<f64>> {
    sigma2_path_with_initial(params, returns, sample_variance(returns))
}

/// 0.5 Σ_t [ln(2πσ_t²) + R_t²/σ_t²] with σ₁² = `sigma2_init`.
pub fn garch_neg_loglik_with_initial(
    params: &GarchParams,
    returns: &[f64],
    sigma2_init: f64,
) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::NoData("no returns".into()));
    }
    let path = sigma2_path_with_initial(params, returns, sigma2_init)?;
    Ok(0.5
        * returns
            .iter()
            .zip(&path)
            .map(|(r, h)| LN_2PI + h.ln() + r * r / h)
            .sum::<f64>())
}

/// Gaussian negative log-likelihood with σ₁² set to the sample variance.
pub fn garch_neg_loglik(params: &GarchParams, returns: &[f64]) -> Result<f64> {
    garch_neg_loglik_with_initial(params, returns, sample_variance(returns))
}

/// Unconstrained coordinates θ = (ln ω, θ_a, θ_b) with
/// (a, b) = (e^{θ_a}, e^{θ_b}) / (1 + e^{θ_a} + e^{θ_b}).
fn from_theta(theta: &[f64; 3]) -> GarchParams {
    // shift by the max exponent so large coordinates do not overflow
    let m = theta[1].max(theta[2]).max(0.0);
    let (e0, e1, e2) = ((-m).exp(), (theta[1] - m).exp(), (theta[2] - m).exp());
    let z = e0 + e1 + e2;
    GarchParams {
        omega: theta[0].exp(),
        arch_coef: e1 / z,
        garch_coef: e2 / z,
    }
}

fn to_theta(p: &GarchParams) -> [f64; 3] {
    let rest = 1.0 - p.arch_coef - p.garch_coef;
    [
        p.omega.ln(),
        (p.arch_coef / rest).ln(),
        (p.garch_coef / rest).ln(),
    ]
}

/// Mean negative log-likelihood and its gradient in θ, on returns `x` with
/// σ₁² = `h1`. Returns None when the variance path leaves the valid range.
fn objective(theta: &[f64; 3], x: &[f64], h1: f64) -> Option<(f64, [f64; 3])> {
    let p = from_theta(theta);
    let (omega, a, b) = (p.omega, p.arch_coef, p.garch_coef);
    let mut h = h1;
    let mut dh = [0.0f64; 3]; // ∂h/∂(ω, a, b)
    let mut f = 0.0;
    let mut g = [0.0f64; 3];
    for t in 0..x.len() {
        if t > 0 {
            let v = x[t - 1] * x[t - 1];
            dh = [1.0 + b * dh[0], v + b * dh[1], h + b * dh[2]];
            h = omega + a * v + b * h;
        }
        if !(h >= SIGMA2_FLOOR) || !h.is_finite() {
            return None;
        }
        let v = x[t] * x[t];
        f += h.ln() + v / h;
        let w = 1.0 / h - v / (h * h);
        for k in 0..3 {
            g[k] += w * dh[k];
        }
    }
    let scale = 0.5 / x.len() as f64;
    let f = scale * f + 0.5 * LN_2PI;
    let (gw, ga, gb) = (scale * g[0], scale * g[1], scale * g[2]);
    let grad = [
        gw * omega,
        ga * a * (1.0 - a) - gb * a * b,
        -ga * a * b + gb * b * (1.0 - b),
    ];
    if f.is_finite() && grad.iter().all(|v| v.is_finite()) {
        Some((f, grad))
    } else {
        None
    }
}

struct StartResult {
    theta: [f64; 3],
    value: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

fn sup_norm(v: &[f64; 3]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS with Armijo backtracking.
fn minimize(theta0: [f64; 3], x: &[f64], h1: f64) -> Option<StartResult> {
    let (mut f, mut g) = objective(&theta0, x, h1)?;
    let mut theta = theta0;
    let mut hinv = [[0.0f64; 3]; 3];
    let reset = |h: &mut [[f64; 3]; 3]| {
        *h = [[0.0; 3]; 3];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
    };
    reset(&mut hinv);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        if sup_norm(&g) <= GRADIENT_TOL {
            break;
        }
        iterations += 1;
        let mut dir = [0.0; 3];
        for i in 0..3 {
            dir[i] = -(0..3).map(|j| hinv[i][j] * g[j]).sum::<f64>();
        }
        let mut slope: f64 = (0..3).map(|i| dir[i] * g[i]).sum();
        if slope >= 0.0 {
            reset(&mut hinv);
            dir = [-g[0], -g[1], -g[2]];
            slope = -(0..3).map(|i| g[i] * g[i]).sum::<f64>();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = [
                theta[0] + step * dir[0],
                theta[1] + step * dir[1],
                theta[2] + step * dir[2],
            ];
            if let Some((ft, gt)) = objective(&trial, x, h1) {
                if ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, fn_, gn)) = accepted else {
            break;
        };
        let s = [next[0] - theta[0], next[1] - theta[1], next[2] - theta[2]];
        let y = [gn[0] - g[0], gn[1] - g[1], gn[2] - g[2]];
        let sy: f64 = (0..3).map(|i| s[i] * y[i]).sum();
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let mut hy = [0.0; 3];
            for i in 0..3 {
                hy[i] = (0..3).map(|j| hinv[i][j] * y[j]).sum();
            }
            let yhy: f64 = (0..3).map(|i| y[i] * hy[i]).sum();
            for i in 0..3 {
                for j in 0..3 {
                    hinv[i][j] +=
                        (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        } else {
            reset(&mut hinv);
        }
        theta = next;
        f = fn_;
        g = gn;
    }
    let grad_norm = sup_norm(&g);
    Some(StartResult {
        theta,
        value: f,
        grad_norm,
        iterations,
        converged: grad_norm <= GRADIENT_TOL,
    })
}

/// Maximum-likelihood GARCH(1,1) fit.
///
/// Returns are divided by their sample standard deviation before
/// optimizing, so ω is estimated on a unit scale and mapped back. Each
/// of four deterministic (a, b) starts is run; the best converged one wins.
pub fn fit_garch(returns: &[f64]) -> Result<GarchFit> {
    if returns.len() < MIN_FIT_LEN {
        return Err(Error::NoData(format!(
            "GARCH fit needs at least {MIN_FIT_LEN} returns, got {}",
            returns.len()
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain("returns must be finite".into()));
    }
    let var = sample_variance(returns);
    let mean_sq = returns.iter().map(|r| r * r).sum::<f64>() / returns.len() as f64;
    if !(var > 1e-12 * mean_sq) {
        return Err(Error::Degenerate("returns have zero variance".into()));
    }
    let scale = var.sqrt();
    let x: Vec<f64> = returns.iter().map(|r| r / scale).collect();
    let h1 = sample_variance(&x);

    let mut best_converged: Option<StartResult> = None;
    let mut best_any: Option<StartResult> = None;
    for &(a, b) in &STARTS {
        let start = GarchParams {
            omega: h1 * (1.0 - a - b),
            arch_coef: a,
            garch_coef: b,
        };
        let Some(res) = minimize(to_theta(&start), &x, h1) else {
            continue;
        };
        log::debug!(
            "GARCH start ({a}, {b}): value {} after {} iterations, |grad| {:.2e}",
            res.value,
            res.iterations,
            res.grad_norm
        );
        if res.converged {
            let wins = best_converged.as_ref().is_none_or(|s| {
                if (res.value - s.value).abs() < TIE_TOL {
                    from_theta(&res.theta).persistence() < from_theta(&s.theta).persistence()
                } else {
                    res.value < s.value
                }
            });
            if wins {
                best_converged = Some(res);
            }
            continue;
        }
        if best_any.as_ref().is_none_or(|s| res.value < s.value) {
            best_any = Some(res);
        }
    }
    let pick = |r: &StartResult| -> Result<GarchFit> {
        let unit = from_theta(&r.theta);
        let params = GarchParams {
            omega: unit.omega * var,
            ..unit
        };
        let path = sigma2_path_with_initial(&params, returns, var)?;
        let nll = r.value * x.len() as f64 + x.len() as f64 * scale.ln();
        Ok(GarchFit {
            params,
            sigma2_path: path,
            neg_loglik: nll,
            iterations: r.iterations,
            gradient_norm: r.grad_norm,
        })
    };
    if let Some(r) = &best_converged {
        return pick(r);
    }
    match best_any {
        Some(r) => {
            let fit = pick(&r)?;
            Err(Error::Convergence {
                message: format!(
                    "no start reached gradient norm {GRADIENT_TOL:e} in {MAX_ITERATIONS} iterations (best {:.2e})",
                    r.grad_norm
                ),
                best: Some(Box::new(fit)),
            })
        }
        None => Err(Error::Convergence {
            message: "every start left the valid parameter region".into(),
            best: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volatility::synthetic::simulate_garch;

    #[test]
    fn returns_examples() {
        let r = returns_from_prices(&[100.0, 110.0, 99.0]).unwrap();
        assert!((r[0] - 0.1).abs() < 1e-15 && (r[1] + 0.1).abs() < 1e-15);
        assert_eq!(returns_from_prices(&[50.0, 50.0]).unwrap(), vec![0.0]);
        assert!(matches!(
            returns_from_prices(&[100.0, -1.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            returns_from_prices(&[100.0]),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn forecast_examples() {
        let p = GarchParams::new(0.1, 0.2, 0.7).unwrap();
        assert!((forecast_next_sigma2(&p, 1.0, 2.0) - 1.7).abs() < 1e-15);
        assert!((forecast_next_sigma2(&p, 0.0, 0.5) - 0.45).abs() < 1e-15);
        let flat = GarchParams::new(0.05, 0.0, 0.0).unwrap();
        assert_eq!(forecast_next_sigma2(&flat, 3.0, 9.0), 0.05);
    }

    #[test]
    fn params_validation() {
        assert!(GarchParams::new(0.0, 0.1, 0.1).is_err());
        assert!(GarchParams::new(0.1, -0.1, 0.1).is_err());
        assert!(GarchParams::new(0.1, 0.5, 0.5).is_err());
    }

    #[test]
    fn single_return_likelihood() {
        let p = GarchParams::new(0.1, 0.2, 0.7).unwrap();
        let v0 = garch_neg_loglik_with_initial(&p, &[0.0], 1.0).unwrap();
        let v1 = garch_neg_loglik_with_initial(&p, &[1.0], 1.0).unwrap();
        assert!((v0 - 0.918_938_533_204_672_7).abs() < 1e-14);
        assert!((v1 - 1.418_938_533_204_672_7).abs() < 1e-14);
    }

    #[test]
    fn three_return_likelihood_matches_independent_evaluation() {
        // σ₁² = 0.0358333…, σ² path (0.0358333, 0.1270833, 0.1969583), from a
        // 50-digit evaluation of the same recursion and sum
        let p = GarchParams::new(0.1, 0.2, 0.7).unwrap();
        let r = [0.1, -0.2, 0.15];
        let path = sigma2_path(&p, &r).unwrap();
        assert!((path[0] - 0.035833333333333333).abs() < 1e-15);
        assert!((path[1] - 0.12708333333333333).abs() < 1e-15);
        assert!((path[2] - 0.19695833333333333).abs() < 1e-15);
        let nll = garch_neg_loglik(&p, &r).unwrap();
        assert!((nll - -0.397_429_806_734_882_4).abs() < 1e-13, "{nll}");
    }

    #[test]
    fn underflowing_variance_is_an_error() {
        let p = GarchParams::new(1e-15, 0.0, 0.0).unwrap();
        assert!(matches!(
            garch_neg_loglik(&p, &[1e-9, 1e-9]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream(2, 0);
        let p = GarchParams::new(0.05, 0.1, 0.85).unwrap();
        let x = simulate_garch(&p, 400, &mut rng);
        let h1 = sample_variance(&x);
        let theta = [-1.2, -1.5, 1.1];
        let (_, g) = objective(&theta, &x, h1).unwrap();
        for k in 0..3 {
            let mut up = theta;
            let mut dn = theta;
            up[k] += 1e-6;
            dn[k] -= 1e-6;
            let fd = (objective(&up, &x, h1).unwrap().0 - objective(&dn, &x, h1).unwrap().0) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7, "coordinate {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn transform_round_trips() {
        let p = GarchParams::new(0.3, 0.12, 0.8).unwrap();
        let q = from_theta(&to_theta(&p));
        assert!((p.omega - q.omega).abs() < 1e-14);
        assert!((p.arch_coef - q.arch_coef).abs() < 1e-14);
        assert!((p.garch_coef - q.garch_coef).abs() < 1e-14);
    }

    #[test]
    fn constant_and_short_inputs() {
        assert!(matches!(fit_garch(&[0.01; 100]), Err(Error::Degenerate(_))));
        assert!(matches!(fit_garch(&[0.01, 0.02]), Err(Error::NoData(_))));
    }

    #[test]
    fn fit_recovers_simulated_parameters() {
        let truth = GarchParams::new(0.05, 0.10, 0.85).unwrap();
        let x = simulate_garch(&truth, 5000, &mut crate::rng::stream(17, 0));
        let fit = fit_garch(&x).unwrap();
        assert!((fit.params.omega - 0.05).abs() < 0.05, "{:?}", fit.params);
        assert!(
            (fit.params.arch_coef - 0.10).abs() < 0.05,
            "{:?}",
            fit.params
        );
        assert!(
            (fit.params.garch_coef - 0.85).abs() < 0.05,
            "{:?}",
            fit.params
        );
        assert!(fit.gradient_norm <= GRADIENT_TOL);
        let direct = garch_neg_loglik(&fit.params, &x).unwrap();
        assert!((direct - fit.neg_loglik).abs() < 1e-6 * direct.abs().max(1.0));
        for &(a, b) in &STARTS {
            let var = sample_variance(&x);
            let start = GarchParams::new(var * (1.0 - a - b), a, b).unwrap();
            assert!(fit.neg_loglik <= garch_neg_loglik(&start, &x).unwrap());
        }
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let truth = GarchParams::new(0.05, 0.10, 0.85).unwrap();
        let x = simulate_garch(&truth, 2000, &mut crate::rng::stream(5, 0));
        let small: Vec<f64> = x.iter().map(|v| v * 0.01).collect();
        let a = fit_garch(&x).unwrap();
        let b = fit_garch(&small).unwrap();
        assert!((a.params.arch_coef - b.params.arch_coef).abs() < 1e-6);
        assert!((a.params.omega * 1e-4 - b.params.omega).abs() < 1e-9);
    }

    #[test]
    fn iid_normal_returns_look_unconditional() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::stream(21, 0);
        let x: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let fit = match fit_garch(&x) {
            Ok(f) => f,
            Err(Error::Convergence { best: Some(f), .. }) => *f,
            Err(e) => panic!("{e}"),
        };
        assert!(
            (fit.params.unconditional_variance() - 1.0).abs() <= 0.1,
            "{:?}",
            fit.params
        );
        assert!(fit.params.persistence() <= 0.2, "{:?}", fit.params);
    }
}
