//! Monte-Carlo estimates of the quantities entering the HMM coverage bounds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bounds::{gamma_star, large_deviation_rhs, regret_rhs};
use super::chain::spectral_gap;
use super::sim::{miscoverage_curve, FixedQuantileFn, HmmSpec};
use crate::aci::{init, prop_bound, AciConfig};
use crate::conformal::err_indicator;
use crate::error::{Error, Result};
use crate::rng::{stream, streams};

/// Bisection tolerance for α*.
pub const ALPHA_STAR_TOL: f64 = 1e-10;
/// Minimum replications for bias estimates.
pub const MIN_REPS: usize = 100;

/// α*_a solving M_a(β) = α for every state, by bisection on \[0,1\].
pub fn per_state_alpha_star(
    spec: &HmmSpec,
    qhat: &FixedQuantileFn,
    alpha: f64,
) -> Result<Vec<f64>> {
    spec.score_dist()
        .iter()
        .enumerate()
        .map(|(a, dist)| {
            let g = |b: f64| miscoverage_curve(dist, qhat, b) - alpha;
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            if g(lo) > 0.0 || g(hi) < 0.0 {
                return Err(Error::RootFinding(format!(
                    "state {a}: M(0) − α = {} and M(1) − α = {} do not bracket a root",
                    g(lo),
                    g(hi)
                )));
            }
            while hi - lo > ALPHA_STAR_TOL {
                let mid = 0.5 * (lo + hi);
                if g(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        })
        .collect()
}

/// Steps discarded before statistics are collected: ⌈20/γ⌉, or none when γ = 0.
pub fn burn_in(config: &AciConfig<f64>) -> usize {
    if config.step_size > 0.0 {
        (20.0 / config.step_size).ceil() as usize
    } else {
        0
    }
}

/// Statistics of one replication, collected after the burn-in.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationStats {
    pub steps: usize,
    pub err_count: u64,
    pub state_err: Vec<u64>,
    pub state_visits: Vec<u64>,
    /// Σ (M_{A_t}(α_t) − α)².
    pub squared_gap_sum: f64,
    /// Σ |α*_{A_{t+1}} − α*_{A_t}| over consecutive collected steps.
    pub alpha_star_shift_sum: f64,
}

impl ReplicationStats {
    pub fn mean_err(&self) -> f64 {
        self.err_count as f64 / self.steps as f64
    }
}

/// Runs ACI with a fixed quantile function on a fresh chain path of
/// `burn + horizon` steps.
pub fn run_replication<R: rand::Rng + ?Sized>(
    spec: &HmmSpec,
    qhat: &FixedQuantileFn,
    config: AciConfig<f64>,
    burn: usize,
    horizon: usize,
    alpha_star: Option<&[f64]>,
    rng: &mut R,
) -> Result<ReplicationStats> {
    let n = spec.n_states();
    let alpha = config.target_miscoverage;
    let mut stats = ReplicationStats {
        steps: horizon,
        err_count: 0,
        state_err: vec![0; n],
        state_visits: vec![0; n],
        squared_gap_sum: 0.0,
        alpha_star_shift_sum: 0.0,
    };
    let mut state = init(config)?;
    let mut a = spec.initial_state(rng);
    for t in 0..burn + horizon {
        if t > 0 {
            let next = spec.next_state(a, rng);
            if t > burn {
                if let Some(star) = alpha_star {
                    stats.alpha_star_shift_sum += (star[next] - star[a]).abs();
                }
            }
            a = next;
        }
        let dist = &spec.score_dist()[a];
        let threshold = qhat.threshold(state.effective_quantile_level());
        let score = dist.sample(rng);
        let err = err_indicator(score, threshold);
        if t >= burn {
            let m = 1.0 - dist.cdf(threshold);
            stats.squared_gap_sum += (m - alpha) * (m - alpha);
            stats.err_count += err.value() as u64;
            stats.state_err[a] += err.value() as u64;
            stats.state_visits[a] += 1;
        }
        state = state.update(err);
    }
    Ok(stats)
}

/// `reps` independent replications, replication r drawing from stream
/// `REPLICATION_BASE + r` of `seed`.
pub fn run_replications(
    spec: &HmmSpec,
    qhat: &FixedQuantileFn,
    config: AciConfig<f64>,
    horizon: usize,
    reps: usize,
    alpha_star: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<ReplicationStats>> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let burn = burn_in(&config);
    (0..reps)
        .map(|r| {
            let mut rng = stream(seed, streams::REPLICATION_BASE + r as u64);
            run_replication(spec, qhat, config, burn, horizon, alpha_star, &mut rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub b_hat: f64,
    pub sigma_b2_hat: f64,
    pub b_hat_se: f64,
    pub sigma_b2_se: f64,
    /// Pooled E[err_t | A_t = a] per state.
    pub per_state_err: Vec<f64>,
    pub per_state_se: Vec<f64>,
}

/// Plug-in B̂ = max_a |ê_a − α| and σ̂²_B = Σ_a π_a (ê_a − α)², with standard
/// errors from the spread of per-replication state means.
pub fn bias_from_replications(
    stats: &[ReplicationStats],
    stationary: &[f64],
    alpha: f64,
) -> Result<BiasEstimate> {
    let n = stationary.len();
    let reps = stats.len();
    if reps < 2 {
        return Err(Error::NoData("need at least two replications".into()));
    }
    let mut per_state_err = vec![0.0; n];
    let mut per_state_se = vec![0.0; n];
    for a in 0..n {
        let errs: u64 = stats.iter().map(|s| s.state_err[a]).sum();
        let visits: u64 = stats.iter().map(|s| s.state_visits[a]).sum();
        if visits == 0 {
            return Err(Error::NoData(format!("state {a} was never visited")));
        }
        per_state_err[a] = errs as f64 / visits as f64;
        // ratio-estimator standard error across replications
        let mean_visits = visits as f64 / reps as f64;
        let resid_ss: f64 = stats
            .iter()
            .map(|s| {
                let r = s.state_err[a] as f64 - per_state_err[a] * s.state_visits[a] as f64;
                r * r
            })
            .sum();
        per_state_se[a] =
            (resid_ss / (reps - 1) as f64).sqrt() / (mean_visits * (reps as f64).sqrt());
    }
    let dev: Vec<f64> = per_state_err.iter().map(|e| e - alpha).collect();
    let arg = (0..n)
        .max_by(|&i, &j| dev[i].abs().total_cmp(&dev[j].abs()))
        .expect("at least one state");
    let b_hat = dev[arg].abs();
    let sigma_b2_hat: f64 = (0..n)
        .map(|a| stationary[a] * dev[a] * dev[a])
        .sum::<f64>()
        .min(b_hat * b_hat);
    let sigma_b2_se = (0..n)
        .map(|a| (2.0 * stationary[a] * dev[a].abs() * per_state_se[a]).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(BiasEstimate {
        b_hat,
        sigma_b2_hat,
        b_hat_se: per_state_se[arg],
        sigma_b2_se,
        per_state_err,
        per_state_se,
    })
}

/// Monte-Carlo B̂ and σ̂²_B over `reps` replications of `horizon` steps each,
/// after a burn-in of ⌈20/γ⌉ steps.
pub fn estimate_bias_terms(
    spec: &HmmSpec,
    qhat: &FixedQuantileFn,
    config: AciConfig<f64>,
    horizon: usize,
    reps: usize,
    seed: u64,
) -> Result<BiasEstimate> {
    if reps < MIN_REPS {
        return Err(Error::Config(format!(
            "need at least {MIN_REPS} replications, got {reps}"
        )));
    }
    let stats = run_replications(spec, qhat, config, horizon, reps, None, seed)?;
    bias_from_replications(&stats, spec.stationary(), config.target_miscoverage)
}

/// Mean and standard error of err_t at every step t = 1..=horizon across
/// replications started at α₁ with no burn-in.
pub fn mean_err_by_step(
    spec: &HmmSpec,
    qhat: &FixedQuantileFn,
    config: AciConfig<f64>,
    horizon: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if reps < 2 {
        return Err(Error::Config("need at least two replications".into()));
    }
    let mut hits = vec![0u64; horizon];
    for r in 0..reps {
        let mut rng = stream(seed, streams::REPLICATION_BASE + r as u64);
        let mut state = init(config)?;
        let mut a = spec.initial_state(&mut rng);
        for (t, slot) in hits.iter_mut().enumerate() {
            if t > 0 {
                a = spec.next_state(a, &mut rng);
            }
            let threshold = qhat.threshold(state.effective_quantile_level());
            let err = err_indicator(spec.score_dist()[a].sample(&mut rng), threshold);
            *slot += err.value() as u64;
            state = state.update(err);
        }
    }
    let n = reps as f64;
    Ok(hits
        .into_iter()
        .map(|h| {
            let p = h as f64 / n;
            (p, (p * (1.0 - p) / (n - 1.0)).sqrt())
        })
        .collect())
}

/// Settings of a full theory run.
#[derive(Clone, Debug)]
pub struct TheoryParams {
    pub spec: HmmSpec,
    pub qhat: FixedQuantileFn,
    pub config: AciConfig<f64>,
    pub horizon: usize,
    pub reps: usize,
    pub epsilons: Vec<f64>,
    /// Lipschitz constant L of the miscoverage curves.
    pub lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    #[serde(rename = "B_hat")]
    pub b_hat: f64,
    #[serde(rename = "sigmaB2_hat")]
    pub sigma_b2_hat: f64,
    #[serde(rename = "B_hat_se")]
    pub b_hat_se: f64,
    #[serde(rename = "sigmaB2_hat_se")]
    pub sigma_b2_se: f64,
    pub spectral_gap: f64,
    pub alpha_star_by_state: Vec<f64>,
    pub stationary: Vec<f64>,
    pub per_state_err: Vec<f64>,
    pub horizon: usize,
    pub reps: usize,
    pub burn_in: usize,
    /// Empirical E|α*_{A_{t+1}} − α*_{A_t}|.
    pub mean_abs_alpha_star_shift: f64,
    /// Empirical E[(M_{A_t}(α_t) − α)²].
    pub mean_squared_gap: f64,
    /// Fraction of replications with |T⁻¹ Σ err_t − α| ≥ ε, keyed by ε.
    pub exceedance: BTreeMap<String, f64>,
    pub bound_values: BTreeMap<String, f64>,
    pub config: AciConfig<f64>,
}

pub fn eps_key(eps: f64) -> String {
    format!("eps={eps}")
}

pub fn run_theory(params: &TheoryParams, seed: u64) -> Result<TheoryReport> {
    let TheoryParams {
        spec,
        qhat,
        config,
        horizon,
        reps,
        epsilons,
        lipschitz,
    } = params;
    if *reps < MIN_REPS {
        return Err(Error::Config(format!(
            "need at least {MIN_REPS} replications, got {reps}"
        )));
    }
    let alpha = config.target_miscoverage;
    let gap = spectral_gap(spec.transition())?;
    let star = per_state_alpha_star(spec, qhat, alpha)?;
    let stats = run_replications(spec, qhat, *config, *horizon, *reps, Some(&star), seed)?;
    let bias = bias_from_replications(&stats, spec.stationary(), alpha)?;

    let total_steps: usize = stats.iter().map(|s| s.steps).sum();
    let shift_pairs = stats.iter().map(|s| s.steps - 1).sum::<usize>().max(1);
    let mean_shift = stats.iter().map(|s| s.alpha_star_shift_sum).sum::<f64>() / shift_pairs as f64;
    let mean_sq_gap = stats.iter().map(|s| s.squared_gap_sum).sum::<f64>() / total_steps as f64;

    let mut exceedance = BTreeMap::new();
    let mut bounds = BTreeMap::new();
    for &eps in epsilons {
        let freq = stats
            .iter()
            .filter(|s| (s.mean_err() - alpha).abs() >= eps)
            .count() as f64
            / *reps as f64;
        exceedance.insert(eps_key(eps), freq);
        let rhs = large_deviation_rhs(
            *horizon as u64,
            eps,
            1.0 - gap,
            bias.sigma_b2_hat,
            bias.b_hat,
        )?;
        bounds.insert(format!("large_deviation[{}]", eps_key(eps)), rhs);
    }
    bounds.insert("gamma_star".into(), gamma_star(mean_shift)?);
    if config.step_size > 0.0 {
        bounds.insert(
            "regret".into(),
            regret_rhs(*lipschitz, config.step_size, mean_shift)?,
        );
        bounds.insert("prop_bound".into(), prop_bound(config, *horizon as u64)?);
    }
    Ok(TheoryReport {
        b_hat: bias.b_hat,
        sigma_b2_hat: bias.sigma_b2_hat,
        b_hat_se: bias.b_hat_se,
        sigma_b2_se: bias.sigma_b2_se,
        spectral_gap: gap,
        alpha_star_by_state: star,
        stationary: spec.stationary().to_vec(),
        per_state_err: bias.per_state_err,
        horizon: *horizon,
        reps: *reps,
        burn_in: burn_in(config),
        mean_abs_alpha_star_shift: mean_shift,
        mean_squared_gap: mean_sq_gap,
        exceedance,
        bound_values: bounds,
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::chain::symmetric_chain;
    use crate::hmm::sim::ScoreDist;
    use nalgebra::DMatrix;

    fn normal(scale: f64) -> ScoreDist {
        ScoreDist::Normal { mean: 0.0, scale }
    }

    fn std_qhat() -> FixedQuantileFn {
        FixedQuantileFn::Normal {
            mean: 0.0,
            scale: 1.0,
        }
    }

    fn single(dist: ScoreDist) -> HmmSpec {
        HmmSpec::new(DMatrix::from_element(1, 1, 1.0), vec![dist]).unwrap()
    }

    #[test]
    fn alpha_star_examples() {
        let star = per_state_alpha_star(&single(normal(1.0)), &std_qhat(), 0.1).unwrap();
        assert!((star[0] - 0.1).abs() < 1e-9);
        let star = per_state_alpha_star(&single(normal(2.0)), &std_qhat(), 0.1).unwrap();
        assert!((star[0] - 0.005187061403669979).abs() < 1e-9, "{}", star[0]);
    }

    #[test]
    fn alpha_star_decreases_with_scale() {
        let spec = HmmSpec::new(
            symmetric_chain(4, 0.7).unwrap(),
            vec![normal(0.5), normal(1.0), normal(1.5), normal(3.0)],
        )
        .unwrap();
        let star = per_state_alpha_star(&spec, &std_qhat(), 0.1).unwrap();
        assert!(star.windows(2).all(|w| w[0] > w[1]), "{star:?}");
    }

    #[test]
    fn alpha_star_needs_a_bracket() {
        // scores always above the top of the quantile function's range
        let spec = single(ScoreDist::Uniform {
            low: 5.0,
            high: 6.0,
        });
        let q = FixedQuantileFn::Uniform {
            low: 0.0,
            high: 1.0,
        };
        assert!(matches!(
            per_state_alpha_star(&spec, &q, 0.1),
            Err(Error::RootFinding(_))
        ));
    }

    #[test]
    fn ideal_single_state_has_small_bias() {
        let cfg = AciConfig::simple(0.1, 0.005).unwrap();
        let est =
            estimate_bias_terms(&single(normal(1.0)), &std_qhat(), cfg, 100_000, 100, 3).unwrap();
        assert!(est.b_hat <= 0.01, "{est:?}");
        assert!(est.sigma_b2_hat <= est.b_hat * est.b_hat);
    }

    #[test]
    fn bias_estimates_are_seeded_and_consistent() {
        let spec = HmmSpec::new(
            symmetric_chain(2, 0.95).unwrap(),
            vec![normal(1.0), normal(2.0)],
        )
        .unwrap();
        let cfg = AciConfig::simple(0.1, 0.05).unwrap();
        let a = estimate_bias_terms(&spec, &std_qhat(), cfg, 500, 100, 1).unwrap();
        let b = estimate_bias_terms(&spec, &std_qhat(), cfg, 500, 100, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.b_hat >= 0.0 && a.sigma_b2_hat <= a.b_hat * a.b_hat);
        assert!(estimate_bias_terms(&spec, &std_qhat(), cfg, 500, 10, 1).is_err());
    }

    #[test]
    fn mean_err_tracks_ideal_recursion_early() {
        let cfg = AciConfig::new(0.1, 0.05, 0.5, crate::aci::UpdateRule::Simple).unwrap();
        let path = mean_err_by_step(&single(normal(1.0)), &std_qhat(), cfg, 30, 4000, 2).unwrap();
        for t in [1usize, 5, 30] {
            let want = super::super::bounds::ideal_expectation(t as u64, 0.5, 0.05, 0.1).unwrap();
            let (m, se) = path[t - 1];
            assert!(
                (m - want).abs() <= 4.0 * se.max(1e-3),
                "t={t}: {m} vs {want}"
            );
        }
    }

    #[test]
    fn theory_report_invariants() {
        let spec = HmmSpec::new(
            symmetric_chain(2, 0.95).unwrap(),
            vec![normal(1.0), normal(2.0)],
        )
        .unwrap();
        let params = TheoryParams {
            spec,
            qhat: std_qhat(),
            config: AciConfig::simple(0.1, 0.05).unwrap(),
            horizon: 1000,
            reps: 100,
            epsilons: vec![0.05],
            lipschitz: 1.0,
        };
        let r = run_theory(&params, 9).unwrap();
        assert!((r.spectral_gap - 0.1).abs() < 1e-12);
        assert!(r.sigma_b2_hat <= r.b_hat * r.b_hat);
        assert_eq!(r.burn_in, 400);
        assert!(r.bound_values.contains_key("large_deviation[eps=0.05]"));
        // α* jumps by |0.1 − 0.0052| on each switch, which happens 5% of the time
        let expected_shift = 0.05 * (0.1 - 0.005187061403669979);
        assert!((r.mean_abs_alpha_star_shift - expected_shift).abs() < 0.002);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"B_hat\"") && json.contains("\"sigmaB2_hat\""));
    }
}
