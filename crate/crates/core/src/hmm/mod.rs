//! Hidden-Markov testbed for the coverage theory.

pub mod bounds;
pub mod chain;
pub mod sim;
pub mod theory;

pub use bounds::{
    bias_upper_bound, gamma_star, ideal_expectation, large_deviation_rhs, lattice_check, regret_rhs,
};
pub use chain::{spectral_gap, stationary_distribution, symmetric_chain};
pub use sim::{
    miscoverage_curve, run_fixed_quantile_aci, simulate_hmm, FixedQuantileFn, HmmPath, HmmSpec,
    ScoreDist,
};
pub use theory::{
    estimate_bias_terms, mean_err_by_step, per_state_alpha_star, run_replications, run_theory,
    BiasEstimate, ReplicationStats, TheoryParams, TheoryReport,
};
