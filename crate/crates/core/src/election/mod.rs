//! Election-night interval forecasts from conformalized quantile regression.

pub mod experiment;
pub mod ordering;
pub mod quantreg;
pub mod synthetic;

pub use experiment::{
    aci_on_election_path, election_path, run_election_experiment, run_election_experiment_multi,
    CountyRecord, ElectionPath, ElectionRunConfig,
};
pub use ordering::{sample_ordering, OrderingSpec};
pub use quantreg::{fit_quantile_regression, mean_pinball, pinball_loss, QrModel};
pub use synthetic::generate_synthetic_counties;
