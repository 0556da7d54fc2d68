//! Command-line front end: `volatility`, `election`, `simulate`, `report`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::aci::{AciConfig, UpdateRule, DEFAULT_DECAY, DEFAULT_STEP_SIZE};
use crate::election::{
    generate_synthetic_counties, run_election_experiment, sample_ordering, ElectionRunConfig,
    OrderingSpec,
};
use crate::error::{Error, Result};
use crate::hmm::{run_theory, symmetric_chain, FixedQuantileFn, HmmSpec, ScoreDist, TheoryParams};
use crate::io;
use crate::metrics::{
    summarize, CoverageSummary, TrajectoryReport, ELECTION_WINDOW, VOLATILITY_WINDOW,
};
use crate::rng::{stream, streams};
use crate::volatility::{benchmark_prices, run_volatility_experiment, VolatilityRunConfig};

/// Environment variable holding the log level, e.g. `info`.
pub const LOG_ENV: &str = "ACI_LOG";

/// Default number of synthetic returns: one fitting window plus 5000
/// prediction steps.
const SYNTHETIC_RETURNS: usize = 6250;
const SYNTHETIC_COUNTIES: usize = 3000;
const SYNTHETIC_COVARIATES: usize = 11;

#[derive(Parser, Debug)]
#[command(
    name = "aci",
    version,
    about = "Adaptive conformal inference experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rolling GARCH(1,1) volatility intervals on a price series.
    Volatility(VolatilityArgs),
    /// Conformalized quantile regression on counties arriving in sequence.
    Election(ElectionArgs),
    /// Hidden-Markov simulation checking the coverage theory.
    Simulate(SimulateArgs),
    /// Coverage summary of a trajectory file.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Update {
    Simple,
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Adaptive level updates.
    Aci,
    /// Fixed level, the same as --gamma 0.
    Fixed,
}

#[derive(Args, Debug, Clone)]
struct AciArgs {
    /// Target miscoverage α.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Step size γ.
    #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
    gamma: f64,
    /// Initial level α₁; defaults to α.
    #[arg(long)]
    alpha1: Option<f64>,
    /// Level update rule.
    #[arg(long, value_enum, default_value_t = Update::Simple)]
    update: Update,
    /// Decay of the weighted update.
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    decay: f64,
    /// Adaptive or fixed level.
    #[arg(long, value_enum, default_value_t = Method::Aci)]
    method: Method,
}

impl AciArgs {
    fn config(&self) -> Result<AciConfig<f64>> {
        let gamma = match self.method {
            Method::Aci => self.gamma,
            Method::Fixed => 0.0,
        };
        let rule = match self.update {
            Update::Simple => UpdateRule::Simple,
            Update::Weighted => UpdateRule::WeightedGeometric { decay: self.decay },
        };
        AciConfig::new(self.alpha, gamma, self.alpha1.unwrap_or(self.alpha), rule)
    }
}

#[derive(Args, Debug)]
struct VolatilityArgs {
    /// Price file with header `date,open`; a synthetic regime-switching
    /// series is used when absent.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Number of synthetic returns.
    #[arg(long, default_value_t = SYNTHETIC_RETURNS)]
    synthetic_returns: usize,
    #[command(flatten)]
    aci: AciArgs,
    /// Returns per GARCH fit and calibration scores kept.
    #[arg(long, default_value_t = 1250)]
    window: usize,
    /// Steps between GARCH refits.
    #[arg(long, default_value_t = 1)]
    refit_every: usize,
    /// Window of the local coverage curve.
    #[arg(long, default_value_t = VOLATILITY_WINDOW)]
    local_window: usize,
    /// Seed for synthetic data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for trajectory.csv, summary.json and config.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").args(["counties", "synthetic"]))]
struct ElectionArgs {
    /// County file with header `id,population,x1,...,xd,y_prev,y`.
    #[arg(long)]
    counties: Option<PathBuf>,
    /// Number of synthetic counties, used when no file is given.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Covariates per synthetic county.
    #[arg(long, default_value_t = SYNTHETIC_COVARIATES)]
    covariates: usize,
    /// Ordering bias σ; `inf` orders by decreasing population.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[command(flatten)]
    aci: AciArgs,
    /// Counties observed before the first interval.
    #[arg(long, default_value_t = 500)]
    warmup: usize,
    /// Fraction of observed counties held out for calibration.
    #[arg(long, default_value_t = 0.25)]
    cal_frac: f64,
    /// Steps between refits of the quantile models.
    #[arg(long, default_value_t = 1)]
    refit_every: usize,
    /// Window of the local coverage curve.
    #[arg(long, default_value_t = ELECTION_WINDOW)]
    local_window: usize,
    /// Seed for data, ordering and splits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for trajectory.csv, summary.json and config.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Number of hidden states.
    #[arg(long, default_value_t = 2)]
    states: usize,
    /// Probability of staying in the current state.
    #[arg(long, default_value_t = 0.95)]
    p: f64,
    /// Score scale per state (normal scores with mean 0); defaults to 1, 2, ….
    #[arg(long, value_delimiter = ',')]
    scales: Vec<f64>,
    /// Target miscoverage α.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Step size γ.
    #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
    gamma: f64,
    /// Initial level α₁; defaults to α.
    #[arg(long)]
    alpha1: Option<f64>,
    /// Steps per replication.
    #[arg(long, default_value_t = 5000)]
    horizon: usize,
    /// Number of replications.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Deviation levels ε for the exceedance frequencies.
    #[arg(long, value_delimiter = ',', default_value = "0.02,0.05")]
    eps: Vec<f64>,
    /// Lipschitz constant assumed for the miscoverage curves.
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    /// Seed for the simulation streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for theory.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Trajectory file with header `t,label,alpha_t,err,lower,upper,local_cov`.
    #[arg(long = "in")]
    input: PathBuf,
    /// config.json written next to the trajectory; overrides the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target miscoverage α.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Step size γ.
    #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
    gamma: f64,
    /// Level update rule.
    #[arg(long, value_enum, default_value_t = Update::Simple)]
    update: Update,
    /// Decay of the weighted update.
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    decay: f64,
    /// Window of the local coverage curve.
    #[arg(long, default_value_t = VOLATILITY_WINDOW)]
    window: usize,
}

#[derive(Serialize)]
struct RunEcho<'a, S: Serialize> {
    command: &'a str,
    aci: AciConfig<f64>,
    settings: S,
}

/// Writes `config.json`, `trajectory.csv` and `summary.json` into `dir`.
fn write_outputs<S: Serialize>(
    dir: &Path,
    echo: &RunEcho<S>,
    report: &TrajectoryReport<f64>,
    summary: &CoverageSummary,
    window: usize,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(echo)? + "\n",
    )?;
    io::write_trajectory(&dir.join("trajectory.csv"), report, window)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(summary)? + "\n",
    )?;
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    #[serde(flatten)]
    coverage: &'a CoverageSummary,
    failure: Option<&'a str>,
}

fn summary_for(report: &TrajectoryReport<f64>, window: usize) -> Result<CoverageSummary> {
    if report.len() < window {
        return Err(Error::NoData(format!(
            "{} prediction steps are fewer than the local window {window}",
            report.len()
        )));
    }
    summarize(report, window)
}

fn volatility(args: VolatilityArgs, stdout: &mut dyn Write) -> Result<()> {
    let config = args.aci.config()?;
    let run = VolatilityRunConfig {
        window: args.window,
        refit_every: args.refit_every,
    };
    let series = match &args.prices {
        Some(path) => io::read_prices(path)?,
        None => benchmark_prices(args.synthetic_returns, args.seed)?,
    };
    log::info!(
        "volatility: {} prices, window {}",
        series.prices.len(),
        run.window
    );
    let report = run_volatility_experiment(&series, config, &run)?;
    let summary = summary_for(&report, args.local_window)?;
    if let Some(dir) = &args.out {
        #[derive(Serialize)]
        struct Settings<'a> {
            prices: Option<&'a Path>,
            synthetic_returns: Option<usize>,
            run: VolatilityRunConfig,
            local_window: usize,
            seed: u64,
        }
        let echo = RunEcho {
            command: "volatility",
            aci: config,
            settings: Settings {
                prices: args.prices.as_deref(),
                synthetic_returns: args.prices.is_none().then_some(args.synthetic_returns),
                run,
                local_window: args.local_window,
                seed: args.seed,
            },
        };
        write_outputs(dir, &echo, &report, &summary, args.local_window)?;
        if args.prices.is_none() {
            io::write_prices(&dir.join("prices.csv"), &series)?;
        }
    }
    print_summary(stdout, &report, &summary)
}

fn election(args: ElectionArgs, stdout: &mut dyn Write) -> Result<()> {
    let config = args.aci.config()?;
    let ordering = OrderingSpec::new(args.sigma)?;
    let run = ElectionRunConfig {
        warmup: args.warmup,
        cal_frac: args.cal_frac,
        refit_every: args.refit_every,
    };
    let counties = match &args.counties {
        Some(path) => io::read_counties(path)?,
        None => {
            if args.covariates == 0 {
                return Err(Error::Config(
                    "synthetic counties need at least one covariate".into(),
                ));
            }
            generate_synthetic_counties(
                args.synthetic.unwrap_or(SYNTHETIC_COUNTIES),
                args.covariates,
                args.seed,
            )
        }
    };
    let populations: Vec<f64> = counties.iter().map(|c| c.population).collect();
    let order = sample_ordering(
        &populations,
        ordering,
        &mut stream(args.seed, streams::ORDERING),
    );
    log::info!(
        "election: {} counties, sigma {}",
        counties.len(),
        args.sigma
    );
    let report = run_election_experiment(
        &counties,
        &order,
        config,
        &run,
        &mut stream(args.seed, streams::SPLITS),
    )?;
    let summary = summary_for(&report, args.local_window)?;
    if let Some(dir) = &args.out {
        #[derive(Serialize)]
        struct Settings<'a> {
            counties: Option<&'a Path>,
            synthetic: Option<usize>,
            covariates: Option<usize>,
            sigma: String,
            run: ElectionRunConfig,
            local_window: usize,
            seed: u64,
        }
        let synthetic = args.counties.is_none();
        let echo = RunEcho {
            command: "election",
            aci: config,
            settings: Settings {
                counties: args.counties.as_deref(),
                synthetic: synthetic.then_some(counties.len()),
                covariates: synthetic.then_some(args.covariates),
                sigma: args.sigma.to_string(),
                run,
                local_window: args.local_window,
                seed: args.seed,
            },
        };
        write_outputs(dir, &echo, &report, &summary, args.local_window)?;
        if synthetic {
            io::write_counties(&dir.join("counties.csv"), &counties)?;
        }
    }
    print_summary(stdout, &report, &summary)
}

fn print_summary(
    stdout: &mut dyn Write,
    report: &TrajectoryReport<f64>,
    summary: &CoverageSummary,
) -> Result<()> {
    let out = RunSummary {
        coverage: summary,
        failure: report.failure.as_deref(),
    };
    writeln!(stdout, "{}", serde_json::to_string_pretty(&out)?)?;
    Ok(())
}

fn simulate(args: SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    if args.states == 0 {
        return Err(Error::Config("need at least one state".into()));
    }
    let scales = if args.scales.is_empty() {
        (1..=args.states).map(|k| k as f64).collect()
    } else {
        args.scales.clone()
    };
    if scales.len() != args.states {
        return Err(Error::Config(format!(
            "{} scales given for {} states",
            scales.len(),
            args.states
        )));
    }
    let dists = scales
        .iter()
        .map(|&scale| ScoreDist::Normal { mean: 0.0, scale })
        .collect();
    let spec = HmmSpec::new(symmetric_chain(args.states, args.p)?, dists)?;
    let config = AciConfig::new(
        args.alpha,
        args.gamma,
        args.alpha1.unwrap_or(args.alpha),
        UpdateRule::Simple,
    )?;
    let params = TheoryParams {
        spec,
        qhat: FixedQuantileFn::Normal {
            mean: 0.0,
            scale: 1.0,
        },
        config,
        horizon: args.horizon,
        reps: args.reps,
        epsilons: args.eps.clone(),
        lipschitz: args.lipschitz,
    };
    let report = run_theory(&params, args.seed)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("theory.json"), &json)?;
    }
    stdout.write_all(json.as_bytes())?;
    Ok(())
}

fn report(args: ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let peek = io::read_trajectory(&args.input, AciConfig::simple(0.1, 0.0)?)?;
    let first = *peek
        .alphas
        .first()
        .ok_or_else(|| Error::NoData("trajectory has no rows".into()))?;
    let config = match &args.config {
        Some(path) => {
            let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
            let aci = value.get("aci").cloned().unwrap_or(value);
            serde_json::from_value::<AciConfig<f64>>(aci)?
        }
        None => {
            let rule = match args.update {
                Update::Simple => UpdateRule::Simple,
                Update::Weighted => UpdateRule::WeightedGeometric { decay: args.decay },
            };
            AciConfig::new(args.alpha, args.gamma, first, rule)?
        }
    };
    config.validate()?;
    let report = TrajectoryReport {
        config_echo: config,
        ..peek
    };
    report.validate()?;
    let summary = summarize(&report, args.window)?;
    writeln!(stdout, "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (program name first) and runs the command, writing results
/// to `stdout` and diagnostics to `stderr`. Returns the process exit code:
/// 0 on success, 2 on a usage error, 1 on a data or convergence error.
pub fn run_command_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    let result = match cli.command {
        Command::Volatility(a) => volatility(a, stdout),
        Command::Election(a) => election(a, stdout),
        Command::Simulate(a) => simulate(a, stdout),
        Command::Report(a) => report(a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// [`run_command_with`] on the process's standard streams.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_command_with(
        argv,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}

/// Sets up logging from `ACI_LOG`, defaulting to errors only.
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "error");
    let _ = env_logger::Builder::from_env(env).try_init();
}
