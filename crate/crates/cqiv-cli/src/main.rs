//! Command-line front end for censored quantile instrumental-variable
//! regression: CSV ingestion, fitting, weighted-bootstrap inference,
//! Monte Carlo studies, selection diagnostics, and quantile-curve
//! prediction.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 empty
//! selection (the requested quantile sits below the censoring quantile),
//! 5 numerical failure.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{resolve_simulate, PredictRun};
use crate::config::{resolve_run, RunConfig};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_EMPTY_SELECTION: u8 = 4;
pub const EXIT_NUMERICAL: u8 = 5;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_NUMERICAL, message: msg.into() }
    }

    pub fn from_lib(e: cqiv::Error) -> Self {
        let code = match &e {
            cqiv::Error::InvalidInput { .. }
            | cqiv::Error::Domain { .. }
            | cqiv::Error::SpecMismatch { .. } => EXIT_CONFIG,
            cqiv::Error::NonFinite { .. } => EXIT_DATA,
            cqiv::Error::EmptySelection { .. } => EXIT_EMPTY_SELECTION,
            _ => EXIT_NUMERICAL,
        };
        CliError { code, message: e.to_string() }
    }

    pub fn with_context(mut self, ctx: String) -> Self {
        self.message = format!("{ctx}: {}", self.message);
        self
    }
}

#[derive(Parser)]
#[command(
    name = "cqiv",
    version,
    about = "Censored quantile regression with endogenous regressors (control-function two-stage estimation, weighted-bootstrap inference, Monte Carlo harness)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the estimator at one or more quantiles.
    Fit(EstimationArgs),
    /// Fit, then weighted-bootstrap percentile confidence intervals.
    Bootstrap(EstimationArgs),
    /// Emit per-step selection diagnostics only.
    Diagnose(EstimationArgs),
    /// Run the Monte Carlo estimator comparison.
    Simulate(SimulateArgs),
    /// Evaluate fitted quantile curves over a grid of the endogenous
    /// regressor.
    Predict(PredictArgs),
}

#[derive(Args)]
struct EstimationArgs {
    /// JSON config file supplying any of the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Response column.
    #[arg(long)]
    y: Option<String>,
    /// Endogenous regressor column.
    #[arg(long)]
    d: Option<String>,
    /// Exogenous covariate columns (comma separated).
    #[arg(long, value_delimiter = ',')]
    w: Option<Vec<String>>,
    /// Instrument columns (comma separated).
    #[arg(long, value_delimiter = ',')]
    z: Option<Vec<String>>,
    /// Per-row censoring point column.
    #[arg(long)]
    c_col: Option<String>,
    /// Constant censoring point (default 0).
    #[arg(long, allow_negative_numbers = true)]
    c_value: Option<f64>,
    /// Quantiles to fit (comma separated, default 0.25,0.5,0.75).
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    /// First-stage method: ols | qr | dr | none.
    #[arg(long)]
    control: Option<String>,
    /// Control transform: identity | normal-quantile.
    #[arg(long)]
    transform: Option<String>,
    /// Add a quadratic term in the endogenous regressor.
    #[arg(long)]
    d_squared: bool,
    /// Link for the selection and distribution-regression models:
    /// probit | logit.
    #[arg(long)]
    link: Option<String>,
    /// Step-1 trimming percentage.
    #[arg(long)]
    q0: Option<f64>,
    /// Reselection trimming percentage.
    #[arg(long)]
    q1: Option<f64>,
    /// Extra refinement iterations after step 3.
    #[arg(long)]
    max_extra_iterations: Option<usize>,
    /// Report the last step instead of the best-objective step.
    #[arg(long)]
    no_retain_best: bool,
    /// Disable the censoring correction (full-sample quantile regression).
    #[arg(long)]
    no_censoring_correction: bool,
    /// First-stage grid size.
    #[arg(long)]
    grid_resolution: Option<usize>,
    /// Distribution regression over every distinct value of d.
    #[arg(long)]
    dr_full_grid: bool,
    /// Master seed recorded in outputs and driving all resampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bootstrap repetitions (bootstrap subcommand; default 200).
    #[arg(long)]
    b: Option<usize>,
    /// Weight distribution: exponential | two-point:VARIANCE.
    #[arg(long)]
    weights: Option<String>,
    /// Disable the unit-variance normalization of custom weights.
    #[arg(long)]
    no_normalize_weights: bool,
    /// Per-draw selection: refit | fixed.
    #[arg(long)]
    refit_selection: Option<String>,
    /// Confidence level (default 0.95).
    #[arg(long)]
    level: Option<f64>,
    /// Also write the raw draw-by-draw coefficient table.
    #[arg(long)]
    dump_draws: bool,
}

impl EstimationArgs {
    fn to_overlay(&self) -> RunConfig {
        RunConfig {
            data: self.data.clone(),
            y: self.y.clone(),
            d: self.d.clone(),
            w: self.w.clone(),
            z: self.z.clone(),
            c_col: self.c_col.clone(),
            c_value: self.c_value,
            quantiles: self.quantiles.clone(),
            control: self.control.clone(),
            transform: self.transform.clone(),
            d_squared: self.d_squared.then_some(true),
            link: self.link.clone(),
            q0: self.q0,
            q1: self.q1,
            max_extra_iterations: self.max_extra_iterations,
            retain_best: self.no_retain_best.then_some(false),
            grid_resolution: self.grid_resolution,
            dr_full_grid: self.dr_full_grid.then_some(true),
            censoring_correction: self.no_censoring_correction.then_some(false),
            seed: self.seed,
            out: self.out.clone(),
            b: self.b,
            weights: self.weights.clone(),
            normalize_weights: self.no_normalize_weights.then_some(false),
            refit_selection: self.refit_selection.clone(),
            level: self.level,
            dump_draws: self.dump_draws.then_some(true),
        }
    }

    fn resolve(&self) -> Result<config::ResolvedRun, CliError> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        resolve_run(base.overlaid(self.to_overlay()))
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// homoskedastic | heteroskedastic.
    #[arg(long, default_value = "homoskedastic")]
    design: String,
    /// Sample size per replication.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Number of replications.
    #[arg(long, default_value_t = 100)]
    replications: usize,
    /// First-stage endogeneity correlation (default 0.9).
    #[arg(long)]
    rho0: Option<f64>,
    /// Censoring quantile of the latent response (default 0.38).
    #[arg(long)]
    censor_quantile: Option<f64>,
    /// Cap quantile of the lognormal covariate (default 0.95).
    #[arg(long)]
    w_cap_quantile: Option<f64>,
    /// Estimators to run (comma separated; default: the full battery).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Quantile grid (default 0.05,0.10,…,0.95).
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Directory holding results.csv and run.json from a fit run.
    #[arg(long)]
    fit_dir: PathBuf,
    /// Lower end of the d grid.
    #[arg(long, allow_negative_numbers = true)]
    d_min: f64,
    /// Upper end of the d grid.
    #[arg(long, allow_negative_numbers = true)]
    d_max: f64,
    /// Number of grid points (default 50).
    #[arg(long, default_value_t = 50)]
    d_steps: usize,
    /// Covariate value(s): one curve per value for single-covariate fits,
    /// one full profile for multi-covariate fits.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    w_values: Option<Vec<f64>>,
    /// Control values in (0,1); defaults to the fitted quartiles.
    #[arg(long, value_delimiter = ',')]
    v_values: Option<Vec<f64>>,
    /// Censoring point for the curves (defaults to the fit's constant).
    #[arg(long, allow_negative_numbers = true)]
    c_value: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Fit(args) => args.resolve().and_then(|run| commands::cmd_fit(&run)),
        Command::Bootstrap(args) => {
            args.resolve().and_then(|run| commands::cmd_bootstrap(&run))
        }
        Command::Diagnose(args) => args.resolve().and_then(|run| commands::cmd_diagnose(&run)),
        Command::Simulate(args) => resolve_simulate(
            &args.design,
            args.n,
            args.rho0,
            args.censor_quantile,
            args.w_cap_quantile,
            args.estimators.as_deref(),
            args.quantiles.clone(),
            args.replications,
            args.seed,
            args.out.clone(),
        )
        .and_then(|run| commands::cmd_simulate(&run)),
        Command::Predict(args) => commands::cmd_predict(&PredictRun {
            fit_dir: args.fit_dir.clone(),
            d_min: args.d_min,
            d_max: args.d_max,
            d_steps: args.d_steps,
            w_values: args.w_values.clone().unwrap_or_default(),
            v_values: args.v_values.clone(),
            censoring: args.c_value,
            out_dir: args.out.clone(),
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
