//! Front end for the `twist` experiment runner.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use twist_core::dynamics::PerturbationModel;
use twist_core::phase::{FrequencyModel, Observable};
use twist_core::sampling::{InitialDensity, SeedPlan};
use twist_core::stats::Ensemble;

pub use config::ExperimentConfig;
pub use error::CliError;
use output::Sink;

#[derive(Debug, Parser)]
#[command(name = "twist", version, about = "Ensemble experiments for integrable twist maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// TOML experiment file; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `run.master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the hardware parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Use `clt.full_scale_replicas` instead of `clt.replicas`.
    #[arg(long, global = true)]
    pub full_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Phase-space dumps, ensemble means and the centroid envelope.
    Simulate,
    /// Spectral-oracle means, Cesàro averages and the limit value.
    Oracle,
    /// Monte Carlo against the oracle with z-scores.
    Compare,
    /// Central-limit experiment over the replica ladder.
    Clt,
    /// Lag covariances and the long-run variance.
    Covariance,
    /// Resonant process whose Cesàro average does not converge.
    Counterexample,
    /// Scan `k·ω(I)` for resonances.
    CheckNonresonance,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Oracle => "oracle",
            Command::Compare => "compare",
            Command::Clt => "clt",
            Command::Covariance => "covariance",
            Command::Counterexample => "counterexample",
            Command::CheckNonresonance => "check-nonresonance",
        }
    }
}

/// Engine objects built from a validated config.
pub struct Setup {
    pub config: ExperimentConfig,
    pub model: FrequencyModel,
    pub density: InitialDensity,
    pub observable: Observable,
    pub noise: PerturbationModel,
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self, CliError> {
        config.validate()?;
        Ok(Self {
            model: config.frequency_model()?,
            density: config.density()?,
            observable: config.observable()?,
            noise: config.noise()?,
            config,
        })
    }

    pub fn plan(&self) -> SeedPlan {
        SeedPlan::new(self.config.run.master_seed)
    }

    pub fn ensemble(&self) -> Ensemble<'_> {
        self.ensemble_with(&self.noise)
    }

    pub fn ensemble_with<'a>(&'a self, noise: &'a PerturbationModel) -> Ensemble<'a> {
        Ensemble {
            observable: &self.observable,
            density: &self.density,
            model: &self.model,
            noise,
            plan: self.plan(),
        }
    }
}

/// The config a run actually uses, after the command-line overrides.
pub fn effective_config(args: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.run.master_seed = seed;
    }
    if args.full_scale {
        cfg.clt.replicas = cfg.clt.full_scale_replicas;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run one command; returns the files written.
pub fn execute(command: Command, args: &CommonArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = effective_config(args)?;
    let work = || -> Result<Vec<PathBuf>, CliError> {
        let setup = Setup::new(cfg.clone())?;
        let mut sink = Sink::create(&args.out, &cfg.hash(), cfg.run.master_seed, command.name())?;
        sink.text("effective_config.toml", &cfg.to_toml())?;
        let result = match command {
            Command::Simulate => commands::simulate::run(&setup, &mut sink),
            Command::Oracle => commands::oracle::run(&setup, &mut sink),
            Command::Compare => commands::compare::run(&setup, &mut sink),
            Command::Clt => commands::clt::run(&setup, &mut sink),
            Command::Covariance => commands::covariance::run(&setup, &mut sink),
            Command::Counterexample => commands::counterexample::run(&setup, &mut sink),
            Command::CheckNonresonance => commands::nonresonance::run(&setup, &mut sink),
        };
        result.map(|()| sink.written().to_vec())
    };
    match args.threads {
        Some(0) => Err(CliError::Usage("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, &cli.common) {
        Ok(files) => {
            println!("{}: wrote {} files to {}", cli.command.name(), files.len(), cli.common.out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
