//! Command-line front end: data preparation, run configuration and the commands that
//! write traces, surfaces and validation reports.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{Command, Invocation};
use crate::config::{Overrides, StrategyName};

#[derive(Debug, Parser)]
#[command(name = "boop", version, about = "Precision-aware Bayesian optimization of MCMC-estimated objectives")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,

    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    pub strategy: Option<StrategyArg>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Model data CSV, or the trace to fit for `surface-export`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,

    /// Acquisition-driven evaluations after the initial ones.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Verb {
    /// Maximize the objective and write the trace and a comparison with the reference point.
    Optimize,
    /// Evaluate the objective on a regular grid.
    Grid,
    /// Compare both strategies on the synthetic objective over several seeds.
    Benchmark,
    /// Check the marginal likelihood estimator against closed-form answers.
    ChibValidate,
    /// Surrogate mean and sd over the first two coordinates, from a saved trace.
    SurfaceExport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Boop,
    #[value(name = "bo-ei")]
    BoEi,
}

impl Cli {
    pub fn invocation(&self) -> Invocation {
        let command = match self.verb {
            Verb::Optimize => Command::Optimize,
            Verb::Grid => Command::Grid,
            Verb::Benchmark => Command::Benchmark,
            Verb::ChibValidate => Command::ChibValidate,
            Verb::SurfaceExport => Command::SurfaceExport,
        };
        let strategy = self.strategy.map(|s| match s {
            StrategyArg::Boop => StrategyName::Boop,
            StrategyArg::BoEi => StrategyName::BoEi,
        });
        Invocation {
            command,
            config: self.config.clone(),
            overrides: Overrides { seed: self.seed, strategy, data: self.data.clone(), iterations: self.iterations },
            out: self.out.clone(),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(&cli.invocation()) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.exit_code());
            e.exit_code()
        }
    }
}
