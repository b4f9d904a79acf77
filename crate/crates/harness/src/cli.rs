//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rdrlvi_core::diagnostics::RmeOptions;

use crate::config::{ExperimentConfig, Overrides};
use crate::error::{HarnessError, Result};
use crate::experiments::{self, DiagnoseOptions};
use crate::plot::{self, PlotSpec};

#[derive(Debug, Parser)]
#[command(name = "rdrlvi", version, about = "Sparse linear MDP regret experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON experiment config; a built-in preset is used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub replications: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one algorithm on one environment.
    Run,
    /// Sweep σ_U (σ = 6σ_U) and fit log-log slopes.
    SweepSigma {
        /// Comma-separated σ_U values.
        #[arg(long, value_delimiter = ',', default_values_t = default_sigma_grid())]
        grid: Vec<f64>,
        /// σ_U range `LO,HI` for the right regression line (default: upper half of the grid).
        #[arg(long, value_delimiter = ',', num_args = 2)]
        right: Option<Vec<f64>>,
        /// σ_U range `LO,HI` for the flat-phase regression line.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        flat: Option<Vec<f64>>,
    },
    /// Sweep the ambient dimension d.
    SweepD {
        #[arg(long, value_delimiter = ',', default_values_t = vec![50, 100, 200])]
        grid: Vec<usize>,
    },
    /// RDRLVI against Lasso-FQI on paired seeds.
    Compare,
    /// Gram-matrix and RME report under the uniform policy.
    Diagnose {
        /// Episodes of uniform play to collect.
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 100_000)]
        subset_budget: u64,
        #[arg(long, default_value_t = 10_000)]
        directions: usize,
    },
    /// Render a CSV produced by this tool as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "episode")]
        x: String,
        #[arg(long, default_value = "cum_regret")]
        y: String,
        /// Column naming the series; rows with equal series and x are averaged.
        #[arg(long)]
        series: Option<String>,
        /// Column holding a precomputed spread for the shaded band.
        #[arg(long)]
        sd: Option<String>,
        #[arg(long)]
        log_x: bool,
        #[arg(long)]
        log_y: bool,
        /// x-range `LO,HI` for a log-log regression overlay.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        fit: Option<Vec<f64>>,
        #[arg(long, default_value = "")]
        title: String,
    },
}

fn default_sigma_grid() -> Vec<f64> {
    vec![0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5]
}

fn pair(v: &Option<Vec<f64>>) -> Option<(f64, f64)> {
    v.as_ref().map(|v| (v[0], v[1]))
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, out: self.out.clone(), threads: self.threads, replications: self.replications }
    }

    fn load(&self, preset: fn() -> ExperimentConfig) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => preset(),
        };
        c.apply(&self.overrides());
        c.validate()?;
        Ok(c)
    }
}

fn to_text<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

/// Runs the command and returns a short human-readable report.
pub fn execute(cli: &Cli) -> Result<String> {
    let g = &cli.global;
    match &cli.command {
        Command::Run => {
            let c = g.load(ExperimentConfig::flat_d_preset)?;
            let (outcome, _) = experiments::run(&c)?;
            Ok(to_text(&outcome.cells))
        }
        Command::SweepSigma { grid, right, flat } => {
            let c = g.load(ExperimentConfig::sigma_sweep_preset)?;
            let (outcome, _) = experiments::sweep_sigma(&c, grid, pair(right), pair(flat))?;
            Ok(to_text(&outcome.slopes))
        }
        Command::SweepD { grid } => {
            let c = g.load(ExperimentConfig::flat_d_preset)?;
            let (outcome, _) = experiments::sweep_d(&c, grid)?;
            Ok(to_text(&outcome.cells))
        }
        Command::Compare => {
            let c = g.load(ExperimentConfig::compare_preset)?;
            let (outcome, _) = experiments::compare(&c)?;
            Ok(to_text(&outcome.comparison))
        }
        Command::Diagnose { episodes, subset_budget, directions } => {
            let c = g.load(ExperimentConfig::sigma_sweep_preset)?;
            let rme = RmeOptions { subset_budget: *subset_budget, direction_samples: *directions, marked: None };
            let report = experiments::diagnose(&c, &DiagnoseOptions { episodes: *episodes, rme })?;
            Ok(to_text(&report))
        }
        Command::Plot { input, output, x, y, series, sd, log_x, log_y, fit, title } => {
            let spec = PlotSpec {
                x: x.clone(),
                y: y.clone(),
                series: series.clone(),
                sd: sd.clone(),
                log_x: *log_x,
                log_y: *log_y,
                fit: pair(fit),
                title: title.clone(),
            };
            plot::plot_file(input, &spec, output)?;
            Ok(format!("wrote {}", output.display()))
        }
    }
}

impl From<clap::Error> for HarnessError {
    fn from(e: clap::Error) -> Self {
        HarnessError::Config(e.to_string())
    }
}
