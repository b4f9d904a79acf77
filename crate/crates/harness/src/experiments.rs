//! The experiment commands. Each writes its artifacts into the configured
//! output directory and returns a machine-readable outcome.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rdrlvi_core::diagnostics::{empirical_gram, min_eigenvalue, rme_bounds, loglog_slope, GramMode, RmeBounds, RmeOptions};
use rdrlvi_core::experiment::{replication_seed, AlgorithmName, RunOptions, Streams, UniformAgent};
use rdrlvi_core::fqi::n1_explore;
use rdrlvi_core::mdp::{rollout_from, Environment};
use rdrlvi_core::synthetic::{analytic_sigma_u, FlagPolicy, SyntheticConfig, SyntheticEnv};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{fmt_sig, mean_sd, write_json, MeanSd, Writer};
use crate::plot::{self, PlotSpec};
use crate::runner::{run_cells, write_records, Cell, CellResult, CellSummary};

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn label(v: f64) -> String {
    fmt_sig(v)
}

fn cell(config: &ExperimentConfig, env: SyntheticConfig, name: AlgorithmName, run_id: String) -> Cell {
    let mut c = config.clone();
    c.env = env;
    Cell { run_id, env, spec: c.spec_for(name), episodes: config.run.episodes }
}

#[derive(Debug, Serialize)]
pub struct RunOutcome {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slopes: Option<SlopeFits>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeFits {
    pub right_range: (f64, f64),
    pub right_slope: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat_range: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat_slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub n1: usize,
    pub rdrlvi_final: MeanSd,
    pub lasso_fqi_final: MeanSd,
    /// Mean instantaneous regret over episodes `1..=N₁`.
    pub lasso_fqi_explore_inst: f64,
    pub rdrlvi_matched_inst: f64,
}

fn finish(config: &ExperimentConfig, command: &'static str, results: &[CellResult]) -> Result<RunOutcome> {
    let dir = &config.run.output_dir;
    write_records(dir, results)?;
    Ok(RunOutcome { command, config: config.clone(), cells: results.iter().map(CellResult::summary).collect(), slopes: None, comparison: None })
}

fn options_for(config: &ExperimentConfig) -> RunOptions {
    RunOptions { track_est_error: matches!(config.algo.name, AlgorithmName::Rdrlvi | AlgorithmName::LassoFqi) }
}

pub fn run(config: &ExperimentConfig) -> Result<(RunOutcome, Vec<CellResult>)> {
    config.validate()?;
    prepare(&config.run.output_dir)?;
    let cells = [cell(config, config.env, config.algo.name, config.algo.name.as_str().into())];
    let results = run_cells(&cells, config.run.replications, config.run.base_seed, config.run.threads, options_for(config))?;
    let outcome = finish(config, "run", &results)?;
    write_json(&config.run.output_dir.join("summary.json"), &outcome)?;
    Ok((outcome, results))
}

fn write_table(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = Writer::create(path, header)?;
    for r in rows {
        w.line(&r)?;
    }
    w.finish()
}

const SWEEP_HEADER: &str = "run_id,d,s_star,sigma,sigma_u,H,N,mean_cum_regret,sd_cum_regret,nnz_mean";

fn sweep_rows(results: &[CellResult]) -> Vec<String> {
    results
        .iter()
        .map(|r| {
            let s = r.summary();
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                s.run_id,
                s.d,
                s.s_star,
                fmt_sig(s.sigma),
                fmt_sig(s.sigma_u),
                s.horizon,
                s.episodes,
                fmt_sig(s.cum_regret.mean),
                fmt_sig(s.cum_regret.sd),
                fmt_sig(s.nnz_mean)
            )
        })
        .collect()
}

fn in_range(x: f64, range: (f64, f64)) -> bool {
    x >= range.0 * (1.0 - 1e-12) && x <= range.1 * (1.0 + 1e-12)
}

/// Slope of log mean regret on log σ_U over cells whose σ_U lies in `range`.
pub fn range_slope(summaries: &[CellSummary], range: (f64, f64)) -> Result<f64> {
    let pts: Vec<(f64, f64)> =
        summaries.iter().filter(|s| in_range(s.sigma_u, range)).map(|s| (s.sigma_u, s.cum_regret.mean)).collect();
    Ok(loglog_slope(&pts)?)
}

/// Upper half of the grid.
pub fn default_right_range(grid: &[f64]) -> (f64, f64) {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    (g[(g.len() - 1) / 2], g[g.len() - 1])
}

pub fn sweep_sigma(
    config: &ExperimentConfig,
    sigma_u_grid: &[f64],
    right: Option<(f64, f64)>,
    flat: Option<(f64, f64)>,
) -> Result<(RunOutcome, Vec<CellResult>)> {
    config.validate()?;
    if sigma_u_grid.len() < 2 || sigma_u_grid.iter().any(|s| !(*s > 0.0)) {
        return Err(HarnessError::Config("sigma grid needs at least two positive values".into()));
    }
    prepare(&config.run.output_dir)?;
    let cells: Vec<Cell> = sigma_u_grid
        .iter()
        .map(|&su| {
            let env = SyntheticConfig { sigma: 6.0 * su, ..config.env };
            cell(config, env, config.algo.name, format!("{}-sigma_u={}", config.algo.name.as_str(), label(su)))
        })
        .collect();
    let results = run_cells(&cells, config.run.replications, config.run.base_seed, config.run.threads, options_for(config))?;
    let mut outcome = finish(config, "sweep-sigma", &results)?;
    let right = right.unwrap_or_else(|| default_right_range(sigma_u_grid));
    let right_slope = range_slope(&outcome.cells, right)?;
    let flat_slope = flat.map(|r| range_slope(&outcome.cells, r)).transpose()?;
    outcome.slopes = Some(SlopeFits { right_range: right, right_slope, flat_range: flat, flat_slope });
    let dir = &config.run.output_dir;
    write_table(&dir.join("sweep.csv"), SWEEP_HEADER, sweep_rows(&results))?;
    write_json(&dir.join("summary.json"), &outcome)?;
    let spec = PlotSpec {
        x: "sigma_u".into(),
        y: "mean_cum_regret".into(),
        series: None,
        sd: Some("sd_cum_regret".into()),
        log_x: true,
        log_y: true,
        fit: Some(right),
        title: "Cumulative regret against sigma_U".into(),
    };
    plot::plot_file(&dir.join("sweep.csv"), &spec, &dir.join("sweep.svg"))?;
    Ok((outcome, results))
}

pub fn sweep_d(config: &ExperimentConfig, d_grid: &[usize]) -> Result<(RunOutcome, Vec<CellResult>)> {
    config.validate()?;
    if d_grid.is_empty() {
        return Err(HarnessError::Config("d grid is empty".into()));
    }
    prepare(&config.run.output_dir)?;
    let mut cells = Vec::with_capacity(d_grid.len());
    for &d in d_grid {
        let env = SyntheticConfig { d, ..config.env };
        env.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        cells.push(cell(config, env, config.algo.name, format!("{}-d={d}", config.algo.name.as_str())));
    }
    let results = run_cells(&cells, config.run.replications, config.run.base_seed, config.run.threads, options_for(config))?;
    let outcome = finish(config, "sweep-d", &results)?;
    let dir = &config.run.output_dir;
    write_table(&dir.join("sweep.csv"), SWEEP_HEADER, sweep_rows(&results))?;
    write_json(&dir.join("summary.json"), &outcome)?;
    let spec = PlotSpec {
        x: "d".into(),
        y: "mean_cum_regret".into(),
        series: None,
        sd: Some("sd_cum_regret".into()),
        log_x: false,
        log_y: false,
        fit: None,
        title: "Cumulative regret against d".into(),
    };
    plot::plot_file(&dir.join("sweep.csv"), &spec, &dir.join("sweep.svg"))?;
    Ok((outcome, results))
}

const COMPARE_HEADER: &str = "algorithm,episode,cum_regret_mean,cum_regret_sd,inst_regret_mean,inst_regret_sd";

pub fn compare(config: &ExperimentConfig) -> Result<(RunOutcome, Vec<CellResult>)> {
    config.validate()?;
    prepare(&config.run.output_dir)?;
    let episodes = config.run.episodes;
    let n1 = n1_explore(episodes, config.env.horizon, config.env.d, &config.spec_for(AlgorithmName::LassoFqi).fqi);
    if n1 >= episodes {
        log::warn!("exploration length N1={n1} reaches N={episodes}; the baseline never commits");
    }
    let cells = [
        cell(config, config.env, AlgorithmName::Rdrlvi, "rdrlvi".into()),
        cell(config, config.env, AlgorithmName::LassoFqi, "lasso_fqi".into()),
    ];
    let results =
        run_cells(&cells, config.run.replications, config.run.base_seed, config.run.threads, RunOptions::default())?;
    let mut outcome = finish(config, "compare", &results)?;

    let explore_mean = |res: &CellResult| {
        let v: Vec<f64> = res.replications.iter().flat_map(|r| r[..n1].iter().map(|x| x.inst_regret)).collect();
        mean_sd(&v).mean
    };
    outcome.comparison = Some(Comparison {
        n1,
        rdrlvi_final: mean_sd(&results[0].final_regrets()),
        lasso_fqi_final: mean_sd(&results[1].final_regrets()),
        lasso_fqi_explore_inst: explore_mean(&results[1]),
        rdrlvi_matched_inst: explore_mean(&results[0]),
    });

    let dir = &config.run.output_dir;
    let mut rows = Vec::new();
    for res in &results {
        let cum = res.curve(|r| r.cum_regret);
        let inst = res.curve(|r| r.inst_regret);
        for (n, (c, i)) in cum.iter().zip(&inst).enumerate() {
            rows.push(format!(
                "{},{},{},{},{},{}",
                res.cell.run_id,
                n + 1,
                fmt_sig(c.mean),
                fmt_sig(c.sd),
                fmt_sig(i.mean),
                fmt_sig(i.sd)
            ));
        }
    }
    write_table(&dir.join("compare.csv"), COMPARE_HEADER, rows)?;
    write_json(&dir.join("summary.json"), &outcome)?;
    let spec = PlotSpec {
        x: "episode".into(),
        y: "cum_regret_mean".into(),
        series: Some("algorithm".into()),
        sd: Some("cum_regret_sd".into()),
        log_x: false,
        log_y: false,
        fit: None,
        title: "Cumulative regret".into(),
    };
    plot::plot_file(&dir.join("compare.csv"), &spec, &dir.join("compare.svg"))?;
    Ok((outcome, results))
}

#[derive(Debug, Clone, Serialize)]
pub struct GramReport {
    pub mode: GramMode,
    pub samples: usize,
    pub min_eigenvalue: f64,
    pub rme: RmeBounds,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    pub config: SyntheticConfig,
    pub episodes: usize,
    pub sparsity: usize,
    pub analytic_sigma_u: f64,
    pub uniform_policy_value: f64,
    pub optimal_value: f64,
    pub played: GramReport,
    pub all_actions: GramReport,
    /// `analytic σ_U ∈ [0.5·lower, 2·upper]` for the all-actions Gram.
    pub bracket_holds: bool,
    pub output: PathBuf,
}

pub struct DiagnoseOptions {
    pub episodes: usize,
    pub rme: RmeOptions,
}

/// Gram and RME report under the uniform policy.
pub fn diagnose(config: &ExperimentConfig, options: &DiagnoseOptions) -> Result<DiagnoseReport> {
    config.env.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    if options.episodes == 0 {
        return Err(HarnessError::Config("diagnose needs at least one episode".into()));
    }
    prepare(&config.run.output_dir)?;
    let env = SyntheticEnv::new(config.env)?;
    let mut streams = Streams::new(replication_seed(config.run.base_seed, 0));
    let mut agent = UniformAgent;
    let traces: Vec<_> = (1..=options.episodes)
        .map(|n| {
            let x = env.sample_initial(&mut streams.context);
            rollout_from(&env, &mut agent, n, x, &mut streams.transition, &mut streams.agent)
        })
        .collect();
    let d = env.feature_dim();
    let s = config.env.s_star;
    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(config.run.base_seed, 1));
    let mut rme = options.rme.clone();
    rme.marked.get_or_insert_with(|| (0..s).collect());
    let mut report = |mode| -> Result<GramReport> {
        let g = empirical_gram(&traces, &env, mode)?;
        Ok(GramReport {
            mode,
            samples: g.samples,
            min_eigenvalue: min_eigenvalue(&g.matrix, d)?,
            rme: rme_bounds(&g.matrix, d, s, &rme, &mut rng)?,
        })
    };
    let played = report(GramMode::PlayedActions)?;
    let all_actions = report(GramMode::AllActions)?;
    let analytic = analytic_sigma_u(config.env.sigma);
    let out = config.run.output_dir.join("diagnose.json");
    let result = DiagnoseReport {
        config: config.env,
        episodes: options.episodes,
        sparsity: s,
        analytic_sigma_u: analytic,
        uniform_policy_value: env.dp_policy_value(&FlagPolicy::uniform(config.env.horizon, s))?,
        optimal_value: env.optimal_initial_value(),
        bracket_holds: analytic >= 0.5 * all_actions.rme.lower && analytic <= 2.0 * all_actions.rme.upper,
        played,
        all_actions,
        output: out.clone(),
    };
    write_json(&out, &result)?;
    Ok(result)
}
