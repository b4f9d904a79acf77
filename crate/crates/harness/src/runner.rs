//! Parallel execution of (cell, replication) tasks.

use rayon::prelude::*;
use rdrlvi_core::experiment::{replication_seed, run_collect, AlgorithmSpec, RegretRecord, RunOptions};
use rdrlvi_core::synthetic::{SyntheticConfig, SyntheticEnv};
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::output::{episode_row, mean_sd, telemetry_row, MeanSd, Writer, EPISODE_HEADER, TELEMETRY_HEADER};

/// One experimental condition.
#[derive(Debug, Clone)]
pub struct Cell {
    pub run_id: String,
    pub env: SyntheticConfig,
    pub spec: AlgorithmSpec,
    pub episodes: usize,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    /// `replications[r]` holds one record per episode.
    pub replications: Vec<Vec<RegretRecord>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub run_id: String,
    pub algorithm: &'static str,
    pub d: usize,
    pub s_star: usize,
    pub sigma: f64,
    pub sigma_u: f64,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "N")]
    pub episodes: usize,
    pub final_cum_regret: Vec<f64>,
    pub cum_regret: MeanSd,
    pub nnz_mean: f64,
}

impl CellResult {
    pub fn final_regrets(&self) -> Vec<f64> {
        self.replications.iter().map(|r| r.last().map_or(0.0, |x| x.cum_regret)).collect()
    }

    /// Per-episode mean and sd of `f` across replications.
    pub fn curve(&self, f: impl Fn(&RegretRecord) -> f64) -> Vec<MeanSd> {
        (0..self.cell.episodes)
            .map(|n| mean_sd(&self.replications.iter().map(|r| f(&r[n])).collect::<Vec<_>>()))
            .collect()
    }

    pub fn summary(&self) -> CellSummary {
        let finals = self.final_regrets();
        let rows: Vec<f64> = self.replications.iter().flatten().map(|r| r.nnz_mean).collect();
        CellSummary {
            run_id: self.cell.run_id.clone(),
            algorithm: self.cell.spec.name.as_str(),
            d: self.cell.env.d,
            s_star: self.cell.env.s_star,
            sigma: self.cell.env.sigma,
            sigma_u: self.cell.env.sigma / 6.0,
            horizon: self.cell.env.horizon,
            episodes: self.cell.episodes,
            cum_regret: mean_sd(&finals),
            final_cum_regret: finals,
            nnz_mean: mean_sd(&rows).mean,
        }
    }
}

pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| HarnessError::Runtime(e.to_string()))
}

/// Runs every cell for `replications` seeds. Replication `r` of every cell
/// uses the same seed, so cells are paired.
pub fn run_cells(
    cells: &[Cell],
    replications: usize,
    base_seed: u64,
    threads: usize,
    options: RunOptions,
) -> Result<Vec<CellResult>> {
    let envs = cells.iter().map(|c| SyntheticEnv::new(c.env)).collect::<rdrlvi_core::Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..replications).map(move |r| (c, r))).collect();
    let results: Vec<rdrlvi_core::Result<Vec<RegretRecord>>> = pool(threads)?.install(|| {
        tasks
            .par_iter()
            .map(|&(c, r)| {
                log::debug!("cell {} replication {r}", cells[c].run_id);
                run_collect(&envs[c], &cells[c].spec, cells[c].episodes, replication_seed(base_seed, r), options)
            })
            .collect()
    });
    let mut out: Vec<CellResult> =
        cells.iter().map(|c| CellResult { cell: c.clone(), replications: Vec::with_capacity(replications) }).collect();
    for ((c, _), res) in tasks.into_iter().zip(results) {
        out[c].replications.push(res?);
    }
    Ok(out)
}

/// Writes `episodes.csv` and `telemetry.csv` in (cell, replication) order.
pub fn write_records(dir: &std::path::Path, results: &[CellResult]) -> Result<()> {
    let mut episodes = Writer::create(&dir.join("episodes.csv"), EPISODE_HEADER)?;
    let mut telemetry = Writer::create(&dir.join("telemetry.csv"), TELEMETRY_HEADER)?;
    for res in results {
        for (r, records) in res.replications.iter().enumerate() {
            for rec in records {
                episodes.line(&episode_row(&res.cell.run_id, r, rec))?;
                telemetry.line(&telemetry_row(&res.cell.run_id, r, rec))?;
            }
        }
    }
    episodes.finish()?;
    telemetry.finish()
}
