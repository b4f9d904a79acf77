//! Explore-then-commit Lasso fitted-Q iteration.
//!
//! The agent plays uniformly for `N₁` episodes, splits those episodes into
//! `H` contiguous blocks, fits `ŵ_h` on block `D_h` alone (backwards from
//! `h = H`), then acts greedily with the frozen weights.

use std::ops::Range;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::{self, GramAccumulator, LassoParams};
use crate::mdp::{
    greedy_on_weights, target_value_with, ActionId, Agent, Decision, EpisodeTelemetry, EpisodeTrace,
    Environment,
};
use crate::rdrlvi::{nnz, WeightBank};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum N1Mode {
    /// `H^{4/3} N^{2/3} s★^{2/3} / σ_E`.
    Reduced,
    /// `(2048 s★² H⁴ N² σ_E^{−2} log(2dH/δ))^{1/3}`.
    Theory,
    Manual(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FqiConfig {
    pub n1_mode: N1Mode,
    pub sigma_e: f64,
    pub s_star: usize,
    pub delta: f64,
    pub lasso: LassoParams,
}

impl FqiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_e > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma_e must be positive, got {}", self.sigma_e)));
        }
        if self.s_star == 0 {
            return Err(Error::InvalidConfig("s_star must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if self.n1_mode == N1Mode::Manual(0) {
            return Err(Error::InvalidConfig("manual N1 must be >= 1".into()));
        }
        Ok(())
    }
}

/// Number of exploration episodes, clamped to `[1, N]`.
pub fn n1_explore(episodes: usize, horizon: usize, d: usize, config: &FqiConfig) -> usize {
    let (n, h, s) = (episodes as f64, horizon as f64, config.s_star as f64);
    let raw = match config.n1_mode {
        N1Mode::Manual(v) => v as f64,
        N1Mode::Reduced => h.powf(4.0 / 3.0) * n.powf(2.0 / 3.0) * s.powf(2.0 / 3.0) / config.sigma_e,
        N1Mode::Theory => {
            let log = (2.0 * d as f64 * h / config.delta).ln();
            (2048.0 * s * s * h.powi(4) * n * n * log / (config.sigma_e * config.sigma_e)).cbrt()
        }
    };
    (raw.ceil() as usize).clamp(1, episodes.max(1))
}

/// Splits episodes `1..=n` into `H` contiguous near-equal blocks.
///
/// Returns `blocks[h − 1] = D_h` as 1-based episode ranges. `D_H` holds the
/// earliest episodes; earlier blocks in time get the extra episode when `n`
/// is not a multiple of `H`.
pub fn partition_episodes(n_explore: usize, horizon: usize) -> Result<Vec<Range<usize>>> {
    if horizon == 0 || n_explore < horizon {
        return Err(Error::InvalidInput(format!("cannot split {n_explore} episodes into {horizon} blocks")));
    }
    let base = n_explore / horizon;
    let extra = n_explore % horizon;
    let mut blocks = vec![0..0; horizon];
    let mut start = 1;
    for (t, h) in (1..=horizon).rev().enumerate() {
        let len = base + usize::from(t < extra);
        blocks[h - 1] = start..start + len;
        start += len;
    }
    Ok(blocks)
}

/// `H √(|D_h| · H · log(2dH/δ))`.
pub fn block_lambda(block_len: usize, horizon: usize, d: usize, delta: f64) -> f64 {
    let h = horizon as f64;
    h * (block_len as f64 * h * (2.0 * d as f64 * h / delta).ln()).sqrt()
}

/// Backward per-block fits on the exploration traces (episode `τ` is
/// `traces[τ − 1]`).
pub fn fit_all<E: Environment + ?Sized>(
    traces: &[EpisodeTrace<E::State>],
    env: &E,
    config: &FqiConfig,
) -> Result<WeightBank> {
    let (horizon, d) = (env.horizon(), env.feature_dim());
    let blocks = partition_episodes(traces.len(), horizon)?;
    let mut bank = WeightBank::zeros(horizon, d);
    let mut scratch = vec![0.0; env.action_count()];
    let mut phi = vec![0.0; d];
    for h in (1..=horizon).rev() {
        let block = &blocks[h - 1];
        let mut acc = GramAccumulator::new(d);
        for trace in &traces[block.start - 1..block.end - 1] {
            for (k, p) in trace.periods.iter().enumerate() {
                let y = target_value_with(env, bank.est(h + 1), trace.next_state(k), &mut scratch);
                env.feature_into(&p.state, p.action, &mut phi);
                acc.push_row(&phi, y)?;
            }
        }
        let lambda = block_lambda(block.len(), horizon, d, config.delta);
        let sol = lasso::solve(&acc, lambda, None, config.lasso)?;
        bank.set_est(h, sol.weights);
    }
    Ok(bank)
}

pub struct LassoFqiAgent<S> {
    config: FqiConfig,
    n1: usize,
    horizon: usize,
    k: usize,
    bank: WeightBank,
    explored: Vec<EpisodeTrace<S>>,
    committed: bool,
}

impl<S: Clone> LassoFqiAgent<S> {
    pub fn new<E: Environment<State = S> + ?Sized>(env: &E, config: FqiConfig, episodes: usize) -> Result<Self> {
        config.validate()?;
        let n1 = n1_explore(episodes, env.horizon(), env.feature_dim(), &config);
        if n1 < env.horizon() {
            return Err(Error::InvalidConfig(format!("N1={n1} is below H={}", env.horizon())));
        }
        Ok(Self {
            config,
            n1,
            horizon: env.horizon(),
            k: env.action_count(),
            bank: WeightBank::zeros(env.horizon(), env.feature_dim()),
            explored: Vec::new(),
            committed: false,
        })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn committed(&self) -> bool {
        self.committed
    }

    pub fn bank(&self) -> &WeightBank {
        &self.bank
    }
}

impl<E: Environment + ?Sized> Agent<E> for LassoFqiAgent<E::State> {
    fn act(&mut self, env: &E, state: &E::State, h: usize, n: usize, rng: &mut dyn RngCore) -> Decision {
        if n <= self.n1 {
            Decision { action: ActionId::from_index(rng.random_range(0..self.k)), pseudo: None, matched: false }
        } else {
            Decision::plain(greedy_on_weights(env, self.bank.est(h + 1), state))
        }
    }

    fn action_distribution(&self, env: &E, state: &E::State, h: usize, n: usize) -> Vec<f64> {
        if n <= self.n1 {
            vec![1.0 / self.k as f64; self.k]
        } else {
            let mut p = vec![0.0; self.k];
            p[greedy_on_weights(env, self.bank.est(h + 1), state).index()] = 1.0;
            p
        }
    }

    fn end_episode(&mut self, env: &E, trace: &EpisodeTrace<E::State>) -> Result<EpisodeTelemetry> {
        let n = trace.episode;
        let exploring = n <= self.n1;
        let mut telemetry = EpisodeTelemetry { matched: vec![exploring; self.horizon], ..Default::default() };
        if exploring {
            self.explored.push(trace.clone());
            if n == self.n1 {
                self.bank = fit_all(&self.explored, env, &self.config)?;
                self.committed = true;
                self.explored = Vec::new();
                telemetry.updated = true;
            }
        }
        telemetry.nnz_est = (1..=self.horizon).map(|h| nnz(self.bank.est(h))).collect();
        Ok(telemetry)
    }
}
