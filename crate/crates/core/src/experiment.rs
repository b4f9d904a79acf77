//! Single-replication regret runs on the synthetic environment.
//!
//! Each episode snapshots the agent's action law at both flags for every
//! period, evaluates it exactly by dynamic programming at the episode's
//! context, then plays and updates.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::barw_target;
use crate::error::{Error, Result};
use crate::fqi::{FqiConfig, LassoFqiAgent};
use crate::mdp::{
    greedy_on_weights, rollout_from, ActionId, Agent, Decision, EpisodeTelemetry, EpisodeTrace, Environment,
};
use crate::rdrlvi::{RdrlviAgent, RdrlviConfig, WeightBank};
use crate::synthetic::{ContextState, Flag, FlagPolicy, SyntheticEnv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Rdrlvi,
    LassoFqi,
    Uniform,
    RewardGreedy,
}

impl AlgorithmName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rdrlvi => "rdrlvi",
            Self::LassoFqi => "lasso_fqi",
            Self::Uniform => "uniform",
            Self::RewardGreedy => "reward_greedy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmSpec {
    pub name: AlgorithmName,
    pub rdrlvi: RdrlviConfig,
    pub fqi: FqiConfig,
}

/// Uniform over all actions, never learns.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformAgent;

impl<E: Environment + ?Sized> Agent<E> for UniformAgent {
    fn act(&mut self, env: &E, _: &E::State, _: usize, _: usize, rng: &mut dyn RngCore) -> Decision {
        Decision::plain(ActionId::from_index(rng.random_range(0..env.action_count())))
    }

    fn action_distribution(&self, env: &E, _: &E::State, _: usize, _: usize) -> Vec<f64> {
        vec![1.0 / env.action_count() as f64; env.action_count()]
    }

    fn end_episode(&mut self, env: &E, _: &EpisodeTrace<E::State>) -> Result<EpisodeTelemetry> {
        Ok(EpisodeTelemetry { eps: 1.0, matched: vec![false; env.horizon()], ..Default::default() })
    }
}

/// Greedy on immediate reward, i.e. on zero weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct RewardGreedyAgent;

impl<E: Environment + ?Sized> Agent<E> for RewardGreedyAgent {
    fn act(&mut self, env: &E, state: &E::State, _: usize, _: usize, _: &mut dyn RngCore) -> Decision {
        Decision::plain(greedy_on_weights(env, &vec![0.0; env.feature_dim()], state))
    }

    fn action_distribution(&self, env: &E, state: &E::State, _: usize, _: usize) -> Vec<f64> {
        let mut p = vec![0.0; env.action_count()];
        p[greedy_on_weights(env, &vec![0.0; env.feature_dim()], state).index()] = 1.0;
        p
    }

    fn end_episode(&mut self, env: &E, _: &EpisodeTrace<E::State>) -> Result<EpisodeTelemetry> {
        Ok(EpisodeTelemetry { matched: vec![false; env.horizon()], ..Default::default() })
    }
}

pub enum AnyAgent {
    Rdrlvi(RdrlviAgent<ContextState>),
    LassoFqi(LassoFqiAgent<ContextState>),
    Uniform(UniformAgent),
    RewardGreedy(RewardGreedyAgent),
}

impl AnyAgent {
    pub fn build(env: &SyntheticEnv, spec: &AlgorithmSpec, episodes: usize) -> Result<Self> {
        Ok(match spec.name {
            AlgorithmName::Rdrlvi => Self::Rdrlvi(RdrlviAgent::new(env, spec.rdrlvi)?),
            AlgorithmName::LassoFqi => Self::LassoFqi(LassoFqiAgent::new(env, spec.fqi, episodes)?),
            AlgorithmName::Uniform => Self::Uniform(UniformAgent),
            AlgorithmName::RewardGreedy => Self::RewardGreedy(RewardGreedyAgent),
        })
    }

    pub fn weights(&self) -> Option<&WeightBank> {
        match self {
            Self::Rdrlvi(a) => Some(a.bank()),
            Self::LassoFqi(a) => Some(a.bank()),
            _ => None,
        }
    }

    fn inner(&self) -> &dyn Agent<SyntheticEnv> {
        match self {
            Self::Rdrlvi(a) => a,
            Self::LassoFqi(a) => a,
            Self::Uniform(a) => a,
            Self::RewardGreedy(a) => a,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Agent<SyntheticEnv> {
        match self {
            Self::Rdrlvi(a) => a,
            Self::LassoFqi(a) => a,
            Self::Uniform(a) => a,
            Self::RewardGreedy(a) => a,
        }
    }
}

impl Agent<SyntheticEnv> for AnyAgent {
    fn act(&mut self, env: &SyntheticEnv, state: &ContextState, h: usize, n: usize, rng: &mut dyn RngCore) -> Decision {
        self.inner_mut().act(env, state, h, n, rng)
    }

    fn action_distribution(&self, env: &SyntheticEnv, state: &ContextState, h: usize, n: usize) -> Vec<f64> {
        self.inner().action_distribution(env, state, h, n)
    }

    fn end_episode(&mut self, env: &SyntheticEnv, trace: &EpisodeTrace<ContextState>) -> Result<EpisodeTelemetry> {
        self.inner_mut().end_episode(env, trace)
    }

    fn epsilon(&self, n: usize, horizon: usize) -> f64 {
        self.inner().epsilon(n, horizon)
    }
}

/// One row of per-episode regret accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub episode: usize,
    pub v_star: f64,
    pub v_policy: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub realized_return: f64,
    pub eps: f64,
    pub match_count: usize,
    pub nnz_mean: f64,
    pub wall_ms: f64,
    /// Mean over `h` of `‖ŵ_h − w̄_h‖₁` after this episode's update.
    pub est_error: Option<f64>,
    pub lasso_iterations: usize,
    pub lasso_unconverged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub track_est_error: bool,
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replication_seed(base_seed: u64, replication: usize) -> u64 {
    base_seed ^ mix(replication as u64)
}

/// Independent streams for contexts, transitions and agent randomness.
///
/// The context stream depends only on the seed, so two algorithms run with
/// the same seed see the same sequence of contexts.
pub struct Streams {
    pub context: ChaCha8Rng,
    pub transition: ChaCha8Rng,
    pub agent: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self { context: stream(0), transition: stream(1), agent: stream(2) }
    }
}

/// The agent's current action law at both flags and all periods.
pub fn policy_snapshot<A: Agent<SyntheticEnv> + ?Sized>(
    env: &SyntheticEnv,
    agent: &A,
    context: &ContextState,
    n: usize,
) -> FlagPolicy {
    let probs = (1..=env.horizon())
        .map(|h| {
            [
                agent.action_distribution(env, &context.with_flag(Flag::Plus), h, n),
                agent.action_distribution(env, &context.with_flag(Flag::Minus), h, n),
            ]
        })
        .collect();
    FlagPolicy { probs }
}

/// Mean of `‖ŵ_h − w̄_h‖₁` over `h = 1..=H` at one context.
pub fn estimation_error(env: &SyntheticEnv, bank: &WeightBank, context: &ContextState) -> Result<f64> {
    let horizon = env.horizon();
    let mut total = 0.0;
    for h in 1..=horizon {
        let target = barw_target(context, bank.est(h + 1), env)?;
        total += bank.est(h).iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    Ok(total / horizon as f64)
}

/// Wall-clock stopwatch; reads zero where the platform has no clock.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Self(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64() * 1e3;
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

/// Runs `episodes` episodes, handing each record to `sink` as it is produced.
pub fn run_replication(
    env: &SyntheticEnv,
    spec: &AlgorithmSpec,
    episodes: usize,
    seed: u64,
    options: RunOptions,
    mut sink: impl FnMut(RegretRecord) -> Result<()>,
) -> Result<()> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("N must be >= 1".into()));
    }
    let mut agent = AnyAgent::build(env, spec, episodes)?;
    let mut streams = Streams::new(seed);
    let v_star = env.optimal_initial_value();
    let mut cum = 0.0;
    for n in 1..=episodes {
        let start = Stopwatch::start();
        let context = env.sample_initial(&mut streams.context);
        let policy = policy_snapshot(env, &agent, &context, n);
        let v_policy = env.dp_policy_value(&policy)?;
        let trace = rollout_from(env, &mut agent, n, context.clone(), &mut streams.transition, &mut streams.agent);
        let telemetry = agent.end_episode(env, &trace)?;
        let est_error = match (options.track_est_error, agent.weights()) {
            (true, Some(bank)) => Some(estimation_error(env, bank, &context)?),
            _ => None,
        };
        let inst = v_star - v_policy;
        cum += inst;
        sink(RegretRecord {
            episode: n,
            v_star,
            v_policy,
            inst_regret: inst,
            cum_regret: cum,
            realized_return: trace.total_reward(),
            eps: telemetry.eps,
            match_count: telemetry.matched.iter().filter(|m| **m).count(),
            nnz_mean: telemetry.nnz_mean(),
            wall_ms: start.elapsed_ms(),
            est_error,
            lasso_iterations: telemetry.lasso_iterations,
            lasso_unconverged: telemetry.lasso_unconverged,
        })?;
    }
    Ok(())
}

/// Convenience wrapper collecting every record.
pub fn run_collect(
    env: &SyntheticEnv,
    spec: &AlgorithmSpec,
    episodes: usize,
    seed: u64,
    options: RunOptions,
) -> Result<Vec<RegretRecord>> {
    let mut out = Vec::with_capacity(episodes);
    run_replication(env, spec, episodes, seed, options, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}
