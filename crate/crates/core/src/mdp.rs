//! Environment and agent abstractions shared by every algorithm.
//!
//! States are opaque to agents: an agent only sees feature vectors and
//! rewards through the [`Environment`] trait. Periods `h` and episodes `n`
//! are 1-based throughout, matching [`ActionId`].

use std::fmt::Debug;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 1-based action index in `[1, K]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(usize);

impl ActionId {
    pub fn new(action: usize, count: usize) -> Result<Self> {
        if action == 0 || action > count {
            return Err(Error::ActionOutOfRange { action, count });
        }
        Ok(Self(action))
    }

    /// Builds an action from a 0-based index. The caller guarantees the range.
    pub fn from_index(index: usize) -> Self {
        Self(index + 1)
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// 0-based position, for indexing per-action arrays.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl std::fmt::Display for ActionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An episodic MDP with a known feature map and a known deterministic reward.
///
/// Implementations must be shareable read-only across threads; all
/// randomness comes from the rng passed in.
pub trait Environment: Sync {
    type State: Clone + Debug + Send + Sync;

    fn horizon(&self) -> usize;
    fn action_count(&self) -> usize;
    fn feature_dim(&self) -> usize;
    /// Bound on `|φ(x, a)[i]|` over all states, actions and coordinates.
    fn phi_max(&self) -> f64;

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Self::State;
    fn feature_into(&self, state: &Self::State, action: ActionId, out: &mut [f64]);
    fn reward(&self, state: &Self::State, action: ActionId) -> f64;
    fn step(&self, state: &Self::State, action: ActionId, rng: &mut dyn RngCore) -> Self::State;

    fn feature(&self, state: &Self::State, action: ActionId) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim()];
        self.feature_into(state, action, &mut out);
        out
    }

    /// Writes `φ(state, a)ᵀ w` for every action into `out` (length K).
    ///
    /// Environments with structured features should override this; the
    /// value-iteration inner loops call it once per stored sample.
    fn feature_dots(&self, state: &Self::State, w: &[f64], out: &mut [f64]) {
        let mut buf = vec![0.0; self.feature_dim()];
        for (i, slot) in out.iter_mut().enumerate() {
            self.feature_into(state, ActionId::from_index(i), &mut buf);
            *slot = dot(&buf, w);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projection onto `[0, H]`.
pub fn clip_to_horizon(v: f64, horizon: usize) -> f64 {
    v.clamp(0.0, horizon as f64)
}

/// `Q̂_w(x, a) = r(x, a) + φ(x, a)ᵀ w`.
pub fn q_hat<E: Environment + ?Sized>(
    w: &[f64],
    state: &E::State,
    action: ActionId,
    env: &E,
) -> Result<f64> {
    if w.len() != env.feature_dim() {
        return Err(Error::DimensionMismatch { expected: env.feature_dim(), actual: w.len() });
    }
    Ok(env.reward(state, action) + dot(&env.feature(state, action), w))
}

/// `Q̂_w(x, ·)` for all K actions.
pub fn q_values<E: Environment + ?Sized>(env: &E, w: &[f64], state: &E::State) -> Vec<f64> {
    let mut out = vec![0.0; env.action_count()];
    q_values_into(env, w, state, &mut out);
    out
}

pub fn q_values_into<E: Environment + ?Sized>(env: &E, w: &[f64], state: &E::State, out: &mut [f64]) {
    env.feature_dots(state, w, out);
    for (i, q) in out.iter_mut().enumerate() {
        *q += env.reward(state, ActionId::from_index(i));
    }
}

/// `Ŷ_w = Π_[0,H](max_a' Q̂_w(x', a'))`.
pub fn target_value<E: Environment + ?Sized>(w: &[f64], next_state: &E::State, env: &E) -> f64 {
    let mut buf = vec![0.0; env.action_count()];
    target_value_with(env, w, next_state, &mut buf)
}

/// Same as [`target_value`] with a caller-provided scratch buffer of length K.
pub fn target_value_with<E: Environment + ?Sized>(
    env: &E,
    w: &[f64],
    next_state: &E::State,
    scratch: &mut [f64],
) -> f64 {
    q_values_into(env, w, next_state, scratch);
    let best = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    clip_to_horizon(best, env.horizon())
}

/// Argmax with ties broken to the lowest action index.
pub fn greedy_action(values: &[f64]) -> ActionId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    ActionId::from_index(best)
}

/// Greedy action on clipped `Q̂_w(x, ·)`.
pub fn greedy_on_weights<E: Environment + ?Sized>(env: &E, w: &[f64], state: &E::State) -> ActionId {
    let mut q = q_values(env, w, state);
    for v in &mut q {
        *v = clip_to_horizon(*v, env.horizon());
    }
    greedy_action(&q)
}

/// What the agent did in one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub action: ActionId,
    pub pseudo: Option<ActionId>,
    pub matched: bool,
}

impl Decision {
    pub fn plain(action: ActionId) -> Self {
        Self { action, pseudo: None, matched: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord<S> {
    pub state: S,
    pub action: ActionId,
    pub pseudo: Option<ActionId>,
    pub matched: bool,
    pub reward: f64,
}

/// Raw data of one episode: `H` period records plus the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace<S> {
    pub episode: usize,
    pub periods: Vec<PeriodRecord<S>>,
    pub terminal: S,
}

impl<S> EpisodeTrace<S> {
    pub fn initial_state(&self) -> &S {
        &self.periods[0].state
    }

    /// State observed after period `k` (0-based): `x_{k+2}` in 1-based terms.
    pub fn next_state(&self, k: usize) -> &S {
        self.periods.get(k + 1).map(|p| &p.state).unwrap_or(&self.terminal)
    }

    pub fn total_reward(&self) -> f64 {
        self.periods.iter().map(|p| p.reward).sum()
    }

    pub fn match_count(&self) -> usize {
        self.periods.iter().filter(|p| p.matched).count()
    }
}

/// Per-episode agent report consumed by the harness.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTelemetry {
    pub eps: f64,
    /// Matched periods (RDRLVI) or exploratory periods (explore-then-commit).
    pub matched: Vec<bool>,
    pub nnz_est: Vec<usize>,
    pub nnz_imp: Vec<usize>,
    pub lasso_iterations: usize,
    pub lasso_unconverged: usize,
    pub updated: bool,
}

impl EpisodeTelemetry {
    pub fn nnz_mean(&self) -> f64 {
        if self.nnz_est.is_empty() {
            0.0
        } else {
            self.nnz_est.iter().sum::<usize>() as f64 / self.nnz_est.len() as f64
        }
    }
}

pub trait Agent<E: Environment + ?Sized> {
    /// Chooses the period-`h` action of episode `n`.
    fn act(&mut self, env: &E, state: &E::State, h: usize, n: usize, rng: &mut dyn RngCore) -> Decision;

    /// Marginal law of the action [`Agent::act`] would play, as K probabilities.
    fn action_distribution(&self, env: &E, state: &E::State, h: usize, n: usize) -> Vec<f64>;

    /// Learns from a finished episode.
    fn end_episode(&mut self, env: &E, trace: &EpisodeTrace<E::State>) -> Result<EpisodeTelemetry>;

    /// Current exploration rate for episode `n`, for telemetry.
    fn epsilon(&self, _n: usize, _horizon: usize) -> f64 {
        0.0
    }
}

/// Plays one episode, drawing the initial state and transitions from `rng`
/// and letting the agent share the same stream.
pub fn rollout<E, A>(env: &E, agent: &mut A, n: usize, rng: &mut dyn RngCore) -> EpisodeTrace<E::State>
where
    E: Environment + ?Sized,
    A: Agent<E> + ?Sized,
{
    let initial = env.sample_initial(rng);
    let mut state = initial;
    let mut periods = Vec::with_capacity(env.horizon());
    for h in 1..=env.horizon() {
        let decision = agent.act(env, &state, h, n, rng);
        let reward = env.reward(&state, decision.action);
        let next = env.step(&state, decision.action, rng);
        periods.push(PeriodRecord {
            state,
            action: decision.action,
            pseudo: decision.pseudo,
            matched: decision.matched,
            reward,
        });
        state = next;
    }
    EpisodeTrace { episode: n, periods, terminal: state }
}

/// Plays one episode from a given initial state with separate rng streams
/// for the environment and the agent, so paired runs see the same contexts.
pub fn rollout_from<E, A>(
    env: &E,
    agent: &mut A,
    n: usize,
    initial: E::State,
    env_rng: &mut dyn RngCore,
    agent_rng: &mut dyn RngCore,
) -> EpisodeTrace<E::State>
where
    E: Environment + ?Sized,
    A: Agent<E> + ?Sized,
{
    let mut state = initial;
    let mut periods = Vec::with_capacity(env.horizon());
    for h in 1..=env.horizon() {
        let decision = agent.act(env, &state, h, n, agent_rng);
        let reward = env.reward(&state, decision.action);
        let next = env.step(&state, decision.action, env_rng);
        periods.push(PeriodRecord {
            state,
            action: decision.action,
            pseudo: decision.pseudo,
            matched: decision.matched,
            reward,
        });
        state = next;
    }
    EpisodeTrace { episode: n, periods, terminal: state }
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clip_examples() {
        assert_eq!(clip_to_horizon(-3.0, 10), 0.0);
        assert_eq!(clip_to_horizon(4.2, 10), 4.2);
        assert_eq!(clip_to_horizon(12.0, 10), 10.0);
    }

    #[test]
    fn action_id_range() {
        assert!(ActionId::new(0, 3).is_err());
        assert!(ActionId::new(4, 3).is_err());
        assert_eq!(ActionId::new(3, 3).unwrap().index(), 2);
    }

    #[test]
    fn q_hat_zero_and_basis() {
        let env = ToyEnv { horizon: 3 };
        let a = ActionId::new(2, 2).unwrap();
        let x = 1usize;
        assert_eq!(q_hat(&[0.0; 3], &x, a, &env).unwrap(), env.reward(&x, a));
        let phi = env.feature(&x, a);
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            assert_eq!(q_hat(&e, &x, a, &env).unwrap(), env.reward(&x, a) + phi[i]);
        }
        assert!(matches!(
            q_hat(&[0.0; 2], &x, a, &env),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn target_value_clamps() {
        let env = ToyEnv { horizon: 3 };
        assert_eq!(target_value(&[0.0; 3], &0, &env), 1.0);
        assert_eq!(target_value(&[-100.0; 3], &0, &env), 0.0);
        assert_eq!(target_value(&[100.0; 3], &0, &env), 3.0);
    }

    #[test]
    fn greedy_ties_lowest() {
        assert_eq!(greedy_action(&[1.0, 1.0, 0.5]).get(), 1);
        assert_eq!(greedy_action(&[0.0, 2.0, 2.0]).get(), 2);
    }

    #[test]
    fn rollout_horizon_one() {
        let env = ToyEnv { horizon: 1 };
        let mut agent = ConstantAgent(ActionId::from_index(1));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trace = rollout(&env, &mut agent, 1, &mut rng);
        assert_eq!(trace.periods.len(), 1);
        assert_eq!(trace.periods[0].reward, env.reward(&trace.periods[0].state, trace.periods[0].action));
    }

    #[test]
    fn rollout_deterministic() {
        let env = ToyEnv { horizon: 6 };
        let run = |seed| {
            let mut agent = ConstantAgent(ActionId::from_index(0));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rollout(&env, &mut agent, 1, &mut rng)
        };
        assert_eq!(run(9), run(9));
    }

    proptest! {
        #[test]
        fn target_value_is_l1_lipschitz(
            w in proptest::collection::vec(-3.0f64..3.0, 3),
            v in proptest::collection::vec(-3.0f64..3.0, 3),
            x in 0usize..3,
        ) {
            let env = ToyEnv { horizon: 2 };
            let l1: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            let gap = (target_value(&w, &x, &env) - target_value(&v, &x, &env)).abs();
            prop_assert!(gap <= l1 * env.phi_max() + 1e-12);
        }

        #[test]
        fn episode_return_bounded(seed in any::<u64>(), a in 0usize..2) {
            let env = ToyEnv { horizon: 5 };
            let mut agent = ConstantAgent(ActionId::from_index(a));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let total = rollout(&env, &mut agent, 1, &mut rng).total_reward();
            prop_assert!((0.0..=5.0).contains(&total));
        }
    }
}
