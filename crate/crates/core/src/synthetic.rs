//! Synthetic sparse linear MDP with a controllable restricted minimum
//! eigenvalue.
//!
//! A state is a frozen ±1 context of length `d`, drawn once per episode,
//! plus a ±1 quality flag. Actions are `1..=s★`. The flag transition and the
//! reward depend only on the flag and on the action (through `ν(a)`), so the
//! planning problem collapses to a two-state chain that is solved exactly by
//! backward induction.
//!
//! With `ν(a) = ((a − 1) mod (s★/4)) + 1`, the feature map is
//!
//! ```text
//! φ(x, a) = σ·(−x₁..−x_{ν−1}, x_ν..x_{s★/2}, −x_{s★/2+1}..−x_{3s★/4−ν+1}, x_{3s★/4−ν+2}..x_d)
//! ```
//!
//! and the flag leaves `+1` with probability `4(ν − 1)/s★`.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, Environment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub d: usize,
    pub s_star: usize,
    pub sigma: f64,
    #[serde(rename = "H")]
    pub horizon: usize,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_star == 0 || self.s_star % 4 != 0 {
            return Err(Error::InvalidConfig(format!("s_star must be a positive multiple of 4, got {}", self.s_star)));
        }
        if self.s_star > self.d {
            return Err(Error::InvalidConfig(format!("s_star={} exceeds d={}", self.s_star, self.d)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("H must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    Plus,
    Minus,
}

impl Flag {
    pub const BOTH: [Flag; 2] = [Flag::Plus, Flag::Minus];

    pub fn value(self) -> i8 {
        match self {
            Flag::Plus => 1,
            Flag::Minus => -1,
        }
    }

    /// 0 for `+1`, 1 for `−1`; indexes two-flag tables.
    pub fn index(self) -> usize {
        match self {
            Flag::Plus => 0,
            Flag::Minus => 1,
        }
    }
}

/// `(x_{1:d}, x_{d+1})`: the episode context and the quality flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextState {
    signs: Arc<[f64]>,
    pub flag: Flag,
}

impl ContextState {
    pub fn new(signs: Vec<f64>, flag: Flag) -> Result<Self> {
        if let Some(bad) = signs.iter().find(|s| **s != 1.0 && **s != -1.0) {
            return Err(Error::InvalidInput(format!("context entries must be ±1, got {bad}")));
        }
        Ok(Self { signs: signs.into(), flag })
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// Same context, different flag. Shares the context buffer.
    pub fn with_flag(&self, flag: Flag) -> Self {
        Self { signs: Arc::clone(&self.signs), flag }
    }
}

/// `((a − 1) mod (s★/4)) + 1`.
pub fn nu(action: ActionId, s_star: usize) -> usize {
    (action.index() % (s_star / 4)) + 1
}

/// Probability that the flag becomes `−1` after playing `action`.
pub fn leave_probability(action: ActionId, s_star: usize) -> f64 {
    4.0 * (nu(action, s_star) - 1) as f64 / s_star as f64
}

pub fn reward_for(flag: Flag, action: ActionId, s_star: usize) -> f64 {
    let a = action.get() as f64;
    let s = s_star as f64;
    match flag {
        Flag::Plus => 1.0 - (a - 1.0) / s,
        Flag::Minus => a / (2.0 * s),
    }
}

/// Sign applied to context coordinate `i` (0-based) under `ν`.
pub fn feature_sign(i: usize, nu: usize, s_star: usize) -> f64 {
    let pos = i + 1;
    let negated = pos < nu || (pos > s_star / 2 && pos <= 3 * s_star / 4 + 1 - nu);
    if negated {
        -1.0
    } else {
        1.0
    }
}

pub fn analytic_sigma_u(sigma: f64) -> f64 {
    sigma / 6.0
}

/// Value tables over the two-flag chain, indexed `[h − 1][flag.index()]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    pub horizon: usize,
    pub values: Vec<[f64; 2]>,
    /// `q[h − 1][flag][a − 1]`.
    pub q: Vec<[Vec<f64>; 2]>,
}

impl DpTable {
    pub fn value(&self, flag: Flag, h: usize) -> f64 {
        if h > self.horizon {
            0.0
        } else {
            self.values[h - 1][flag.index()]
        }
    }
}

/// Per-(period, flag) action distributions, `probs[h − 1][flag.index()]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlagPolicy {
    pub probs: Vec<[Vec<f64>; 2]>,
}

impl FlagPolicy {
    pub fn stationary(horizon: usize, plus: Vec<f64>, minus: Vec<f64>) -> Self {
        Self { probs: vec![[plus, minus]; horizon] }
    }

    pub fn uniform(horizon: usize, k: usize) -> Self {
        let p = vec![1.0 / k as f64; k];
        Self::stationary(horizon, p.clone(), p)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    config: SyntheticConfig,
    optimal: DpTable,
}

impl SyntheticEnv {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let optimal = dp_optimal(config.horizon, config.s_star);
        Ok(Self { config, optimal })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn s_star(&self) -> usize {
        self.config.s_star
    }

    pub fn optimal(&self) -> &DpTable {
        &self.optimal
    }

    /// `V*₁` from the initial flag `+1`.
    pub fn optimal_initial_value(&self) -> f64 {
        self.optimal.value(Flag::Plus, 1)
    }

    /// `ψ(x_{1:d}, g)`: `2/(σ s★)·x_i` on the first (`g = +1`) or second
    /// (`g = −1`) half of the leading `s★` coordinates, zero elsewhere.
    pub fn psi(&self, context: &[f64], target: Flag) -> Vec<f64> {
        let s = self.config.s_star;
        let scale = 2.0 / (self.config.sigma * s as f64);
        let range = match target {
            Flag::Plus => 0..s / 2,
            Flag::Minus => s / 2..s,
        };
        let mut out = vec![0.0; self.config.d];
        for i in range {
            // x⁻¹ = x for x ∈ {±1}.
            out[i] = scale * context[i];
        }
        out
    }

    /// Exact expected return from flag `+1` at period 1 under `policy`.
    pub fn dp_policy_value(&self, policy: &FlagPolicy) -> Result<f64> {
        Ok(self.dp_policy_table(policy)?[0][Flag::Plus.index()])
    }

    /// Backward induction of `V^π(g, h)` for both flags.
    pub fn dp_policy_table(&self, policy: &FlagPolicy) -> Result<Vec<[f64; 2]>> {
        let h_max = self.config.horizon;
        let k = self.config.s_star;
        if policy.probs.len() != h_max {
            return Err(Error::DimensionMismatch { expected: h_max, actual: policy.probs.len() });
        }
        let mut values = vec![[0.0; 2]; h_max];
        let mut next = [0.0f64; 2];
        for h in (1..=h_max).rev() {
            for flag in Flag::BOTH {
                let probs = &policy.probs[h - 1][flag.index()];
                if probs.len() != k {
                    return Err(Error::DimensionMismatch { expected: k, actual: probs.len() });
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 || probs.iter().any(|p| *p < 0.0) {
                    return Err(Error::BadDistribution(total));
                }
                values[h - 1][flag.index()] = probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p * backup(flag, ActionId::from_index(i), k, next))
                    .sum();
            }
            next = values[h - 1];
        }
        Ok(values)
    }
}

/// `r(g, a) + (1 − p(a))·V(+1) + p(a)·V(−1)`.
fn backup(flag: Flag, action: ActionId, s_star: usize, next: [f64; 2]) -> f64 {
    let p = leave_probability(action, s_star);
    reward_for(flag, action, s_star) + (1.0 - p) * next[0] + p * next[1]
}

/// Optimal values of the two-flag chain by backward induction.
pub fn dp_optimal(horizon: usize, s_star: usize) -> DpTable {
    let mut values = vec![[0.0; 2]; horizon];
    let mut q: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; horizon];
    let mut next = [0.0f64; 2];
    for h in (1..=horizon).rev() {
        for flag in Flag::BOTH {
            let row: Vec<f64> = (0..s_star).map(|i| backup(flag, ActionId::from_index(i), s_star, next)).collect();
            values[h - 1][flag.index()] = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            q[h - 1][flag.index()] = row;
        }
        next = values[h - 1];
    }
    DpTable { horizon, values, q }
}

impl Environment for SyntheticEnv {
    type State = ContextState;

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn action_count(&self) -> usize {
        self.config.s_star
    }

    fn feature_dim(&self) -> usize {
        self.config.d
    }

    fn phi_max(&self) -> f64 {
        self.config.sigma
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> ContextState {
        let signs: Vec<f64> = (0..self.config.d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        ContextState { signs: signs.into(), flag: Flag::Plus }
    }

    fn feature_into(&self, state: &ContextState, action: ActionId, out: &mut [f64]) {
        let s = self.config.s_star;
        let v = nu(action, s);
        let sigma = self.config.sigma;
        for (i, (o, x)) in out.iter_mut().zip(state.signs.iter()).enumerate() {
            let sign = if i < s { feature_sign(i, v, s) } else { 1.0 };
            *o = sigma * sign * x;
        }
    }

    fn reward(&self, state: &ContextState, action: ActionId) -> f64 {
        reward_for(state.flag, action, self.config.s_star)
    }

    fn step(&self, state: &ContextState, action: ActionId, rng: &mut dyn RngCore) -> ContextState {
        let p = leave_probability(action, self.config.s_star);
        let flag = if rng.random::<f64>() < p { Flag::Minus } else { Flag::Plus };
        state.with_flag(flag)
    }

    /// `φ(x, a)ᵀw = σ(Σ x_i w_i − 2 Σ_{negated i} x_i w_i)`; the negated set
    /// depends only on `ν(a)`, so this costs `O(d + s★)` for all actions.
    fn feature_dots(&self, state: &ContextState, w: &[f64], out: &mut [f64]) {
        let s = self.config.s_star;
        let sigma = self.config.sigma;
        let mut prefix = Vec::with_capacity(s + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for (x, wi) in state.signs.iter().zip(w).take(s) {
            acc += x * wi;
            prefix.push(acc);
        }
        let tail: f64 = state.signs.iter().zip(w).skip(s).map(|(x, wi)| x * wi).sum();
        let base = acc + tail;
        let quarter = s / 4;
        let mut by_nu = vec![0.0; quarter];
        for (j, slot) in by_nu.iter_mut().enumerate() {
            let v = j + 1;
            // Positions 1..v−1 and s★/2+1..3s★/4−v+1 (1-based) are negated.
            let first = prefix[v - 1];
            let second = prefix[3 * quarter + 1 - v] - prefix[2 * quarter];
            *slot = sigma * (base - 2.0 * (first + second));
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = by_nu[i % quarter];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{dot, q_hat, target_value};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env(d: usize, s_star: usize, sigma: f64, horizon: usize) -> SyntheticEnv {
        SyntheticEnv::new(SyntheticConfig { d, s_star, sigma, horizon }).unwrap()
    }

    fn a(i: usize) -> ActionId {
        ActionId::from_index(i - 1)
    }

    #[test]
    fn config_validation() {
        assert!(SyntheticConfig { d: 10, s_star: 6, sigma: 1.0, horizon: 2 }.validate().is_err());
        assert!(SyntheticConfig { d: 4, s_star: 8, sigma: 1.0, horizon: 2 }.validate().is_err());
        assert!(SyntheticConfig { d: 8, s_star: 8, sigma: 0.0, horizon: 2 }.validate().is_err());
        assert!(SyntheticConfig { d: 8, s_star: 8, sigma: 1.0, horizon: 0 }.validate().is_err());
        assert!(SyntheticConfig { d: 8, s_star: 8, sigma: 1.0, horizon: 1 }.validate().is_ok());
    }

    #[test]
    fn nu_examples() {
        assert_eq!(nu(a(1), 8), 1);
        assert_eq!(nu(a(2), 8), 2);
        assert_eq!(nu(a(3), 8), 1);
        for k in 1..=4 {
            assert_eq!(nu(a(k), 4), 1);
        }
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward_for(Flag::Plus, a(1), 8), 1.0);
        assert_eq!(reward_for(Flag::Minus, a(8), 8), 0.5);
        assert_eq!(reward_for(Flag::Plus, a(8), 8), 0.125);
    }

    #[test]
    fn leave_probability_examples() {
        assert_eq!(leave_probability(a(1), 8), 0.0);
        assert_eq!(leave_probability(a(2), 8), 0.5);
        for k in 1..=4 {
            assert_eq!(leave_probability(a(k), 4), 0.0);
        }
        for s in [4, 8, 12, 24] {
            for k in 1..=s {
                let p = leave_probability(a(k), s);
                assert!((0.0..=1.0 - 4.0 / s as f64 + 1e-15).contains(&p));
            }
        }
    }

    #[test]
    fn q_hat_reward_at_zero_weights() {
        let e = env(16, 8, 1.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = e.sample_initial(&mut rng);
        assert_eq!(q_hat(&[0.0; 16], &x, a(1), &e).unwrap(), 1.0);
        assert_eq!(target_value(&[0.0; 16], &x, &e), 1.0);
    }

    #[test]
    fn feature_shape() {
        let e = env(12, 8, 2.5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = e.sample_initial(&mut rng);
        for k in 1..=8 {
            let phi = e.feature(&x, a(k));
            assert!(phi.iter().all(|v| v.abs() == 2.5));
            assert_eq!(phi, e.feature(&x.with_flag(Flag::Minus), a(k)));
        }
        let phi1 = e.feature(&x, a(1));
        for i in 0..4 {
            assert_eq!(phi1[i], 2.5 * x.signs()[i]);
        }
        for i in 8..12 {
            assert_eq!(phi1[i], 2.5 * x.signs()[i]);
        }
    }

    #[test]
    fn psi_support() {
        let e = env(20, 8, 0.5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = e.sample_initial(&mut rng);
        let plus = e.psi(x.signs(), Flag::Plus);
        let minus = e.psi(x.signs(), Flag::Minus);
        let mag = 2.0 / (0.5 * 8.0);
        for (i, (p, m)) in plus.iter().zip(&minus).enumerate() {
            assert!(*p == 0.0 || *m == 0.0);
            if i < 4 {
                assert_eq!(p.abs(), mag);
            } else if i < 8 {
                assert_eq!(m.abs(), mag);
            } else {
                assert_eq!((*p, *m), (0.0, 0.0));
            }
        }
        assert_eq!(plus.iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    fn initial_flag_and_sign_balance() {
        let e = env(6, 4, 1.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut sums = vec![0.0; 6];
        for _ in 0..n {
            let x = e.sample_initial(&mut rng);
            assert_eq!(x.flag, Flag::Plus);
            for (s, v) in sums.iter_mut().zip(x.signs()) {
                *s += v;
            }
        }
        // Rademacher means have sd 1/sqrt(n).
        let bound = 3.0 / (n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64).abs() < bound);
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(8);
        let mut r2 = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(e.sample_initial(&mut r1), e.sample_initial(&mut r2));
    }

    #[test]
    fn transition_preserves_context() {
        let e = env(16, 8, 1.0, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = e.sample_initial(&mut rng);
        for k in 1..=8 {
            for _ in 0..20 {
                assert_eq!(e.step(&x, a(k), &mut rng).signs(), x.signs());
            }
        }
        for _ in 0..100 {
            assert_eq!(e.step(&x.with_flag(Flag::Minus), a(1), &mut rng).flag, Flag::Plus);
        }
    }

    #[test]
    fn sigma_u_scaling() {
        assert_eq!(analytic_sigma_u(1.0), 1.0 / 6.0);
        assert_eq!(analytic_sigma_u(6.0), 1.0);
        assert_eq!(analytic_sigma_u(2.0 * 0.7), 2.0 * analytic_sigma_u(0.7));
    }

    /// Independent oracle: enumerate every action sequence over the flag chain.
    fn brute_force_optimum(horizon: usize, s_star: usize, flag: Flag) -> f64 {
        if horizon == 0 {
            return 0.0;
        }
        (1..=s_star)
            .map(|k| {
                let p = leave_probability(a(k), s_star);
                reward_for(flag, a(k), s_star)
                    + (1.0 - p) * brute_force_optimum(horizon - 1, s_star, Flag::Plus)
                    + p * brute_force_optimum(horizon - 1, s_star, Flag::Minus)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn dp_optimal_examples() {
        for horizon in [1, 2, 5, 10] {
            for s in [4, 8, 24] {
                assert_eq!(dp_optimal(horizon, s).value(Flag::Plus, 1), horizon as f64);
            }
        }
        assert_eq!(dp_optimal(1, 8).value(Flag::Minus, 1), 0.5);
        assert!((dp_optimal(2, 8).value(Flag::Minus, 1) - 23.0 / 16.0).abs() < 1e-15);
        for horizon in 1..=4 {
            for s in [4, 8, 12] {
                let t = dp_optimal(horizon, s);
                for f in Flag::BOTH {
                    assert!((t.value(f, 1) - brute_force_optimum(horizon, s, f)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dp_policy_examples() {
        let e = env(8, 8, 1.0, 1);
        assert_eq!(e.dp_policy_value(&FlagPolicy::uniform(1, 8)).unwrap(), 9.0 / 16.0);
        let e5 = env(8, 8, 1.0, 5);
        let mut greedy = vec![0.0; 8];
        greedy[0] = 1.0;
        let mut minus = vec![0.0; 8];
        minus[7] = 1.0;
        let v = e5.dp_policy_value(&FlagPolicy::stationary(5, greedy, minus)).unwrap();
        assert_eq!(v, 5.0);
        let bad = FlagPolicy::stationary(5, vec![0.2; 8], vec![0.125; 8]);
        assert!(matches!(e5.dp_policy_value(&bad), Err(Error::BadDistribution(_))));
    }

    #[test]
    fn kernel_consistency_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for s in [4, 8, 12, 24] {
            let e = env(s + 5, s, 1.7, 3);
            for _ in 0..20 {
                let x = e.sample_initial(&mut rng);
                let plus = e.psi(x.signs(), Flag::Plus);
                let minus = e.psi(x.signs(), Flag::Minus);
                let (v_plus, v_minus) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
                let barw: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| v_plus * p + v_minus * m).collect();
                for k in 1..=s {
                    let phi = e.feature(&x, a(k));
                    let p = leave_probability(a(k), s);
                    assert!((dot(&phi, &plus) - (1.0 - p)).abs() < 1e-12);
                    assert!((dot(&phi, &minus) - p).abs() < 1e-12);
                    let lin = (1.0 - p) * v_plus + p * v_minus;
                    assert!((dot(&phi, &barw) - lin).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn fast_feature_dots_match_dense(seed in any::<u64>(), q in 1usize..7, extra in 0usize..6) {
            let s = 4 * q;
            let e = env(s + extra, s, 1.3, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = e.sample_initial(&mut rng);
            let w: Vec<f64> = (0..s + extra).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut fast = vec![0.0; s];
            e.feature_dots(&x, &w, &mut fast);
            for k in 1..=s {
                let dense = dot(&e.feature(&x, a(k)), &w);
                prop_assert!((fast[k - 1] - dense).abs() < 1e-10);
            }
        }

        #[test]
        fn uniform_never_beats_optimal(horizon in 1usize..8, q in 1usize..7) {
            let s = 4 * q;
            let e = env(s, s, 1.0, horizon);
            let v = e.dp_policy_value(&FlagPolicy::uniform(horizon, s)).unwrap();
            prop_assert!(v <= e.optimal_initial_value() + 1e-9);
        }
    }
}
