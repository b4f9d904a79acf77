//! Randomized doubly robust Lasso value iteration.
//!
//! Each period the agent draws a uniform pseudo-action alongside an
//! ε-greedy action, retrying both until they coincide or the resampling
//! budget runs out. Matched periods carry pseudo-rewards for *every* action:
//!
//! ```text
//! Ỹ(a) = K·𝟙(ã = a)·Ŷ + (1 − K·𝟙(ã = a))·φ(x, a)ᵀ ŵ^Im
//! ```
//!
//! After each episode the weights are refit backwards over periods: an
//! imputation Lasso on played actions, then a DR Lasso on all actions of all
//! matched samples.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::{self, GramAccumulator, LassoParams};
use crate::mdp::{
    clip_to_horizon, dot, greedy_action, q_values_into, target_value_with, ActionId, Agent,
    Decision, EpisodeTelemetry, EpisodeTrace, Environment,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Tail-inequality schedule: `8H√(n log(2dHn²/δ))` and `9KH√(·)`.
    Theory,
    /// Practical schedule `H√(n log(2dH/δ))` for the imputation fit. The DR
    /// fit keeps the theory ratio `9K/8`.
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdrlviConfig {
    pub delta: f64,
    pub lambda_mode: LambdaMode,
    /// Refit every `update_period` episodes. 1 refits after every episode.
    pub update_period: usize,
    pub lasso: LassoParams,
}

impl Default for RdrlviConfig {
    fn default() -> Self {
        Self { delta: 0.1, lambda_mode: LambdaMode::Reduced, update_period: 1, lasso: LassoParams::default() }
    }
}

impl RdrlviConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if self.update_period == 0 {
            return Err(Error::InvalidConfig("update_period must be >= 1".into()));
        }
        Ok(())
    }
}

/// `ε_n = 1 − (1 − n^{−1/2})^{1/H}`.
pub fn epsilon_schedule(n: usize, horizon: usize) -> f64 {
    let n = n.max(1) as f64;
    1.0 - (1.0 - n.powf(-0.5)).powf(1.0 / horizon as f64)
}

/// `⌈ln(H(n+1)²/δ) / ln(1/(1 − 1/K))⌉`, at least 1.
pub fn resample_budget(n: usize, horizon: usize, k: usize, delta: f64) -> usize {
    if k < 2 {
        return 1;
    }
    let num = (horizon as f64 * ((n + 1) as f64).powi(2) / delta).ln();
    let den = (1.0 / (1.0 - 1.0 / k as f64)).ln();
    let raw = num / den;
    // Exact integers such as ln 16 / ln 2 must not round up past themselves.
    let budget = (raw - 1e-9).ceil();
    if budget.is_finite() && budget >= 1.0 {
        budget as usize
    } else {
        1
    }
}

/// DR pseudo-reward for one action.
pub fn pseudo_reward(action: ActionId, pseudo: ActionId, k: usize, y_hat: f64, imputed: f64) -> f64 {
    if action == pseudo {
        k as f64 * y_hat - (k as f64 - 1.0) * imputed
    } else {
        imputed
    }
}

fn log_term(n: usize, horizon: usize, d: usize, delta: f64, mode: LambdaMode) -> f64 {
    let base = 2.0 * d as f64 * horizon as f64 / delta;
    match mode {
        LambdaMode::Theory => (base * (n as f64).powi(2)).ln(),
        LambdaMode::Reduced => base.ln(),
    }
}

pub fn lambda_im(n: usize, horizon: usize, d: usize, delta: f64, mode: LambdaMode) -> f64 {
    let root = (n as f64 * log_term(n, horizon, d, delta, mode)).sqrt();
    match mode {
        LambdaMode::Theory => 8.0 * horizon as f64 * root,
        LambdaMode::Reduced => horizon as f64 * root,
    }
}

pub fn lambda_est(n: usize, horizon: usize, d: usize, k: usize, delta: f64, mode: LambdaMode) -> f64 {
    9.0 * k as f64 / 8.0 * lambda_im(n, horizon, d, delta, mode)
}

/// `est[h]` for `h = 1..=H+1` (the last one pinned at zero) and `imp[h]`
/// for `h = 1..=H`.
/// One ε-greedy draw: the greedy action w.p. `1 − ε`, otherwise uniform
/// over the other `K − 1` actions.
fn epsilon_greedy(k: usize, greedy: ActionId, eps: f64, rng: &mut dyn RngCore) -> ActionId {
    if rng.random::<f64>() >= eps {
        return greedy;
    }
    let j = rng.random_range(0..k - 1);
    ActionId::from_index(if j >= greedy.index() { j + 1 } else { j })
}

/// Draws (pseudo-action, ε-greedy action) pairs until they match or
/// `budget` trials are spent; the last pair is played either way.
pub fn resampled_draw(k: usize, greedy: ActionId, eps: f64, budget: usize, rng: &mut dyn RngCore) -> Decision {
    let mut decision = Decision { action: greedy, pseudo: None, matched: false };
    for _ in 0..budget.max(1) {
        let pseudo = ActionId::from_index(rng.random_range(0..k));
        let action = epsilon_greedy(k, greedy, eps, rng);
        decision = Decision { action, pseudo: Some(pseudo), matched: pseudo == action };
        if decision.matched {
            break;
        }
    }
    decision
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBank {
    est: Vec<Vec<f64>>,
    imp: Vec<Vec<f64>>,
}

impl WeightBank {
    pub fn zeros(horizon: usize, d: usize) -> Self {
        Self { est: vec![vec![0.0; d]; horizon + 1], imp: vec![vec![0.0; d]; horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.imp.len()
    }

    /// `ŵ_h`, 1-based; `h = H + 1` is always zero.
    pub fn est(&self, h: usize) -> &[f64] {
        &self.est[h - 1]
    }

    pub fn imp(&self, h: usize) -> &[f64] {
        &self.imp[h - 1]
    }

    pub fn set_est(&mut self, h: usize, w: Vec<f64>) {
        assert!(h <= self.horizon(), "est[H+1] is fixed at zero");
        self.est[h - 1] = w;
    }

    pub fn set_imp(&mut self, h: usize, w: Vec<f64>) {
        self.imp[h - 1] = w;
    }
}

pub fn nnz(w: &[f64]) -> usize {
    w.iter().filter(|v| **v != 0.0).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample<S> {
    pub state: S,
    pub action: ActionId,
    pub pseudo: Option<ActionId>,
    pub matched: bool,
    pub next: S,
}

/// Everything the backward pass needs: every `(τ, k)` sample plus the two
/// designs. The imputation design has one row per sample; the DR design has
/// `K` rows (one per action) per matched sample. Both losses sum over all
/// periods `k`, so one design of each kind serves every `h`.
#[derive(Debug, Clone)]
pub struct DrDataset<S> {
    samples: Vec<StoredSample<S>>,
    imputation: GramAccumulator,
    dr: GramAccumulator,
    matched: usize,
}

impl<S: Clone> DrDataset<S> {
    pub fn new(d: usize) -> Self {
        Self { samples: Vec::new(), imputation: GramAccumulator::new(d), dr: GramAccumulator::new(d), matched: 0 }
    }

    pub fn samples(&self) -> &[StoredSample<S>] {
        &self.samples
    }

    pub fn matched_count(&self) -> usize {
        self.matched
    }

    pub fn imputation_design(&self) -> &GramAccumulator {
        &self.imputation
    }

    pub fn dr_design(&self) -> &GramAccumulator {
        &self.dr
    }

    pub fn append<E: Environment<State = S> + ?Sized>(&mut self, env: &E, trace: &EpisodeTrace<S>) -> Result<()> {
        let d = env.feature_dim();
        let k = env.action_count();
        let mut played = Vec::with_capacity(trace.periods.len());
        for (i, p) in trace.periods.iter().enumerate() {
            played.push(env.feature(&p.state, p.action));
            if p.matched {
                let mut rows = vec![0.0; k * d];
                for (j, chunk) in rows.chunks_mut(d).enumerate() {
                    env.feature_into(&p.state, ActionId::from_index(j), chunk);
                }
                self.dr.push_design_rows(rows.chunks(d))?;
                self.matched += 1;
            }
            self.samples.push(StoredSample {
                state: p.state.clone(),
                action: p.action,
                pseudo: p.pseudo,
                matched: p.matched,
                next: trace.next_state(i).clone(),
            });
        }
        self.imputation.push_design_rows(played.iter().map(Vec::as_slice))?;
        Ok(())
    }

    /// `Ŷ_w` at every stored successor.
    pub fn targets<E: Environment<State = S> + ?Sized>(&self, env: &E, w_next: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; env.action_count()];
        self.samples.iter().map(|s| target_value_with(env, w_next, &s.next, &mut scratch)).collect()
    }

    /// `Xᵀy` and `yᵀy` of the imputation problem for the given targets.
    pub fn imputation_moment<E: Environment<State = S> + ?Sized>(&self, env: &E, targets: &[f64]) -> (Vec<f64>, f64) {
        let d = env.feature_dim();
        let mut xty = vec![0.0; d];
        let mut yty = 0.0;
        let mut phi = vec![0.0; d];
        for (s, &y) in self.samples.iter().zip(targets) {
            env.feature_into(&s.state, s.action, &mut phi);
            for (m, x) in xty.iter_mut().zip(&phi) {
                *m += y * x;
            }
            yty += y * y;
        }
        (xty, yty)
    }

    /// `Xᵀy` and `yᵀy` of the DR problem without materialising its `K` rows
    /// per sample. Writing `m(a) = φ(x, a)ᵀŵ^Im` and `a*` for the matched
    /// action,
    ///
    /// ```text
    /// Σ_a φ(x,a) Ỹ(a) = Σ_a φ(x,a) φ(x,a)ᵀ ŵ^Im + K (Ŷ − m(a*)) φ(x,a*)
    /// ```
    ///
    /// and the first term summed over samples is the DR Gram times `ŵ^Im`.
    pub fn dr_moment<E: Environment<State = S> + ?Sized>(
        &self,
        env: &E,
        targets: &[f64],
        imp: &[f64],
    ) -> (Vec<f64>, f64) {
        let d = env.feature_dim();
        let k = env.action_count() as f64;
        let mut xty = self.dr.gram_mul(imp);
        let mut yty = dot(imp, &xty);
        let mut phi = vec![0.0; d];
        for (s, &y_hat) in self.samples.iter().zip(targets) {
            if !s.matched {
                continue;
            }
            env.feature_into(&s.state, s.action, &mut phi);
            let m = dot(&phi, imp);
            let coef = k * (y_hat - m);
            for (t, x) in xty.iter_mut().zip(&phi) {
                *t += coef * x;
            }
            let matched_reward = k * y_hat - (k - 1.0) * m;
            yty += matched_reward * matched_reward - m * m;
        }
        (xty, yty)
    }
}

/// Per-episode diagnostics from the most recent backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    pub lambda_im: f64,
    pub lambda_est: f64,
    /// KKT residuals of the DR fits, `[h − 1]`; `None` where the period kept
    /// its previous weights.
    pub dr_kkt: Vec<Option<f64>>,
    pub imp_kkt: Vec<f64>,
}

pub struct RdrlviAgent<S> {
    config: RdrlviConfig,
    horizon: usize,
    k: usize,
    d: usize,
    bank: WeightBank,
    data: DrDataset<S>,
    last_update: UpdateReport,
}

impl<S: Clone> RdrlviAgent<S> {
    pub fn new<E: Environment<State = S> + ?Sized>(env: &E, config: RdrlviConfig) -> Result<Self> {
        config.validate()?;
        let (horizon, k, d) = (env.horizon(), env.action_count(), env.feature_dim());
        if k < 2 {
            return Err(Error::InvalidConfig("RDRLVI needs at least two actions".into()));
        }
        Ok(Self {
            config,
            horizon,
            k,
            d,
            bank: WeightBank::zeros(horizon, d),
            data: DrDataset::new(d),
            last_update: UpdateReport::default(),
        })
    }

    pub fn config(&self) -> &RdrlviConfig {
        &self.config
    }

    pub fn bank(&self) -> &WeightBank {
        &self.bank
    }

    pub fn dataset(&self) -> &DrDataset<S> {
        &self.data
    }

    pub fn last_update(&self) -> &UpdateReport {
        &self.last_update
    }

    /// Greedy action on `Π_[0,H](Q̂_{ŵ_{h+1}}(x, ·))`.
    pub fn greedy<E: Environment<State = S> + ?Sized>(&self, env: &E, state: &S, h: usize) -> ActionId {
        let mut q = vec![0.0; self.k];
        q_values_into(env, self.bank.est(h + 1), state, &mut q);
        for v in &mut q {
            *v = clip_to_horizon(*v, self.horizon);
        }
        greedy_action(&q)
    }

    /// The resampling loop for a fixed greedy action and exploration rate.
    pub fn draw(&self, greedy: ActionId, eps: f64, budget: usize, rng: &mut dyn RngCore) -> Decision {
        resampled_draw(self.k, greedy, eps, budget, rng)
    }

    fn refit<E: Environment<State = S> + ?Sized>(
        &mut self,
        env: &E,
        n: usize,
        matched: &[bool],
        telemetry: &mut EpisodeTelemetry,
    ) -> Result<()> {
        let mode = self.config.lambda_mode;
        let delta = self.config.delta;
        let lam_im = lambda_im(n, self.horizon, self.d, delta, mode);
        let lam_est = lambda_est(n, self.horizon, self.d, self.k, delta, mode);
        let mut report = UpdateReport {
            lambda_im: lam_im,
            lambda_est: lam_est,
            dr_kkt: vec![None; self.horizon],
            imp_kkt: vec![0.0; self.horizon],
        };
        for h in (1..=self.horizon).rev() {
            let targets = self.data.targets(env, self.bank.est(h + 1));

            let (xty, yty) = self.data.imputation_moment(env, &targets);
            self.data.imputation.set_moment(xty, yty)?;
            let imp = lasso::solve(&self.data.imputation, lam_im, Some(self.bank.imp(h)), self.config.lasso)?;
            telemetry.lasso_iterations += imp.iterations;
            telemetry.lasso_unconverged += usize::from(!imp.converged);
            report.imp_kkt[h - 1] = imp.kkt_residual;
            self.bank.set_imp(h, imp.weights);

            if !matched[h - 1] {
                continue;
            }
            let (xty, yty) = self.data.dr_moment(env, &targets, self.bank.imp(h));
            self.data.dr.set_moment(xty, yty)?;
            let est = lasso::solve(&self.data.dr, lam_est, Some(self.bank.est(h)), self.config.lasso)?;
            telemetry.lasso_iterations += est.iterations;
            telemetry.lasso_unconverged += usize::from(!est.converged);
            report.dr_kkt[h - 1] = Some(est.kkt_residual);
            self.bank.set_est(h, est.weights);
        }
        self.last_update = report;
        Ok(())
    }
}

impl<E: Environment + ?Sized> Agent<E> for RdrlviAgent<E::State> {
    fn act(&mut self, env: &E, state: &E::State, h: usize, n: usize, rng: &mut dyn RngCore) -> Decision {
        let greedy = self.greedy(env, state, h);
        let eps = epsilon_schedule(n, self.horizon);
        let budget = resample_budget(n, self.horizon, self.k, self.config.delta);
        self.draw(greedy, eps, budget, rng)
    }

    fn action_distribution(&self, env: &E, state: &E::State, h: usize, n: usize) -> Vec<f64> {
        let greedy = self.greedy(env, state, h);
        let eps = epsilon_schedule(n, self.horizon);
        let mut p = vec![eps / (self.k - 1) as f64; self.k];
        p[greedy.index()] = 1.0 - eps;
        p
    }

    fn end_episode(&mut self, env: &E, trace: &EpisodeTrace<E::State>) -> Result<EpisodeTelemetry> {
        let n = trace.episode;
        self.data.append(env, trace)?;
        let matched: Vec<bool> = trace.periods.iter().map(|p| p.matched).collect();
        let mut telemetry = EpisodeTelemetry {
            eps: epsilon_schedule(n, self.horizon),
            matched: matched.clone(),
            ..Default::default()
        };
        if n % self.config.update_period == 0 {
            self.refit(env, n, &matched, &mut telemetry)?;
            telemetry.updated = true;
        }
        telemetry.nnz_est = (1..=self.horizon).map(|h| nnz(self.bank.est(h))).collect();
        telemetry.nnz_imp = (1..=self.horizon).map(|h| nnz(self.bank.imp(h))).collect();
        Ok(telemetry)
    }

    fn epsilon(&self, n: usize, horizon: usize) -> f64 {
        epsilon_schedule(n, horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout, testing::ToyEnv, target_value};
    use crate::synthetic::{SyntheticConfig, SyntheticEnv};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon_schedule(1, 10), 1.0);
        assert!((epsilon_schedule(4, 1) - 0.5).abs() < 1e-15);
        // 30-digit reference: 0.0104807417937856...
        assert!((epsilon_schedule(100, 10) - 0.010_480_741_793_785_6).abs() < 1e-14);
        for h in [1, 3, 10] {
            let mut prev = 1.0;
            for n in 1..200 {
                let e = epsilon_schedule(n, h);
                assert!((0.0..=1.0).contains(&e) && e <= prev);
                prev = e;
            }
        }
    }

    #[test]
    fn budget_examples() {
        assert_eq!(resample_budget(1, 1, 2, 0.25), 4);
        assert_eq!(resample_budget(9, 10, 12, 0.1), 106);
        assert_eq!(resample_budget(1, 1, 2, 0.999_999), 3);
        // H(n+1)²/δ → 1 drives the formula to 0; clamped.
        assert_eq!(resample_budget(0, 1, 2, 0.999_999_999), 1);
    }

    #[test]
    fn pseudo_reward_examples() {
        let (a1, a2) = (ActionId::from_index(0), ActionId::from_index(1));
        assert!((pseudo_reward(a1, a1, 2, 1.0, 0.4) - 1.6).abs() < 1e-15);
        assert_eq!(pseudo_reward(a1, a2, 2, 1.0, 0.4), 0.4);
    }

    #[test]
    fn lambda_examples() {
        // ln(8e7) = 18.197..., 16·√(100·ln(8e7)) = 682.537...
        let lt = lambda_im(100, 2, 200, 0.1, LambdaMode::Theory);
        assert!((lt - 682.537_143_407_988).abs() < 1e-9, "{lt}");
        let lr = lambda_im(100, 2, 200, 0.1, LambdaMode::Reduced);
        assert!((lr - 59.957_307_546_826_9).abs() < 1e-9, "{lr}");
        let ratio = lambda_est(100, 2, 200, 24, 0.1, LambdaMode::Reduced) / lr;
        assert!((ratio - 27.0).abs() < 1e-12);
        for mode in [LambdaMode::Theory, LambdaMode::Reduced] {
            let mut prev = 0.0;
            for n in 1..100 {
                let l = lambda_im(n, 3, 50, 0.1, mode);
                assert!(l > prev);
                prev = l;
            }
        }
    }

    fn synthetic(d: usize, s_star: usize, sigma: f64, horizon: usize) -> SyntheticEnv {
        SyntheticEnv::new(SyntheticConfig { d, s_star, sigma, horizon }).unwrap()
    }

    #[test]
    fn greedy_when_epsilon_zero() {
        let env = synthetic(8, 8, 1.0, 2);
        let agent = RdrlviAgent::new(&env, RdrlviConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = ActionId::from_index(3);
        for _ in 0..1000 {
            assert_eq!(agent.draw(g, 0.0, 50, &mut rng).action, g);
        }
    }

    #[test]
    fn match_rates() {
        let env = synthetic(8, 8, 1.0, 2);
        let agent = RdrlviAgent::new(&env, RdrlviConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 100_000;
        let g = ActionId::from_index(0);
        let single = (0..trials).filter(|_| agent.draw(g, 0.3, 1, &mut rng).matched).count() as f64 / trials as f64;
        let p = 1.0 / 8.0;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((single - p).abs() < 3.0 * sd, "single-trial match rate {single}");

        let env2 = synthetic(4, 4, 1.0, 2);
        let two = RdrlviAgent::new(&env2, RdrlviConfig::default()).unwrap();
        assert!((0..10_000).all(|_| two.draw(g, 0.5, 10_000, &mut rng).matched));
    }

    #[test]
    fn first_update_targets_are_max_reward() {
        let env = synthetic(12, 8, 1.0, 3);
        let mut agent = RdrlviAgent::new(&env, RdrlviConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trace = rollout(&env, &mut agent, 1, &mut rng);
        agent.data.append(&env, &trace).unwrap();
        let targets = agent.data.targets(&env, agent.bank.est(4));
        for (s, t) in agent.data.samples().iter().zip(&targets) {
            let expected = if s.next.flag == crate::synthetic::Flag::Plus { 1.0 } else { 0.5 };
            assert_eq!(*t, expected);
        }
    }

    #[test]
    fn unmatched_episodes_leave_estimates() {
        let env = synthetic(12, 8, 3.0, 3);
        let mut agent = RdrlviAgent::new(&env, RdrlviConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..=20 {
            let mut trace = rollout(&env, &mut agent, n, &mut rng);
            for p in &mut trace.periods {
                p.matched = false;
                p.pseudo = None;
            }
            let t = agent.end_episode(&env, &trace).unwrap();
            assert!(t.nnz_est.iter().all(|z| *z == 0));
        }
        for h in 1..=4 {
            assert!(agent.bank().est(h).iter().all(|v| *v == 0.0));
        }
        assert_eq!(agent.dataset().dr_design().row_count(), 0);
        assert_eq!(agent.dataset().imputation_design().row_count(), 60);
    }

    #[test]
    fn negligible_features_stay_reward_greedy() {
        // Features of size 1e-6 never clear the soft threshold, as if λ → ∞.
        let env = synthetic(12, 8, 1e-6, 3);
        let mut agent = RdrlviAgent::new(&env, RdrlviConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=10 {
            let trace = rollout(&env, &mut agent, n, &mut rng);
            agent.end_episode(&env, &trace).unwrap();
        }
        for h in 1..=3 {
            assert!(agent.bank().est(h).iter().all(|v| *v == 0.0));
            assert!(agent.bank().imp(h).iter().all(|v| *v == 0.0));
        }
        let x = env.sample_initial(&mut rng);
        assert_eq!(agent.greedy(&env, &x, 1).get(), 1);
        assert_eq!(agent.greedy(&env, &x.with_flag(crate::synthetic::Flag::Minus), 1).get(), 8);
    }

    /// Brute-force DR design: K explicit pseudo-reward rows per matched sample.
    fn brute_dr<E: Environment>(
        env: &E,
        data: &DrDataset<E::State>,
        targets: &[f64],
        imp: &[f64],
    ) -> GramAccumulator {
        let k = env.action_count();
        let mut acc = GramAccumulator::new(env.feature_dim());
        for (s, &y) in data.samples().iter().zip(targets) {
            if !s.matched {
                continue;
            }
            for j in 0..k {
                let a = ActionId::from_index(j);
                let phi = env.feature(&s.state, a);
                let m = dot(&phi, imp);
                acc.push_row(&phi, pseudo_reward(a, s.pseudo.unwrap(), k, y, m)).unwrap();
            }
        }
        acc
    }

    #[test]
    fn dr_moment_matches_explicit_rows() {
        let env = ToyEnv { horizon: 4 };
        let mut agent = RdrlviAgent::new(&env, RdrlviConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in 1..=15 {
            let trace = rollout(&env, &mut agent, n, &mut rng);
            agent.end_episode(&env, &trace).unwrap();
        }
        let w = vec![0.3, -0.7, 0.2];
        let imp = vec![-0.1, 0.4, 0.9];
        let targets = agent.dataset().targets(&env, &w);
        for (s, t) in agent.dataset().samples().iter().zip(&targets) {
            assert_eq!(*t, target_value(&w, &s.next, &env));
        }
        let brute = brute_dr(&env, agent.dataset(), &targets, &imp);
        let (xty, yty) = agent.dataset().dr_moment(&env, &targets, &imp);
        for (a, b) in brute.gram().iter().zip(agent.dataset().dr_design().gram()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in brute.xty().iter().zip(&xty) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!((brute.yty() - yty).abs() < 1e-8 * (1.0 + yty.abs()));
    }

    #[test]
    fn dr_estimates_are_lasso_optima() {
        let env = synthetic(16, 8, 6.0, 3);
        let mut agent = RdrlviAgent::new(&env, RdrlviConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for n in 1..=40 {
            let trace = rollout(&env, &mut agent, n, &mut rng);
            let t = agent.end_episode(&env, &trace).unwrap();
            for h in 1..=3 {
                if !t.matched[h - 1] {
                    continue;
                }
                let data = agent.dataset();
                let targets = data.targets(&env, agent.bank().est(h + 1));
                let mut brute = brute_dr(&env, data, &targets, agent.bank().imp(h));
                let (xty, yty) = (brute.xty().to_vec(), brute.yty());
                brute.set_moment(xty, yty).unwrap();
                let lam = agent.last_update().lambda_est;
                let kkt = lasso::kkt_residual(&brute, agent.bank().est(h), lam).unwrap();
                // A coordinate change of `tol` moves the gradient by 2·G_ii·tol.
                let scale = brute.column_norms().iter().fold(1.0f64, |m, v| m.max(*v));
                assert!(kkt <= 10.0 * agent.config().lasso.tol * 2.0 * scale, "kkt {kkt} scale {scale}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn weights_stay_bounded() {
        let env = synthetic(20, 8, 6.0, 4);
        let mut agent = RdrlviAgent::new(&env, RdrlviConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 1..=60 {
            let trace = rollout(&env, &mut agent, n, &mut rng);
            agent.end_episode(&env, &trace).unwrap();
            for h in 1..=5 {
                let w = agent.bank().est(h);
                assert!(w.iter().all(|v| v.is_finite()));
                assert!(w.iter().map(|v| v.abs()).sum::<f64>() <= 10.0 * 4.0 * 20.0);
            }
            assert!(agent.bank().est(5).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn distribution_matches_epsilon_greedy() {
        let env = synthetic(8, 8, 1.0, 2);
        let agent = RdrlviAgent::new(&env, RdrlviConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = env.sample_initial(&mut rng);
        for n in [1, 4, 50] {
            let p = Agent::<SyntheticEnv>::action_distribution(&agent, &env, &x, 1, n);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((p[0] - (1.0 - epsilon_schedule(n, 2))).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn pseudo_reward_unbiased(y in -10.0f64..10.0, m in -10.0f64..10.0, k in 2usize..30, played in 0usize..30) {
            let a = ActionId::from_index(played % k);
            let mean: f64 = (0..k)
                .map(|j| pseudo_reward(a, ActionId::from_index(j), k, y, m))
                .sum::<f64>() / k as f64;
            prop_assert!((mean - y).abs() <= 1e-12 * (1.0 + y.abs() + k as f64 * m.abs()));
        }
    }
}
