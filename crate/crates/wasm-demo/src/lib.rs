//! Browser bindings for three interactive views: the synthetic kernel and its
//! optimal values, a small regret simulation, and a Lasso regularization path.
//!
//! Every export returns a JSON string so the page needs no extra glue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdrlvi_core::experiment::{run_collect, AlgorithmName, AlgorithmSpec, RunOptions};
use rdrlvi_core::fqi::{FqiConfig, N1Mode};
use rdrlvi_core::lasso::{self, GramAccumulator, LassoParams};
use rdrlvi_core::mdp::ActionId;
use rdrlvi_core::rdrlvi::RdrlviConfig;
use rdrlvi_core::synthetic::{leave_probability, nu, reward_for, Flag, FlagPolicy, SyntheticConfig, SyntheticEnv};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

fn js_err(e: rdrlvi_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct ActionRow {
    action: usize,
    nu: usize,
    leave_probability: f64,
    reward_plus: f64,
    reward_minus: f64,
    q_plus: f64,
    q_minus: f64,
}

#[derive(Serialize)]
struct KernelView {
    actions: Vec<ActionRow>,
    /// `[h − 1] = (V*(+1), V*(−1))`.
    optimal: Vec<[f64; 2]>,
    uniform_value: f64,
}

/// Per-action transition and reward structure with the optimal value table.
#[wasm_bindgen]
pub fn kernel_table(s_star: usize, horizon: usize) -> Result<String, JsError> {
    let env = SyntheticEnv::new(SyntheticConfig { d: s_star, s_star, sigma: 1.0, horizon }).map_err(js_err)?;
    let dp = env.optimal();
    let actions = (1..=s_star)
        .map(|a| {
            let act = ActionId::new(a, s_star).expect("in range");
            ActionRow {
                action: a,
                nu: nu(act, s_star),
                leave_probability: leave_probability(act, s_star),
                reward_plus: reward_for(Flag::Plus, act, s_star),
                reward_minus: reward_for(Flag::Minus, act, s_star),
                q_plus: dp.q[0][Flag::Plus.index()][a - 1],
                q_minus: dp.q[0][Flag::Minus.index()][a - 1],
            }
        })
        .collect();
    let uniform_value = env.dp_policy_value(&FlagPolicy::uniform(horizon, s_star)).map_err(js_err)?;
    to_js(&KernelView { actions, optimal: dp.values.clone(), uniform_value })
}

#[derive(Serialize)]
struct SimView {
    algorithm: &'static str,
    inst_regret: Vec<f64>,
    cum_regret: Vec<f64>,
    nnz_mean: Vec<f64>,
}

fn parse_algorithm(name: &str) -> Result<AlgorithmName, JsError> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| JsError::new(&format!("unknown algorithm {name:?}")))
}

/// One replication of exact per-episode regret.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    algorithm: &str,
    d: usize,
    s_star: usize,
    sigma: f64,
    horizon: usize,
    episodes: usize,
    n1: usize,
    seed: u64,
) -> Result<String, JsError> {
    let name = parse_algorithm(algorithm)?;
    let env = SyntheticEnv::new(SyntheticConfig { d, s_star, sigma, horizon }).map_err(js_err)?;
    let spec = AlgorithmSpec {
        name,
        rdrlvi: RdrlviConfig::default(),
        fqi: FqiConfig {
            n1_mode: N1Mode::Manual(n1),
            sigma_e: sigma / 6.0,
            s_star,
            delta: 0.1,
            lasso: LassoParams::default(),
        },
    };
    let records = run_collect(&env, &spec, episodes, seed, RunOptions::default()).map_err(js_err)?;
    to_js(&SimView {
        algorithm: name.as_str(),
        inst_regret: records.iter().map(|r| r.inst_regret).collect(),
        cum_regret: records.iter().map(|r| r.cum_regret).collect(),
        nnz_mean: records.iter().map(|r| r.nnz_mean).collect(),
    })
}

#[derive(Serialize)]
struct PathView {
    lambdas: Vec<f64>,
    /// `weights[j][i]`: coefficient `i` at `lambdas[j]`.
    weights: Vec<Vec<f64>>,
    truth: Vec<f64>,
}

/// Warm-started Lasso path on a random sparse regression.
#[wasm_bindgen]
pub fn lasso_path(d: usize, rows: usize, support: usize, noise: f64, steps: usize, seed: u64) -> Result<String, JsError> {
    if d == 0 || rows == 0 || steps < 2 || support > d {
        return Err(JsError::new("need d >= 1, rows >= 1, steps >= 2 and support <= d"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> =
        (0..d).map(|i| if i < support { rng.random_range(1.0..3.0) * if i % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 }).collect();
    let mut acc = GramAccumulator::new(d);
    let mut x = vec![0.0; d];
    for _ in 0..rows {
        for v in &mut x {
            *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let y = x.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + noise * rng.random_range(-1.0..1.0);
        acc.push_row(&x, y).map_err(js_err)?;
    }
    let lam_max = 2.0 * acc.xty().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lambdas: Vec<f64> = (0..steps).map(|j| lam_max * (1e-3f64).powf(j as f64 / (steps - 1) as f64)).collect();
    let mut weights = Vec::with_capacity(steps);
    let mut warm: Option<Vec<f64>> = None;
    for &lam in &lambdas {
        let sol = lasso::solve(&acc, lam, warm.as_deref(), LassoParams::default()).map_err(js_err)?;
        warm = Some(sol.weights.clone());
        weights.push(sol.weights);
    }
    to_js(&PathView { lambdas, weights, truth })
}
