//! Gram-matrix estimates, restricted-minimum-eigenvalue bounds, the
//! population target weights `w̄_h` and the log-log slope fit.

use rand::seq::index;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{clip_to_horizon, ActionId, EpisodeTrace, Environment};
use crate::synthetic::{ContextState, Flag, SyntheticEnv};

const ASYMMETRY_TOL: f64 = 1e-9;
const JACOBI_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramMode {
    PlayedActions,
    AllActions,
}

/// Symmetric `d × d` second-moment estimate, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramEstimate {
    pub dim: usize,
    pub matrix: Vec<f64>,
    pub samples: usize,
    pub mode: GramMode,
}

impl GramEstimate {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }
}

/// Averages `φφᵀ` over every recorded period; in all-actions mode each state
/// contributes the mean over all `K` actions instead of the played one.
pub fn empirical_gram<E: Environment + ?Sized>(
    traces: &[EpisodeTrace<E::State>],
    env: &E,
    mode: GramMode,
) -> Result<GramEstimate> {
    let d = env.feature_dim();
    let k = env.action_count();
    let mut sum = vec![0.0; d * d];
    let mut phi = vec![0.0; d];
    let mut samples = 0usize;
    let add = |phi: &[f64], weight: f64, sum: &mut [f64]| {
        for (i, pi) in phi.iter().enumerate() {
            if *pi == 0.0 {
                continue;
            }
            let row = &mut sum[i * d..(i + 1) * d];
            for (r, pj) in row.iter_mut().zip(phi) {
                *r += weight * pi * pj;
            }
        }
    };
    for trace in traces {
        for p in &trace.periods {
            match mode {
                GramMode::PlayedActions => {
                    env.feature_into(&p.state, p.action, &mut phi);
                    add(&phi, 1.0, &mut sum);
                }
                GramMode::AllActions => {
                    for a in 0..k {
                        env.feature_into(&p.state, ActionId::from_index(a), &mut phi);
                        add(&phi, 1.0 / k as f64, &mut sum);
                    }
                }
            }
            samples += 1;
        }
    }
    if samples == 0 {
        return Err(Error::InvalidInput("no samples to estimate a Gram matrix".into()));
    }
    for v in &mut sum {
        *v /= samples as f64;
    }
    Ok(GramEstimate { dim: d, matrix: sum, samples, mode })
}

fn check_square(m: &[f64], d: usize) -> Result<()> {
    if m.len() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, actual: m.len() });
    }
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in i + 1..d {
            worst = worst.max((m[i * d + j] - m[j * d + i]).abs());
        }
    }
    if worst > ASYMMETRY_TOL {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &[f64], d: usize) -> Result<Vec<f64>> {
    check_square(m, d)?;
    let mut a = m.to_vec();
    for i in 0..d {
        for j in i + 1..d {
            let avg = 0.5 * (a[i * d + j] + a[j * d + i]);
            a[i * d + j] = avg;
            a[j * d + i] = avg;
        }
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..d {
                    let arp = a[r * d + p];
                    let arq = a[r * d + q];
                    a[r * d + p] = c * arp - s * arq;
                    a[r * d + q] = s * arp + c * arq;
                }
                for r in 0..d {
                    let apr = a[p * d + r];
                    let aqr = a[q * d + r];
                    a[p * d + r] = c * apr - s * aqr;
                    a[q * d + r] = s * apr + c * aqr;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

pub fn min_eigenvalue(m: &[f64], d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    Ok(symmetric_eigenvalues(m, d)?[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmeOptions {
    pub subset_budget: u64,
    pub direction_samples: usize,
    /// Extra index set always evaluated when subsets are sampled.
    pub marked: Option<Vec<usize>>,
}

impl Default for RmeOptions {
    fn default() -> Self {
        Self { subset_budget: 100_000, direction_samples: 10_000, marked: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmeBounds {
    pub lower: f64,
    pub upper: f64,
    pub exhaustive: bool,
}

fn binomial(n: usize, k: usize) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u64)? / (i as u64 + 1);
    }
    Some(acc)
}

fn principal_min_eig(m: &[f64], d: usize, set: &[usize]) -> Result<f64> {
    let s = set.len();
    let mut sub = vec![0.0; s * s];
    for (a, &i) in set.iter().enumerate() {
        for (b, &j) in set.iter().enumerate() {
            sub[a * s + b] = m[i * d + j];
        }
    }
    min_eigenvalue(&sub, s)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Certified lower and upper bounds on the restricted minimum eigenvalue
/// `min_{|I| ≤ s} min_{‖β_{Iᶜ}‖₁ ≤ 3‖β_I‖₁} βᵀMβ / ‖β_I‖₂²`.
pub fn rme_bounds(m: &[f64], d: usize, s: usize, options: &RmeOptions, rng: &mut dyn RngCore) -> Result<RmeBounds> {
    if s == 0 || s > d {
        return Err(Error::InvalidInput(format!("sparsity {s} must lie in 1..={d}")));
    }
    let lower = min_eigenvalue(m, d)?;
    let mut upper = f64::INFINITY;
    let mut best: Vec<usize> = (0..s).collect();
    let consider = |set: &[usize], upper: &mut f64, best: &mut Vec<usize>| -> Result<()> {
        let v = principal_min_eig(m, d, set)?;
        if v < *upper {
            *upper = v;
            best.clear();
            best.extend_from_slice(set);
        }
        Ok(())
    };
    let exhaustive = binomial(d, s).is_some_and(|c| c <= options.subset_budget);
    if exhaustive {
        let mut c: Vec<usize> = (0..s).collect();
        loop {
            consider(&c, &mut upper, &mut best)?;
            if !next_combination(&mut c, d) {
                break;
            }
        }
    } else {
        if let Some(marked) = &options.marked {
            if marked.len() != s || marked.iter().any(|i| *i >= d) {
                return Err(Error::InvalidInput("marked index set must hold s indices below d".into()));
            }
            consider(marked, &mut upper, &mut best)?;
        }
        for _ in 0..options.subset_budget {
            let mut set = index::sample(rng, d, s).into_vec();
            set.sort_unstable();
            consider(&set, &mut upper, &mut best)?;
        }
    }

    // Random cone-feasible directions can only tighten the upper bound.
    let mut beta = vec![0.0; d];
    let mut in_set = vec![false; d];
    for t in 0..options.direction_samples {
        let set: Vec<usize> = if t % 2 == 0 { best.clone() } else { index::sample(rng, d, s).into_vec() };
        in_set.fill(false);
        for &i in &set {
            in_set[i] = true;
        }
        let mut l1_in = 0.0;
        let mut l2_in = 0.0;
        for &i in &set {
            let v: f64 = rng.sample(StandardNormal);
            beta[i] = v;
            l1_in += v.abs();
            l2_in += v * v;
        }
        let mut l1_out = 0.0;
        for i in 0..d {
            if !in_set[i] {
                let v = rng.random::<f64>() * if rng.random::<bool>() { 1.0 } else { -1.0 };
                beta[i] = v;
                l1_out += v.abs();
            }
        }
        if l1_out > 0.0 {
            let scale = rng.random::<f64>() * 3.0 * l1_in / l1_out;
            for i in 0..d {
                if !in_set[i] {
                    beta[i] *= scale;
                }
            }
        }
        let mut quad = 0.0;
        for i in 0..d {
            let row = &m[i * d..(i + 1) * d];
            quad += beta[i] * row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        }
        if l2_in > 0.0 {
            upper = upper.min(quad / l2_in);
        }
    }
    Ok(RmeBounds { lower, upper, exhaustive })
}

/// `Σ_g Π_{[0,H]}(max_a Q̂_{w_next}((x, g), a)) ψ(x, g)` at a fixed context.
pub fn barw_target(context: &ContextState, w_next: &[f64], env: &SyntheticEnv) -> Result<Vec<f64>> {
    let d = env.feature_dim();
    if w_next.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: w_next.len() });
    }
    let mut out = vec![0.0; d];
    let mut q = vec![0.0; env.action_count()];
    for g in Flag::BOTH {
        let state = context.with_flag(g);
        env.feature_dots(&state, w_next, &mut q);
        let v = q
            .iter()
            .enumerate()
            .map(|(a, dot)| env.reward(&state, ActionId::from_index(a)) + dot)
            .fold(f64::NEG_INFINITY, f64::max);
        let v = clip_to_horizon(v, env.horizon());
        for (o, p) in out.iter_mut().zip(env.psi(context.signs(), g)) {
            *o += v * p;
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("need at least two points".into()));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidInput("log-log fit needs positive coordinates".into()));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("log-log fit needs distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}
