//! L1-regularised least squares on sufficient statistics.
//!
//! The objective is `Σ (y − xᵀw)² + λ‖w‖₁` with no `1/2` or `1/n` factor, so
//! every soft threshold works at `λ/2`. Problems are held as a Gram matrix
//! `XᵀX` and moment `Xᵀy`; solve cost depends on `d` only, not on how many
//! rows were accumulated.

use crate::error::{Error, Result};

/// Running `XᵀX`, `Xᵀy` and `yᵀy` for a growing design.
#[derive(Debug, Clone, PartialEq)]
pub struct GramAccumulator {
    dim: usize,
    /// Row-major `d×d`, kept exactly symmetric.
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    rows: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { dim, xtx: vec![0.0; dim * dim], xty: vec![0.0; dim], yty: 0.0, rows: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn xtx(&self, i: usize, j: usize) -> f64 {
        self.xtx[i * self.dim + j]
    }

    pub fn gram_row(&self, i: usize) -> &[f64] {
        &self.xtx[i * self.dim..(i + 1) * self.dim]
    }

    pub fn gram(&self) -> &[f64] {
        &self.xtx
    }

    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    /// Diagonal of `XᵀX`.
    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.xtx(i, i)).collect()
    }

    pub fn push_row(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.push_design_row(x)?;
        for (m, xi) in self.xty.iter_mut().zip(x) {
            *m += y * xi;
        }
        self.yty += y * y;
        Ok(())
    }

    /// Adds `x xᵀ` to the Gram matrix without touching the response moment.
    ///
    /// Used when responses are re-targeted wholesale later through
    /// [`GramAccumulator::replace_responses`] or [`GramAccumulator::set_moment`].
    pub fn push_design_row(&mut self, x: &[f64]) -> Result<()> {
        self.push_design_rows(std::iter::once(x))
    }

    /// Adds several design rows, mirroring the triangle once at the end.
    pub fn push_design_rows<'a, I>(&mut self, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let d = self.dim;
        let mut added = false;
        for x in rows {
            if x.len() != d {
                self.mirror();
                return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
            }
            for i in 0..d {
                let xi = x[i];
                if xi == 0.0 {
                    continue;
                }
                let row = &mut self.xtx[i * d + i..(i + 1) * d];
                for (g, xj) in row.iter_mut().zip(&x[i..]) {
                    *g += xi * xj;
                }
            }
            self.rows += 1;
            added = true;
        }
        if added {
            self.mirror();
        }
        Ok(())
    }

    fn mirror(&mut self) {
        let d = self.dim;
        for i in 1..d {
            for j in 0..i {
                self.xtx[i * d + j] = self.xtx[j * d + i];
            }
        }
    }

    pub fn accumulate<'a, I>(&mut self, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        for (x, y) in rows {
            self.push_row(x, y)?;
        }
        Ok(())
    }

    /// Rebuilds `Xᵀy` and `yᵀy` from new responses for the already
    /// accumulated rows, in the original order. `XᵀX` is left alone.
    pub fn replace_responses<'a, I>(&mut self, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut xty = vec![0.0; self.dim];
        let mut yty = 0.0;
        let mut count = 0;
        for (x, y) in rows {
            if x.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, actual: x.len() });
            }
            for (m, xi) in xty.iter_mut().zip(x) {
                *m += y * xi;
            }
            yty += y * y;
            count += 1;
        }
        if count != self.rows {
            return Err(Error::RowCountMismatch { expected: self.rows, actual: count });
        }
        self.xty = xty;
        self.yty = yty;
        Ok(())
    }

    /// Installs a response moment computed elsewhere (e.g. in closed form
    /// from the Gram matrix).
    pub fn set_moment(&mut self, xty: Vec<f64>, yty: f64) -> Result<()> {
        if xty.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: xty.len() });
        }
        self.xty = xty;
        self.yty = yty;
        Ok(())
    }

    /// `XᵀX · w`.
    pub fn gram_mul(&self, w: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| crate::mdp::dot(self.gram_row(i), w)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoParams {
    /// Convergence threshold on the largest coordinate change in one sweep.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub weights: Vec<f64>,
    /// Full coordinate sweeps performed.
    pub iterations: usize,
    /// Largest coordinate change in the final sweep.
    pub max_update: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

impl LassoSolution {
    pub fn nnz(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `Σ(y − xᵀw)² + λ‖w‖₁ = yᵀy − 2wᵀXᵀy + wᵀXᵀXw + λ‖w‖₁`.
pub fn objective(acc: &GramAccumulator, w: &[f64], lambda: f64) -> f64 {
    let gw = acc.gram_mul(w);
    let quad = crate::mdp::dot(w, &gw);
    let lin = crate::mdp::dot(w, acc.xty());
    acc.yty() - 2.0 * lin + quad + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent from `warm` (zeros when `None`).
///
/// Keeps `XᵀX·w` up to date incrementally so a sweep costs `O(d)` plus
/// `O(d)` per coordinate that actually moves. Coordinates with a zero Gram
/// diagonal are pinned to zero.
pub fn solve(
    acc: &GramAccumulator,
    lambda: f64,
    warm: Option<&[f64]>,
    params: LassoParams,
) -> Result<LassoSolution> {
    let d = acc.dim();
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be > 0, got {}", params.tol)));
    }
    let mut w = match warm {
        Some(w0) if w0.len() != d => {
            return Err(Error::DimensionMismatch { expected: d, actual: w0.len() })
        }
        Some(w0) => w0.to_vec(),
        None => vec![0.0; d],
    };
    let diag = acc.column_norms();
    for (wi, &g) in w.iter_mut().zip(&diag) {
        if g <= 0.0 {
            *wi = 0.0;
        }
    }
    let mut gw = acc.gram_mul(&w);
    let half = 0.5 * lambda;
    let xty = acc.xty();

    let mut iterations = 0;
    let mut max_update = 0.0;
    let mut converged = false;
    while iterations < params.max_iter {
        iterations += 1;
        max_update = 0.0f64;
        for i in 0..d {
            let g = diag[i];
            if g <= 0.0 {
                continue;
            }
            let old = w[i];
            let partial = xty[i] - (gw[i] - g * old);
            let new = soft_threshold(partial, half) / g;
            let delta = new - old;
            if delta != 0.0 {
                w[i] = new;
                for (gj, &col) in gw.iter_mut().zip(acc.gram_row(i)) {
                    *gj += col * delta;
                }
                max_update = max_update.max(delta.abs());
            }
        }
        if max_update <= params.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("lasso hit max_iter={} (last update {max_update:e})", params.max_iter);
    }
    let kkt = kkt_residual(acc, &w, lambda)?;
    Ok(LassoSolution { weights: w, iterations, max_update, kkt_residual: kkt, converged })
}

/// Largest violation of the Lasso optimality conditions at `w`.
///
/// With `g = 2(XᵀXw − Xᵀy)`: active coordinates need `g_i + λ·sign(w_i) = 0`,
/// inactive ones need `|g_i| ≤ λ`.
pub fn kkt_residual(acc: &GramAccumulator, w: &[f64], lambda: f64) -> Result<f64> {
    if w.len() != acc.dim() {
        return Err(Error::DimensionMismatch { expected: acc.dim(), actual: w.len() });
    }
    let gw = acc.gram_mul(w);
    let mut worst = 0.0f64;
    for i in 0..acc.dim() {
        let g = 2.0 * (gw[i] - acc.xty()[i]);
        let r = if w[i] != 0.0 {
            (g + lambda * w[i].signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(r);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn from_rows(d: usize, rows: &[(Vec<f64>, f64)]) -> GramAccumulator {
        let mut acc = GramAccumulator::new(d);
        acc.accumulate(rows.iter().map(|(x, y)| (x.as_slice(), *y))).unwrap();
        acc
    }

    #[test]
    fn accumulate_basics() {
        let mut acc = GramAccumulator::new(2);
        acc.accumulate(std::iter::empty()).unwrap();
        assert_eq!(acc, GramAccumulator::new(2));
        acc.push_row(&[1.0, 0.0], 2.0).unwrap();
        assert_eq!(acc.xtx(0, 0), 1.0);
        assert_eq!(acc.xty()[0], 2.0);
        assert_eq!(acc.row_count(), 1);
        assert!(matches!(acc.push_row(&[1.0], 0.0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn replace_responses_examples() {
        let rows = vec![(vec![1.0, 0.0], 1.0), (vec![1.0, 0.0], 3.0)];
        let mut acc = from_rows(2, &rows);
        assert_eq!(acc.xty(), &[4.0, 0.0]);
        let before = acc.clone();
        acc.replace_responses(rows.iter().map(|(x, y)| (x.as_slice(), *y))).unwrap();
        assert_eq!(acc, before);
        acc.replace_responses(rows.iter().map(|(x, _)| (x.as_slice(), 0.0))).unwrap();
        assert_eq!(acc.xty(), &[0.0, 0.0]);
        assert_eq!(acc.gram(), before.gram());
        let err = acc.replace_responses(rows.iter().take(1).map(|(x, y)| (x.as_slice(), *y)));
        assert!(matches!(err, Err(Error::RowCountMismatch { expected: 2, actual: 1 })));
    }

    #[test]
    fn closed_form_one_dimensional() {
        let acc = from_rows(1, &[(vec![1.0], 2.0), (vec![1.0], 2.0)]);
        let sol = solve(&acc, 2.0, None, LassoParams::default()).unwrap();
        assert!((sol.weights[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_soft_threshold() {
        let acc = from_rows(2, &[(vec![1.0, 0.0], 3.0), (vec![0.0, 1.0], -1.0)]);
        let sol = solve(&acc, 2.0, None, LassoParams::default()).unwrap();
        assert_eq!(sol.weights, vec![2.0, 0.0]);
        assert!(kkt_residual(&acc, &[2.0, 0.0], 2.0).unwrap() < 1e-10);
    }

    #[test]
    fn large_lambda_gives_zero() {
        let acc = from_rows(2, &[(vec![1.0, 0.5], 3.0), (vec![0.2, 1.0], -1.0)]);
        let lam = 2.0 * acc.xty().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sol = solve(&acc, lam, None, LassoParams::default()).unwrap();
        assert_eq!(sol.weights, vec![0.0, 0.0]);
        assert_eq!(kkt_residual(&acc, &sol.weights, lam).unwrap(), 0.0);
    }

    #[test]
    fn kkt_grows_linearly_off_optimum() {
        let acc = from_rows(2, &[(vec![1.0, 0.0], 3.0), (vec![0.0, 1.0], -1.0)]);
        for delta in [1e-3, 0.1, 0.5] {
            let r = kkt_residual(&acc, &[2.0 + delta, 0.0], 2.0).unwrap();
            assert!(r >= 2.0 * delta - 1e-12, "delta {delta}: residual {r}");
        }
    }

    #[test]
    fn zero_column_pinned() {
        let acc = from_rows(2, &[(vec![1.0, 0.0], 3.0)]);
        let sol = solve(&acc, 0.0, Some(&[0.0, 5.0]), LassoParams::default()).unwrap();
        assert_eq!(sol.weights[1], 0.0);
        assert!((sol.weights[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let acc = GramAccumulator::new(2);
        assert!(solve(&acc, -1.0, None, LassoParams::default()).is_err());
        assert!(solve(&acc, 1.0, Some(&[0.0]), LassoParams::default()).is_err());
        assert!(solve(&acc, 1.0, None, LassoParams { tol: 0.0, max_iter: 5 }).is_err());
    }

    #[test]
    fn non_convergence_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<_> = (0..30)
            .map(|_| {
                let t: f64 = rng.random_range(-1.0..1.0);
                (vec![t, t + 1e-3 * rng.random_range(-1.0..1.0)], rng.random_range(-1.0..1.0))
            })
            .collect();
        let acc = from_rows(2, &rows);
        let sol = solve(&acc, 0.0, None, LassoParams { tol: 1e-14, max_iter: 2 }).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 2);
    }

    fn random_problem(rng: &mut ChaCha8Rng, d: usize, m: usize) -> GramAccumulator {
        let truth: Vec<f64> = (0..d).map(|i| if i < 3 { rng.random_range(-2.0..2.0) } else { 0.0 }).collect();
        let scale = 1.0 / (m as f64).sqrt();
        let mut acc = GramAccumulator::new(d);
        for _ in 0..m {
            let x: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.7..1.7)).collect();
            let y = crate::mdp::dot(&x, &truth) + scale * rng.random_range(-0.5..0.5);
            acc.push_row(&x, y).unwrap();
        }
        acc
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn incremental_equals_batch(seed in any::<u64>(), d in 1usize..8, m in 1usize..40, split in 0usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<(Vec<f64>, f64)> = (0..m)
                .map(|_| ((0..d).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_range(-2.0..2.0)))
                .collect();
            let batch = from_rows(d, &rows);
            let cut = split.min(m);
            let mut inc = from_rows(d, &rows[..cut]);
            inc.accumulate(rows[cut..].iter().map(|(x, y)| (x.as_slice(), *y))).unwrap();
            for (a, b) in batch.gram().iter().zip(inc.gram()) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            }
            for (a, b) in batch.xty().iter().zip(inc.xty()) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn solve_meets_kkt_and_descends(seed in any::<u64>(), d in 1usize..30, m in 1usize..200, frac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let acc = random_problem(&mut rng, d, m);
            let lam_max = 2.0 * acc.xty().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let lambda = frac * lam_max;
            let w0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let params = LassoParams::default();
            let sol = solve(&acc, lambda, Some(&w0), params).unwrap();
            prop_assume!(sol.converged);
            prop_assert!(sol.kkt_residual <= 10.0 * params.tol, "kkt {}", sol.kkt_residual);
            let f = objective(&acc, &sol.weights, lambda);
            prop_assert!(f <= objective(&acc, &w0, lambda) + 1e-12);
            prop_assert!(f <= objective(&acc, &vec![0.0; d], lambda) + 1e-12);
        }

        #[test]
        fn warm_start_same_objective(seed in any::<u64>(), d in 1usize..12, frac in 0.05f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // m > 4d keeps the design strictly convex.
            let acc = random_problem(&mut rng, d, 8 * d + 20);
            let lam_max = 2.0 * acc.xty().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let params = LassoParams { tol: 1e-12, max_iter: 100_000 };
            let cold = solve(&acc, frac * lam_max, None, params).unwrap();
            let prev = solve(&acc, 0.5 * frac * lam_max, None, params).unwrap();
            let warm = solve(&acc, frac * lam_max, Some(&prev.weights), params).unwrap();
            let a = objective(&acc, &cold.weights, frac * lam_max);
            let b = objective(&acc, &warm.weights, frac * lam_max);
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }
}
