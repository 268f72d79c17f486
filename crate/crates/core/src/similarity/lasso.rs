//! Multi-task Lasso by block coordinate descent.
//!
//! Solves `min_W 1/(2n) ||XW - Y||_F^2 + lambda * sum_i ||W_i||_2` where
//! `W_i` is the row of weights of predictor `i` across all tasks. The solver
//! works on Gram statistics (`X'X`, `X'Y`, `||Y||^2`), so one sweep costs
//! `O(p^2 t)` regardless of the number of samples, and cross-validation
//! folds are handled by subtracting per-fold statistics.
//!
//! Predictors are visited in decreasing order of `||X_i' Y||`, ties broken by
//! index. The visiting order therefore follows the predictors under any
//! column permutation or sign flip, which keeps the fitted weights
//! equivariant to the last few ulps rather than to the stopping tolerance.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Comparison, SimilarityKind, SimilarityMatrix, SimilarityMethod};
use crate::error::{Error, Result};
use crate::stats::standardize_columns;

/// Multi-task objective (grouped penalty) or one independent Lasso per target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LassoObjective {
    MultiTask,
    PerTarget,
}

/// How cross-validation picks lambda from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRule {
    /// Lowest mean held-out error.
    MinError,
    /// Largest lambda within one standard error of the lowest mean error.
    OneStandardError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub n_samples: usize,
    pub cv_folds: usize,
    pub n_lambdas: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub lambda_ratio: f64,
    /// Explicit grid; overrides `n_lambdas` / `lambda_ratio` when set.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    pub max_iter: usize,
    pub tol: f64,
    pub objective: LassoObjective,
    pub rule: LambdaRule,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            cv_folds: 3,
            n_lambdas: 20,
            lambda_ratio: 1e-3,
            lambda_grid: None,
            max_iter: 1000,
            tol: 1e-4,
            objective: LassoObjective::MultiTask,
            rule: LambdaRule::MinError,
        }
    }
}

/// Unnormalised sufficient statistics of a regression problem.
#[derive(Debug, Clone)]
pub struct GramStats {
    pub xtx: Array2<f64>,
    pub xty: Array2<f64>,
    pub yty: f64,
    pub n: usize,
}

impl GramStats {
    pub fn from_data(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Self {
        assert_eq!(x.nrows(), y.nrows());
        Self {
            xtx: x.t().dot(&x),
            xty: x.t().dot(&y),
            yty: y.iter().map(|v| v * v).sum(),
            n: x.nrows(),
        }
    }

    fn minus(&self, other: &GramStats) -> GramStats {
        GramStats {
            xtx: &self.xtx - &other.xtx,
            xty: &self.xty - &other.xty,
            yty: self.yty - other.yty,
            n: self.n - other.n,
        }
    }

    fn plus(&self, other: &GramStats) -> GramStats {
        GramStats {
            xtx: &self.xtx + &other.xtx,
            xty: &self.xty + &other.xty,
            yty: self.yty + other.yty,
            n: self.n + other.n,
        }
    }

    fn n_features(&self) -> usize {
        self.xtx.nrows()
    }

    fn n_tasks(&self) -> usize {
        self.xty.ncols()
    }

    /// `||XW - Y||_F^2` computed from the statistics.
    pub fn residual_ss(&self, w: &Array2<f64>) -> f64 {
        let gw = self.xtx.dot(w);
        let quad: f64 = (w * &gw).sum();
        let cross: f64 = (w * &self.xty).sum();
        (quad - 2.0 * cross + self.yty).max(0.0)
    }

    pub fn objective(&self, w: &Array2<f64>, lambda: f64) -> f64 {
        let penalty: f64 = w.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum();
        self.residual_ss(w) / (2.0 * self.n as f64) + lambda * penalty
    }
}

/// Smallest lambda at which the all-zero solution is optimal: `max_i ||X_i'Y|| / n`.
pub fn lambda_max(stats: &GramStats) -> f64 {
    stats
        .xty
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max)
        / stats.n as f64
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Record the objective after every sweep.
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub weights: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective before the first sweep followed by one value per sweep.
    pub objective_trace: Vec<f64>,
}

/// Block coordinate descent at a single `lambda`, optionally warm-started.
pub fn solve(
    stats: &GramStats,
    lambda: f64,
    warm: Option<&Array2<f64>>,
    opts: SolveOptions,
) -> SolveResult {
    let p = stats.n_features();
    let t = stats.n_tasks();
    let n = stats.n as f64;
    let mut w = warm.cloned().unwrap_or_else(|| Array2::zeros((p, t)));
    let mut trace = Vec::new();
    if opts.trace {
        trace.push(stats.objective(&w, lambda));
    }
    if p == 0 || t == 0 || stats.n == 0 {
        return SolveResult { weights: w, iterations: 0, converged: true, objective_trace: trace };
    }

    let norms: Vec<f64> = stats.xty.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut g = vec![0.0; t];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut max_change = 0.0f64;
        for &i in &order {
            let gii = stats.xtx[[i, i]] / n;
            if gii <= 0.0 {
                w.row_mut(i).fill(0.0);
                continue;
            }
            for (task, gv) in g.iter_mut().enumerate() {
                *gv = stats.xty[[i, task]] / n;
            }
            for &k in &order {
                if k == i {
                    continue;
                }
                let gik = stats.xtx[[i, k]] / n;
                if gik != 0.0 {
                    for (task, gv) in g.iter_mut().enumerate() {
                        *gv -= gik * w[[k, task]];
                    }
                }
            }
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            // relative slack so that lambda = lambda_max yields exact zeros despite rounding
            let shrink = if norm > lambda * (1.0 + 1e-12) { (1.0 - lambda / norm) / gii } else { 0.0 };
            for (task, &gv) in g.iter().enumerate() {
                let new = shrink * gv;
                max_change = max_change.max((new - w[[i, task]]).abs());
                w[[i, task]] = new;
            }
        }
        if opts.trace {
            trace.push(stats.objective(&w, lambda));
        }
        if max_change <= opts.tol {
            converged = true;
            break;
        }
    }
    SolveResult { weights: w, iterations, converged, objective_trace: trace }
}

/// Outcome of a cross-validated fit.
#[derive(Debug, Clone)]
pub struct LassoFit {
    /// `p x t` weights (predictors x targets).
    pub weights: Array2<f64>,
    /// Chosen lambda per task group (one entry for the multi-task objective).
    pub lambdas: Vec<f64>,
    /// Mean held-out MSE per grid value, for the first task group.
    pub cv_errors: Vec<f64>,
    pub grid: Vec<f64>,
    /// Number of solves (CV and final) that hit `max_iter`.
    pub unconverged: usize,
    pub final_iterations: usize,
}

fn lambda_grid(config: &LassoConfig, lmax: f64) -> Vec<f64> {
    if let Some(grid) = &config.lambda_grid {
        let mut g = grid.clone();
        g.sort_by(|a, b| b.total_cmp(a));
        return g;
    }
    let k = config.n_lambdas.max(1);
    if k == 1 {
        return vec![lmax];
    }
    let (hi, lo) = (lmax.ln(), (lmax * config.lambda_ratio).ln());
    let mut g: Vec<f64> = (0..k)
        .map(|i| (hi + (lo - hi) * i as f64 / (k - 1) as f64).exp())
        .collect();
    g[0] = lmax;
    g
}

fn fold_stats(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, folds: usize, seed: u64) -> Vec<GramStats> {
    let n = x.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..folds)
        .map(|f| {
            let mut idx = perm[f * n / folds..(f + 1) * n / folds].to_vec();
            idx.sort_unstable();
            GramStats::from_data(x.select(Axis(0), &idx).view(), y.select(Axis(0), &idx).view())
        })
        .collect()
}

fn fit_group(
    folds: &[GramStats],
    total: &GramStats,
    config: &LassoConfig,
) -> (Array2<f64>, f64, Vec<f64>, Vec<f64>, usize, usize) {
    let opts = SolveOptions { max_iter: config.max_iter, tol: config.tol, trace: false };
    let lmax = lambda_max(total);
    let p = total.n_features();
    let t = total.n_tasks();
    if lmax <= 0.0 {
        return (Array2::zeros((p, t)), 0.0, vec![], vec![], 0, 0);
    }
    let grid = lambda_grid(config, lmax);
    let mut unconverged = 0;

    let chosen = if folds.len() >= 2 {
        let mut errors = vec![vec![0.0; folds.len()]; grid.len()];
        for (f, held) in folds.iter().enumerate() {
            let train = total.minus(held);
            let mut warm: Option<Array2<f64>> = None;
            for (g, &lambda) in grid.iter().enumerate() {
                let res = solve(&train, lambda, warm.as_ref(), opts);
                unconverged += usize::from(!res.converged);
                errors[g][f] = held.residual_ss(&res.weights) / held.n.max(1) as f64;
                warm = Some(res.weights);
            }
        }
        let k = folds.len() as f64;
        let means: Vec<f64> = errors.iter().map(|e| e.iter().sum::<f64>() / k).collect();
        // grid is descending, so the first minimum is the largest lambda among ties
        let best = (0..grid.len())
            .min_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)))
            .expect("non-empty grid");
        let pick = match config.rule {
            LambdaRule::MinError => best,
            LambdaRule::OneStandardError => {
                let m = means[best];
                let sd = (errors[best].iter().map(|e| (e - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
                let limit = m + sd / k.sqrt();
                (0..grid.len()).find(|&g| means[g] <= limit).unwrap_or(best)
            }
        };
        (pick, means)
    } else {
        (grid.len() - 1, vec![])
    };
    let (pick, means) = chosen;

    let mut warm: Option<Array2<f64>> = None;
    let mut last = None;
    for &lambda in &grid[..=pick] {
        let res = solve(total, lambda, warm.as_ref(), opts);
        unconverged += usize::from(!res.converged);
        warm = Some(res.weights.clone());
        last = Some(res);
    }
    let last = last.expect("at least one lambda");
    (last.weights, grid[pick], means, grid, unconverged, last.iterations)
}

/// Cross-validated fit predicting every column of `y` from the columns of `x`.
pub fn fit_multitask_lasso(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    config: &LassoConfig,
    seed: u64,
) -> Result<LassoFit> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "{} predictor rows vs {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    let folds = config.cv_folds.min(x.nrows());
    let groups: Vec<Vec<usize>> = match config.objective {
        LassoObjective::MultiTask => vec![(0..y.ncols()).collect()],
        LassoObjective::PerTarget => (0..y.ncols()).map(|t| vec![t]).collect(),
    };
    let mut weights = Array2::zeros((x.ncols(), y.ncols()));
    let mut fit = LassoFit {
        weights: Array2::zeros((0, 0)),
        lambdas: vec![],
        cv_errors: vec![],
        grid: vec![],
        unconverged: 0,
        final_iterations: 0,
    };
    for (gi, cols) in groups.iter().enumerate() {
        let yg = y.select(Axis(1), cols);
        let per_fold = fold_stats(x, yg.view(), folds.max(1), seed);
        let total = per_fold
            .iter()
            .skip(1)
            .fold(per_fold[0].clone(), |acc, s| acc.plus(s));
        let cv = if folds >= 2 { &per_fold[..] } else { &[][..] };
        let (w, lambda, errs, grid, unconv, iters) = fit_group(cv, &total, config);
        for (j, &c) in cols.iter().enumerate() {
            weights.column_mut(c).assign(&w.slice(s![.., j]));
        }
        fit.lambdas.push(lambda);
        fit.unconverged += unconv;
        fit.final_iterations = fit.final_iterations.max(iters);
        if gi == 0 {
            fit.cv_errors = errs;
            fit.grid = grid;
        }
    }
    fit.weights = weights;
    Ok(fit)
}

/// Lasso-based similarity, averaged over both regression directions by UDR.
#[derive(Debug, Clone)]
pub struct LassoMethod {
    config: LassoConfig,
}

impl LassoMethod {
    pub fn new(config: LassoConfig) -> Self {
        Self { config }
    }
}

impl SimilarityMethod for LassoMethod {
    fn kind(&self) -> SimilarityKind {
        SimilarityKind::Lasso
    }

    fn n_samples(&self) -> usize {
        self.config.n_samples
    }

    fn prepare(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        standardize_columns(values)
    }

    fn compare(&self, zi: &Array2<f64>, zj: &Array2<f64>, seed: u64) -> Result<Comparison> {
        // zi from zj: weights are (b, a); zj from zi: weights are (a, b)
        let forward = fit_multitask_lasso(zj.view(), zi.view(), &self.config, seed)?;
        let backward = fit_multitask_lasso(zi.view(), zj.view(), &self.config, seed)?;
        Ok(Comparison {
            matrices: vec![
                SimilarityMatrix::from_raw(forward.weights.t().to_owned(), SimilarityKind::Lasso)?,
                SimilarityMatrix::from_raw(backward.weights, SimilarityKind::Lasso)?,
            ],
            unconverged_fits: forward.unconverged + backward.unconverged,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::standardize_columns;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| rng.sample(StandardNormal))
    }

    fn opts(trace: bool) -> SolveOptions {
        SolveOptions { max_iter: 1000, tol: 1e-10, trace }
    }

    #[test]
    fn objective_never_increases() {
        let x = standardize_columns(gaussian(300, 6, 1).view());
        let w_true = gaussian(6, 4, 2);
        let y = x.dot(&w_true) + gaussian(300, 4, 3) * 0.5;
        let stats = GramStats::from_data(x.view(), y.view());
        let lmax = lambda_max(&stats);
        for frac in [0.5, 0.1, 0.01] {
            let res = solve(&stats, lmax * frac, None, opts(true));
            assert!(res.converged);
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn above_lambda_max_gives_zero() {
        let x = gaussian(100, 5, 4);
        let y = gaussian(100, 3, 5);
        let stats = GramStats::from_data(x.view(), y.view());
        let res = solve(&stats, lambda_max(&stats) * 1.0001, None, opts(false));
        assert!(res.weights.iter().all(|&w| w == 0.0));
        let cfg = LassoConfig { lambda_grid: Some(vec![10.0 * lambda_max(&stats)]), ..Default::default() };
        let fit = fit_multitask_lasso(x.view(), y.view(), &cfg, 0).unwrap();
        assert!(fit.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn kkt_conditions_hold_at_solution() {
        let x = standardize_columns(gaussian(400, 5, 6).view());
        let y = x.dot(&gaussian(5, 3, 7)) + gaussian(400, 3, 8);
        let stats = GramStats::from_data(x.view(), y.view());
        let lambda = 0.2 * lambda_max(&stats);
        let w = solve(&stats, lambda, None, opts(false)).weights;
        let n = stats.n as f64;
        let grad = (stats.xtx.dot(&w) - &stats.xty) / n;
        for i in 0..5 {
            let wi = w.row(i);
            let gi = grad.row(i);
            let wn = wi.dot(&wi).sqrt();
            if wn > 0.0 {
                for t in 0..3 {
                    assert!((gi[t] + lambda * wi[t] / wn).abs() < 1e-7);
                }
            } else {
                assert!(gi.dot(&gi).sqrt() <= lambda + 1e-9);
            }
        }
    }

    #[test]
    fn zero_variance_predictor_gets_zero_weight() {
        let mut x = standardize_columns(gaussian(200, 3, 9).view());
        x.column_mut(1).fill(0.0);
        let y = x.clone();
        let fit = fit_multitask_lasso(x.view(), y.view(), &LassoConfig::default(), 1).unwrap();
        assert!(fit.weights.row(1).iter().all(|&w| w == 0.0));
        assert!((fit.weights[[0, 0]] - 1.0).abs() < 0.05);
    }

    #[test]
    fn per_target_matches_independent_fits() {
        let x = standardize_columns(gaussian(300, 4, 10).view());
        let y = x.dot(&gaussian(4, 2, 11)) + gaussian(300, 2, 12);
        let cfg = LassoConfig { objective: LassoObjective::PerTarget, ..Default::default() };
        let fit = fit_multitask_lasso(x.view(), y.view(), &cfg, 3).unwrap();
        assert_eq!(fit.lambdas.len(), 2);
        let single_cfg = LassoConfig { objective: LassoObjective::MultiTask, ..Default::default() };
        let y1 = y.slice(s![.., 1..2]).to_owned();
        let single = fit_multitask_lasso(x.view(), y1.view(), &single_cfg, 3).unwrap();
        for i in 0..4 {
            assert!((single.weights[[i, 0]] - fit.weights[[i, 1]]).abs() < 1e-12);
        }
    }

    #[test]
    fn one_se_rule_prefers_larger_lambda() {
        let x = standardize_columns(gaussian(300, 6, 13).view());
        let y = gaussian(300, 1, 14);
        let min_cfg = LassoConfig::default();
        let se_cfg = LassoConfig { rule: LambdaRule::OneStandardError, ..Default::default() };
        let a = fit_multitask_lasso(x.view(), y.view(), &min_cfg, 0).unwrap();
        let b = fit_multitask_lasso(x.view(), y.view(), &se_cfg, 0).unwrap();
        assert!(b.lambdas[0] >= a.lambdas[0]);
    }
}
