//! Bagged regression trees with impurity-based feature importance.

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stats::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeEnsembleConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeEnsembleConfig {
    fn default() -> Self {
        Self { n_trees: 10, max_depth: 6, min_leaf: 5 }
    }
}

fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
    if n > 0.0 {
        sum_sq - sum * sum / n
    } else {
        0.0
    }
}

/// Grows one tree on `rows` and adds each split's impurity decrease to `importance`.
fn grow(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    rows: &mut [usize],
    depth: usize,
    config: &TreeEnsembleConfig,
    importance: &mut [f64],
) {
    let n = rows.len();
    if depth >= config.max_depth || n < 2 * config.min_leaf {
        return;
    }
    let (sum, sum_sq) = rows.iter().fold((0.0, 0.0), |(s, q), &r| (s + y[r], q + y[r] * y[r]));
    let parent = sse(sum, sum_sq, n as f64);
    if parent <= 1e-12 {
        return;
    }
    // (gain, feature, threshold)
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = rows.to_vec();
    for f in 0..x.ncols() {
        order.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]));
        let (mut ls, mut lq) = (0.0, 0.0);
        for i in 0..n - 1 {
            let v = y[order[i]];
            ls += v;
            lq += v * v;
            let left = i + 1;
            let (a, b) = (x[[order[i], f]], x[[order[i + 1], f]]);
            if left < config.min_leaf || n - left < config.min_leaf || a == b {
                continue;
            }
            let gain = parent - sse(ls, lq, left as f64) - sse(sum - ls, sum_sq - lq, (n - left) as f64);
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, 0.5 * (a + b)));
            }
        }
    }
    let Some((gain, f, t)) = best else { return };
    if gain <= 0.0 {
        return;
    }
    importance[f] += gain;
    let split = partition_in_place(rows, |&r| x[[r, f]] <= t);
    let (l, r) = rows.split_at_mut(split);
    grow(x, y, l, depth + 1, config, importance);
    grow(x, y, r, depth + 1, config, importance);
}

/// In-place partition; returns the number of elements satisfying `pred`.
fn partition_in_place(v: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let mut k = 0;
    for i in 0..v.len() {
        if pred(&v[i]) {
            v.swap(i, k);
            k += 1;
        }
    }
    k
}

/// Total impurity decrease per feature over `n_trees` bootstrap trees.
pub(crate) fn tree_importance(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    config: &TreeEnsembleConfig,
    seed: u64,
) -> Vec<f64> {
    let n = x.nrows();
    let mut importance = vec![0.0; x.ncols()];
    for t in 0..config.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
        let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        grow(x, y, &mut rows, 0, config, &mut importance);
    }
    importance
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn importance_goes_to_the_predictive_feature() {
        let x = Array2::from_shape_fn((200, 3), |(r, c)| ((r * (c + 3) * 7919) % 101) as f64);
        let y = x.column(1).mapv(|v| if v > 50.0 { 1.0 } else { 0.0 });
        let imp = tree_importance(x.view(), y.view(), &TreeEnsembleConfig::default(), 3);
        assert!(imp[1] > 0.0);
        assert!(imp[1] > 10.0 * (imp[0] + imp[2]));
    }

    #[test]
    fn partition_counts() {
        let mut v = vec![5, 1, 4, 2, 3];
        let k = partition_in_place(&mut v, |&x| x < 3);
        assert_eq!(k, 2);
        assert!(v[..2].iter().all(|&x| x < 3));
    }
}
