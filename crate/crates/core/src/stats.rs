//! Small statistical helpers: ranks, correlations, order statistics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 1-based ranks with ties assigned the average of the ranks they span.
pub fn average_ranks(x: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = Array1::zeros(n);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share ranks i+1..=j
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation; 0 when either input is constant.
pub fn pearson(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    pearson(average_ranks(x).view(), average_ranks(y).view())
}

/// Ranks every column, then centres and scales it to unit Euclidean norm.
/// Constant columns become all-zero, so dot products of the result are
/// Spearman correlations (0 against a constant column).
pub fn normalized_rank_columns(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim());
    for (j, col) in m.axis_iter(Axis(1)).enumerate() {
        let mut r = average_ranks(col);
        let mean = r.mean().unwrap_or(0.0);
        r -= mean;
        let norm = r.dot(&r).sqrt();
        if norm > 0.0 {
            r /= norm;
            out.column_mut(j).assign(&r);
        }
    }
    out
}

/// Shifts every column to zero mean and scales it to unit (population)
/// variance. Zero-variance columns are left at zero.
pub fn standardize_columns(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = m.nrows() as f64;
    let mut out = Array2::zeros(m.dim());
    for (j, col) in m.axis_iter(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            let sd = var.sqrt();
            out.column_mut(j).assign(&col.mapv(|v| (v - mean) / sd));
        }
    }
    out
}

/// Median; even counts take the mean of the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linearly interpolated quantile over the sorted sample (`q` in [0, 1]).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt())
}

/// Sorted row indices of a seeded uniform draw of `n` rows without
/// replacement; all rows when `n >= total`.
pub fn select_rows(total: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, total, n).into_vec();
    rows.sort_unstable();
    rows
}

/// Derives an independent stream seed from a base seed and a list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ 0x6a09_e667_f3bc_c908);
    for &t in tags {
        h = splitmix64(h ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    h
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    #[test]
    fn ranks_average_ties() {
        let r = average_ranks(array![3.0, 1.0, 3.0, 2.0].view());
        assert_eq!(r, array![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_hand_cases() {
        let a = array![1.0, 2.0, 3.0, 4.0];
        assert!((spearman(a.view(), array![1.0, 8.0, 27.0, 64.0].view()) - 1.0).abs() < 1e-15);
        assert!((spearman(a.view(), array![2.0, 1.0, 4.0, 3.0].view()) - 0.6).abs() < 1e-12);
        let b = array![1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(b.view(), array![1.0, 3.0, 2.0, 5.0, 4.0].view()) - 0.8).abs() < 1e-12);
        assert_eq!(spearman(a.view(), array![1.0, 1.0, 1.0, 1.0].view()), 0.0);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[0.2, 0.9, 0.5]), Some(0.5));
        assert!((median(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(median(&[]), None);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), Some(2.0));
    }

    #[test]
    fn select_rows_is_sorted_and_deterministic() {
        let a = select_rows(100, 10, 7);
        assert_eq!(a, select_rows(100, 10, 7));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_rows(5, 10, 7), vec![0, 1, 2, 3, 4]);
    }

    proptest! {
        #[test]
        fn spearman_agrees_with_dot_of_normalized_ranks(
            xs in prop::collection::vec(-5i32..5, 6..40),
            seed in 0u64..1000,
        ) {
            let x = Array1::from_iter(xs.iter().map(|&v| v as f64));
            let y = Array1::from_iter(xs.iter().enumerate().map(|(i, &v)| {
                ((derive_seed(seed, &[i as u64]) % 7) as f64) - v as f64 * 0.5
            }));
            let mut m = Array2::zeros((x.len(), 2));
            m.column_mut(0).assign(&x);
            m.column_mut(1).assign(&y);
            let nr = normalized_rank_columns(m.view());
            let dot = nr.column(0).dot(&nr.column(1));
            prop_assert!((dot - spearman(x.view(), y.view())).abs() < 1e-12);
        }

        #[test]
        fn spearman_is_monotone_invariant(xs in prop::collection::vec(-100.0f64..100.0, 3..30)) {
            let x = Array1::from(xs);
            let y = x.mapv(|v| v.powi(3) + 2.0 * v);
            prop_assert!((spearman(x.view(), y.view()) - 1.0).abs() < 1e-12
                || x.iter().all(|&v| v == x[0]));
        }
    }
}
