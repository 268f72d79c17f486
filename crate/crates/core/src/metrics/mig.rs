use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::MetricOutcome;
use crate::error::{Error, Result};
use crate::stats::{average_ranks, select_rows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binning {
    /// Equal-width bins over the observed range.
    #[default]
    EqualWidth,
    /// Equal-count bins by rank; invariant to monotone transforms.
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MigConfig {
    pub n_samples: usize,
    pub bins: usize,
    pub binning: Binning,
}

impl Default for MigConfig {
    fn default() -> Self {
        Self { n_samples: 10000, bins: 20, binning: Binning::EqualWidth }
    }
}

fn discretize(z: ArrayView1<'_, f64>, bins: usize, mode: Binning) -> Vec<usize> {
    let n = z.len();
    match mode {
        Binning::EqualWidth => {
            let lo = z.fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            if hi <= lo {
                return vec![0; n];
            }
            let w = (hi - lo) / bins as f64;
            z.iter().map(|&v| (((v - lo) / w) as usize).min(bins - 1)).collect()
        }
        Binning::Quantile => {
            let r = average_ranks(z);
            r.iter().map(|&r| (((r - 1.0) * bins as f64 / n as f64) as usize).min(bins - 1)).collect()
        }
    }
}

fn dense_labels<T: Ord + Copy>(v: impl Iterator<Item = T>) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    let labels = v
        .map(|x| {
            let next = ids.len();
            *ids.entry(x).or_insert(next)
        })
        .collect();
    (labels, ids.len())
}

fn entropy(labels: &[usize], n_values: usize) -> f64 {
    let mut counts = vec![0usize; n_values];
    labels.iter().for_each(|&l| counts[l] += 1);
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information in nats between two discrete label vectors.
pub(crate) fn mutual_information(a: &[usize], na: usize, b: &[usize], nb: usize) -> f64 {
    let mut joint = vec![0usize; na * nb];
    let mut ca = vec![0usize; na];
    let mut cb = vec![0usize; nb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * nb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let n = a.len() as f64;
    let mut mi = 0.0;
    for x in 0..na {
        for y in 0..nb {
            let c = joint[x * nb + y];
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (ca[x] as f64 * cb[y] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Mean over factors of the gap between the two largest latent-factor
/// mutual informations, normalised by the factor entropy.
///
/// Rows are subsampled to `n_samples` with `seed`. Factors that are constant
/// in the sample are skipped with a diagnostic.
pub fn mutual_information_gap(
    latents: ArrayView2<'_, f64>,
    factors: ArrayView2<'_, i32>,
    config: &MigConfig,
    seed: u64,
) -> Result<MetricOutcome> {
    if latents.nrows() != factors.nrows() {
        return Err(Error::Dimension(format!(
            "{} latent rows but {} factor rows",
            latents.nrows(),
            factors.nrows()
        )));
    }
    if config.bins < 2 {
        return Err(Error::metric("mig", "bins must be at least 2"));
    }
    let rows = select_rows(latents.nrows(), config.n_samples, seed);
    if rows.len() < config.bins {
        return Err(Error::metric("mig", format!("{} samples is fewer than {} bins", rows.len(), config.bins)));
    }
    let z = latents.select(Axis(0), &rows);
    let v = factors.select(Axis(0), &rows);
    let zb: Vec<Vec<usize>> = z.columns().into_iter().map(|c| discretize(c, config.bins, config.binning)).collect();

    let mut out = MetricOutcome::new(0.0);
    let mut gaps = Vec::new();
    for (k, col) in v.columns().into_iter().enumerate() {
        let (labels, nv) = dense_labels(col.iter().copied());
        if nv < 2 {
            out.diagnostics.push(format!("factor {k} is constant in the sample and was excluded"));
            continue;
        }
        let h = entropy(&labels, nv);
        let mut mis: Vec<f64> = zb.iter().map(|b| mutual_information(b, config.bins, &labels, nv)).collect();
        mis.sort_by(|a, b| b.total_cmp(a));
        let second = mis.get(1).copied().unwrap_or(0.0);
        gaps.push(((mis[0] - second) / h).clamp(0.0, 1.0));
    }
    if gaps.is_empty() {
        out.diagnostics.push("no factor varies in the sample; score set to 0".into());
    } else {
        out.score = gaps.iter().sum::<f64>() / gaps.len() as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn mutual_information_hand_case() {
        let a = [0, 0, 1, 1];
        assert!((mutual_information(&a, 2, &a, 2) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(mutual_information(&a, 2, &[0, 1, 0, 1], 2).abs() < 1e-12);
    }

    #[test]
    fn binning_modes() {
        let z = array![0.0, 0.5, 1.0, 10.0];
        assert_eq!(discretize(z.view(), 2, Binning::EqualWidth), vec![0, 0, 0, 1]);
        assert_eq!(discretize(z.view(), 2, Binning::Quantile), vec![0, 0, 1, 1]);
        assert_eq!(discretize(array![3.0, 3.0].view(), 4, Binning::EqualWidth), vec![0, 0]);
    }

    #[test]
    fn duplicate_latents_give_zero_gap() {
        let f = Array2::from_shape_fn((40, 1), |(r, _)| (r % 4) as i32);
        let z = Array2::from_shape_fn((40, 2), |(r, _)| (r % 4) as f64);
        let cfg = MigConfig { bins: 4, ..Default::default() };
        assert_eq!(mutual_information_gap(z.view(), f.view(), &cfg, 0).unwrap().score, 0.0);
    }

    #[test]
    fn constant_factor_excluded() {
        let f = Array2::from_shape_fn((40, 2), |(r, c)| if c == 0 { (r % 4) as i32 } else { 1 });
        let z = Array2::from_shape_fn((40, 2), |(r, c)| if c == 0 { (r % 4) as f64 } else { (r % 7) as f64 });
        let cfg = MigConfig { bins: 4, ..Default::default() };
        let out = mutual_information_gap(z.view(), f.view(), &cfg, 0).unwrap();
        assert_eq!(out.diagnostics.len(), 1);
        assert!(out.score > 0.5);
    }
}
