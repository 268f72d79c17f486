use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::{LogisticConfig, LogisticRegression};
use super::{EncoderOracle, MetricOutcome};
use crate::error::{Error, Result};
use crate::stats::derive_seed;

/// How the per-pair latent differences are pooled into a training point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifferenceMode {
    /// Mean of `|z1 - z2|`.
    #[default]
    Absolute,
    /// Mean of `z1 - z2`.
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaVaeConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub batch: usize,
    pub difference: DifferenceMode,
    pub classifier: LogisticConfig,
}

impl Default for BetaVaeConfig {
    fn default() -> Self {
        Self {
            n_train: 10000,
            n_test: 5000,
            batch: 64,
            difference: DifferenceMode::Absolute,
            classifier: LogisticConfig::default(),
        }
    }
}

fn points(
    oracle: &dyn EncoderOracle,
    config: &BetaVaeConfig,
    n: usize,
    seed: u64,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let k_count = oracle.spec().n_factors();
    let l = oracle.n_latents();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
            let k = rng.random_range(0..k_count);
            let mut acc = vec![0.0; l];
            for _ in 0..config.batch {
                let v = oracle.draw_value(k, &mut rng);
                let z = oracle.draw(2, Some((k, v)), &mut rng)?;
                for (a, (x, y)) in acc.iter_mut().zip(z.row(0).iter().zip(z.row(1))) {
                    *a += match config.difference {
                        DifferenceMode::Absolute => (x - y).abs(),
                        DifferenceMode::Signed => x - y,
                    };
                }
            }
            acc.iter_mut().for_each(|a| *a /= config.batch as f64);
            Ok((acc, k))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut x = Array2::zeros((n, l));
    let mut y = Vec::with_capacity(n);
    for (i, (row, k)) in rows.into_iter().enumerate() {
        x.row_mut(i).assign(&ndarray::Array1::from(row));
        y.push(k);
    }
    Ok((x, y))
}

/// Test accuracy of a linear classifier predicting which factor was held
/// fixed from batch-averaged latent differences.
pub fn beta_vae_metric(oracle: &dyn EncoderOracle, config: &BetaVaeConfig, seed: u64) -> Result<MetricOutcome> {
    let k = oracle.spec().n_factors();
    if k < 2 {
        return Err(Error::metric("betavae", "needs at least 2 factors"));
    }
    if config.batch == 0 || config.n_train == 0 || config.n_test == 0 {
        return Err(Error::metric("betavae", "batch, n_train and n_test must be positive"));
    }
    let (xtr, ytr) = points(oracle, config, config.n_train, derive_seed(seed, &[1]))?;
    let (xte, yte) = points(oracle, config, config.n_test, derive_seed(seed, &[2]))?;
    let model = LogisticRegression::fit(xtr.view(), &ytr, k, &config.classifier);
    Ok(MetricOutcome::new(model.accuracy(xte.view(), &yte)))
}
