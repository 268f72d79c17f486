use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{column_sample_variances, EncoderOracle, MetricOutcome};
use crate::error::{Error, Result};
use crate::stats::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorVaeConfig {
    pub n_prune: usize,
    pub n_votes: usize,
    pub n_test: usize,
    pub batch: usize,
    pub var_threshold: f64,
}

impl Default for FactorVaeConfig {
    fn default() -> Self {
        Self { n_prune: 10000, n_votes: 10000, n_test: 5000, batch: 64, var_threshold: 0.05 }
    }
}

/// `(argmin latent, fixed factor)` for `n` freshly drawn batches.
fn votes(
    oracle: &dyn EncoderOracle,
    config: &FactorVaeConfig,
    global: &[f64],
    kept: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let k_count = oracle.spec().n_factors();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
            let k = rng.random_range(0..k_count);
            let v = oracle.draw_value(k, &mut rng);
            let z = oracle.draw(config.batch, Some((k, v)), &mut rng)?;
            let var = column_sample_variances(z.view());
            let mut best = kept[0];
            for &j in kept {
                if var[j] / global[j] < var[best] / global[best] {
                    best = j;
                }
            }
            Ok((best, k))
        })
        .collect()
}

/// Accuracy of a majority-vote rule mapping the latent of least normalised
/// variance to the factor that was held fixed.
///
/// Latents with global variance below `var_threshold` are never voted for.
/// A test point whose argmin latent received no training votes counts as a
/// miss. If every latent is pruned the score is 0 with a diagnostic.
pub fn factorvae_metric(oracle: &dyn EncoderOracle, config: &FactorVaeConfig, seed: u64) -> Result<MetricOutcome> {
    let k = oracle.spec().n_factors();
    if config.batch < 2 || config.n_prune < 2 || config.n_votes == 0 || config.n_test == 0 {
        return Err(Error::metric("factorvae", "batch and n_prune must be >= 2, n_votes and n_test positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let global = column_sample_variances(oracle.draw(config.n_prune, None, &mut rng)?.view());
    let kept: Vec<usize> = (0..global.len()).filter(|&j| global[j] >= config.var_threshold).collect();
    if kept.is_empty() {
        return Ok(MetricOutcome {
            score: 0.0,
            diagnostics: vec![format!(
                "all {} latents have variance below {}; score set to 0",
                global.len(),
                config.var_threshold
            )],
        });
    }

    let mut table = vec![vec![0usize; k]; global.len()];
    for (j, f) in votes(oracle, config, &global, &kept, config.n_votes, derive_seed(seed, &[1]))? {
        table[j][f] += 1;
    }
    let rule: Vec<Option<usize>> = table
        .iter()
        .map(|counts| {
            let total: usize = counts.iter().sum();
            (total > 0).then(|| (0..k).fold(0, |b, f| if counts[f] > counts[b] { f } else { b }))
        })
        .collect();

    let test = votes(oracle, config, &global, &kept, config.n_test, derive_seed(seed, &[2]))?;
    let hits = test.iter().filter(|&&(j, f)| rule[j] == Some(f)).count();
    let mut out = MetricOutcome::new(hits as f64 / test.len() as f64);
    let unseen = test.iter().filter(|&&(j, _)| rule[j].is_none()).count();
    if unseen > 0 {
        out.diagnostics.push(format!("{unseen} test points selected a latent with no training votes"));
    }
    Ok(out)
}
