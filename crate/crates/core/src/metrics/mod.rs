//! Supervised disentanglement metrics used as ground-truth baselines.
//!
//! The β-VAE and FactorVAE metrics need batches with one factor held fixed,
//! so they consume an [`EncoderOracle`]. MIG and DCI work directly on a
//! latent matrix and its factor labels.

mod beta_vae;
mod dci;
mod factor_vae;
mod logistic;
mod mig;
mod trees;

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactorGrid, FactorSpec, ModelSet, ScoreRow, ScoreTable};
use crate::udr::informative_mask;

pub use beta_vae::{beta_vae_metric, BetaVaeConfig, DifferenceMode};
pub use dci::{dci_disentanglement, dci_from_importance, disentanglement_of, DciConfig, ImportanceMatrix, ImportanceMethod};
pub use factor_vae::{factorvae_metric, FactorVaeConfig};
pub use logistic::{LogisticConfig, LogisticRegression};
pub use mig::{mutual_information_gap, Binning, MigConfig};
pub use trees::TreeEnsembleConfig;

/// Source of latent means for freshly sampled factor tuples.
pub trait EncoderOracle: Sync {
    fn spec(&self) -> &FactorSpec;

    fn n_latents(&self) -> usize;

    /// Draws a value of factor `factor` from the data distribution.
    fn draw_value(&self, factor: usize, rng: &mut ChaCha8Rng) -> usize;

    /// Latents of `n` random observations, optionally with factor `k` fixed to `v`.
    fn draw(&self, n: usize, fixed: Option<(usize, usize)>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>>;
}

/// Oracle over a stored response: draws resample rows of the factor grid.
pub struct GridOracle<'a> {
    values: ArrayView2<'a, f64>,
    grid: &'a FactorGrid,
    /// `rows[k][v]`: rows whose factor `k` equals `v`.
    rows: Vec<Vec<Vec<usize>>>,
}

impl<'a> GridOracle<'a> {
    pub fn new(values: ArrayView2<'a, f64>, grid: &'a FactorGrid) -> Result<Self> {
        if values.nrows() != grid.n_samples() {
            return Err(Error::Dimension(format!(
                "response has {} rows but factor grid has {}",
                values.nrows(),
                grid.n_samples()
            )));
        }
        let rows = grid
            .spec()
            .cardinalities()
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let mut by_value = vec![Vec::new(); c];
                for (r, &v) in grid.assignments().column(k).iter().enumerate() {
                    by_value[v as usize].push(r);
                }
                by_value
            })
            .collect();
        Ok(Self { values, grid, rows })
    }
}

impl EncoderOracle for GridOracle<'_> {
    fn spec(&self) -> &FactorSpec {
        self.grid.spec()
    }

    fn n_latents(&self) -> usize {
        self.values.ncols()
    }

    fn draw_value(&self, factor: usize, rng: &mut ChaCha8Rng) -> usize {
        let r = rng.random_range(0..self.grid.n_samples());
        self.grid.assignments()[[r, factor]] as usize
    }

    fn draw(&self, n: usize, fixed: Option<(usize, usize)>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let picked: Vec<usize> = match fixed {
            None => (0..n).map(|_| rng.random_range(0..self.grid.n_samples())).collect(),
            Some((k, v)) => {
                let pool = self
                    .rows
                    .get(k)
                    .and_then(|r| r.get(v))
                    .filter(|p| !p.is_empty())
                    .ok_or_else(|| Error::metric("oracle", format!("no rows with factor {k} = {v}")))?;
                (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
            }
        };
        Ok(self.values.select(Axis(0), &picked))
    }
}

/// Score in [0, 1] plus human-readable notes about degenerate cases.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricOutcome {
    pub score: f64,
    pub diagnostics: Vec<String>,
}

impl MetricOutcome {
    pub fn new(score: f64) -> Self {
        Self { score, diagnostics: Vec::new() }
    }
}

/// A supervised metric evaluated on one model's response and the factor labels.
pub trait SupervisedMetric: Send + Sync {
    fn name(&self) -> &'static str;

    fn evaluate(&self, values: ArrayView2<'_, f64>, grid: &FactorGrid, seed: u64) -> Result<MetricOutcome>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub beta_vae: BetaVaeConfig,
    pub factor_vae: FactorVaeConfig,
    pub mig: MigConfig,
    pub dci: DciConfig,
}

struct BetaVae(BetaVaeConfig);
struct FactorVae(FactorVaeConfig);
struct Mig(MigConfig);
struct Dci(DciConfig);

impl SupervisedMetric for BetaVae {
    fn name(&self) -> &'static str {
        "betavae"
    }
    fn evaluate(&self, values: ArrayView2<'_, f64>, grid: &FactorGrid, seed: u64) -> Result<MetricOutcome> {
        beta_vae_metric(&GridOracle::new(values, grid)?, &self.0, seed)
    }
}

impl SupervisedMetric for FactorVae {
    fn name(&self) -> &'static str {
        "factorvae"
    }
    fn evaluate(&self, values: ArrayView2<'_, f64>, grid: &FactorGrid, seed: u64) -> Result<MetricOutcome> {
        factorvae_metric(&GridOracle::new(values, grid)?, &self.0, seed)
    }
}

impl SupervisedMetric for Mig {
    fn name(&self) -> &'static str {
        "mig"
    }
    fn evaluate(&self, values: ArrayView2<'_, f64>, grid: &FactorGrid, seed: u64) -> Result<MetricOutcome> {
        mutual_information_gap(values, grid.assignments().view(), &self.0, seed)
    }
}

impl SupervisedMetric for Dci {
    fn name(&self) -> &'static str {
        "dci"
    }
    fn evaluate(&self, values: ArrayView2<'_, f64>, grid: &FactorGrid, seed: u64) -> Result<MetricOutcome> {
        dci_disentanglement(values, grid.assignments().view(), &self.0, seed)
    }
}

type Factory = fn(&SupervisedConfig) -> Arc<dyn SupervisedMetric>;

/// Name -> supervised metric constructor.
pub struct MetricRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        let mut r = Self { factories: BTreeMap::new() };
        r.register("betavae", |c| Arc::new(BetaVae(c.beta_vae.clone())));
        r.register("factorvae", |c| Arc::new(FactorVae(c.factor_vae.clone())));
        r.register("mig", |c| Arc::new(Mig(c.mig.clone())));
        r.register("dci", |c| Arc::new(Dci(c.dci.clone())));
        r
    }
}

impl MetricRegistry {
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, config: &SupervisedConfig) -> Result<Arc<dyn SupervisedMetric>> {
        self.factories
            .get(name)
            .map(|f| f(config))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "supervised metric",
                name: name.into(),
                known: self.names().join(", "),
            })
    }
}

/// Scores every model of `set` with `metric`; every model sees the same seed.
/// Returns the table and `(model_id, diagnostic)` notes.
pub fn supervised_scores(
    set: &ModelSet,
    metric: &dyn SupervisedMetric,
    seed: u64,
) -> Result<(ScoreTable, Vec<(String, String)>)> {
    let grid = set
        .factor_grid()
        .ok_or_else(|| Error::metric(metric.name(), "factor labels required"))?;
    let results = set
        .records()
        .par_iter()
        .map(|rec| {
            let out = metric.evaluate(rec.response.values().view(), grid, seed)?;
            let (_, d) = informative_mask(rec.response.kl())?;
            let row = ScoreRow {
                model_id: rec.model_id.clone(),
                hyper_index: rec.hyper_index,
                seed_index: rec.seed_index,
                metric: metric.name().to_string(),
                score: out.score.clamp(0.0, 1.0),
                d,
            };
            let notes: Vec<(String, String)> =
                out.diagnostics.into_iter().map(|m| (rec.model_id.clone(), m)).collect();
            Ok((row, notes))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, notes): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((ScoreTable::new(rows)?, notes.into_iter().flatten().collect()))
}

/// Sample variance (n - 1 denominator) of every column.
pub(crate) fn column_sample_variances(z: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = z.nrows() as f64;
    z.columns()
        .into_iter()
        .map(|c| {
            let m = c.sum() / n;
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
        })
        .collect()
}
