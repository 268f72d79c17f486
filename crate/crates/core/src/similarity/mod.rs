//! Cross-model latent similarity matrices.
//!
//! Each method is a [`SimilarityMethod`] registered by name in
//! [`SimilarityRegistry`]. A method first `prepare`s every model's response
//! on a shared set of rows (ranks for Spearman, standardised columns for
//! Lasso) and then compares prepared pairs.

mod lasso;
mod spearman;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LatentResponse;
use crate::stats::select_rows;

pub use lasso::{
    fit_multitask_lasso, lambda_max, GramStats, LambdaRule, LassoConfig, LassoFit, LassoMethod,
    LassoObjective, SolveOptions, SolveResult,
};
pub use spearman::SpearmanMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Spearman,
    Lasso,
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityKind::Spearman => "spearman",
            SimilarityKind::Lasso => "lasso",
        })
    }
}

/// `L_i x L_j` matrix of absolute similarities, clipped to [0, 1].
/// Rows index latents of model `i`, columns latents of model `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    entries: Array2<f64>,
    kind: SimilarityKind,
}

impl SimilarityMatrix {
    /// Takes absolute values and clips at 1. Non-finite entries are rejected.
    pub fn from_raw(raw: Array2<f64>, kind: SimilarityKind) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("non-finite similarity entry".into()));
        }
        Ok(Self {
            entries: raw.mapv(|v| v.abs().min(1.0)),
            kind,
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn transposed(&self) -> Self {
        Self {
            entries: self.entries.t().to_owned(),
            kind: self.kind,
        }
    }
}

/// Result of comparing two prepared responses.
#[derive(Debug, Clone)]
pub struct Comparison {
    /// One or more `(a, b)`-oriented matrices; directional methods return one
    /// per regression direction and UDR averages the resulting scores.
    pub matrices: Vec<SimilarityMatrix>,
    /// Fits that hit the iteration cap before the tolerance.
    pub unconverged_fits: usize,
}

/// A way of comparing the latent dimensions of two models.
pub trait SimilarityMethod: Send + Sync {
    fn kind(&self) -> SimilarityKind;

    /// Number of shared rows the method compares on.
    fn n_samples(&self) -> usize;

    /// Per-model transform of the response restricted to the shared rows.
    fn prepare(&self, values: ArrayView2<'_, f64>) -> Array2<f64>;

    /// Compares two prepared responses (`zi` rows vs `zj` columns).
    fn compare(&self, zi: &Array2<f64>, zj: &Array2<f64>, seed: u64) -> Result<Comparison>;

    /// Whether one comparison per unordered pair suffices.
    fn symmetric(&self) -> bool {
        true
    }
}

/// Parameters for every registered similarity method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub spearman_samples: usize,
    pub lasso: LassoConfig,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            spearman_samples: 1000,
            lasso: LassoConfig::default(),
        }
    }
}

type Factory = fn(&SimilarityConfig) -> Arc<dyn SimilarityMethod>;

/// Name -> similarity method constructor.
pub struct SimilarityRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Default for SimilarityRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("spearman", |c| Arc::new(SpearmanMethod::new(c.spearman_samples)));
        r.register("lasso", |c| Arc::new(LassoMethod::new(c.lasso.clone())));
        r
    }
}

impl SimilarityRegistry {
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, config: &SimilarityConfig) -> Result<Arc<dyn SimilarityMethod>> {
        self.factories
            .get(name)
            .map(|f| f(config))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "similarity method",
                name: name.into(),
                known: self.names().join(", "),
            })
    }
}

fn check_aligned(zi: &LatentResponse, zj: &LatentResponse) -> Result<()> {
    if zi.sample_ids() != zj.sample_ids() {
        return Err(Error::Misaligned(
            "responses are not over the same ordered samples".into(),
        ));
    }
    Ok(())
}

fn shared_rows(resp: &LatentResponse, rows: &[usize]) -> Array2<f64> {
    resp.values().select(ndarray::Axis(0), rows)
}

/// `|Spearman(zi_a, zj_b)|` over a seeded draw of `n_samples` shared rows.
pub fn spearman_similarity(
    zi: &LatentResponse,
    zj: &LatentResponse,
    n_samples: usize,
    seed: u64,
) -> Result<SimilarityMatrix> {
    check_aligned(zi, zj)?;
    let rows = select_rows(zi.n_samples(), n_samples, seed);
    let m = SpearmanMethod::new(n_samples);
    let a = m.prepare(shared_rows(zi, &rows).view());
    let b = m.prepare(shared_rows(zj, &rows).view());
    Ok(m.compare(&a, &b, seed)?.matrices.remove(0))
}

/// Multi-task Lasso similarity: regress the standardised columns of `zi`
/// on those of `zj`; entry `(a, b) = min(|W(b, a)|, 1)`.
pub fn lasso_similarity(
    zi: &LatentResponse,
    zj: &LatentResponse,
    config: &LassoConfig,
    seed: u64,
) -> Result<(SimilarityMatrix, LassoFit)> {
    check_aligned(zi, zj)?;
    let rows = select_rows(zi.n_samples(), config.n_samples, seed);
    let m = LassoMethod::new(config.clone());
    let a = m.prepare(shared_rows(zi, &rows).view());
    let b = m.prepare(shared_rows(zj, &rows).view());
    let fit = fit_multitask_lasso(b.view(), a.view(), config, seed)?;
    let r = SimilarityMatrix::from_raw(fit.weights.t().to_owned(), SimilarityKind::Lasso)?;
    Ok((r, fit))
}
