use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::trees::{tree_importance, TreeEnsembleConfig};
use super::MetricOutcome;
use crate::error::{Error, Result};
use crate::similarity::{fit_multitask_lasso, LambdaRule, LassoConfig, LassoObjective};
use crate::stats::{select_rows, standardize_columns};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceMethod {
    /// `|coefficient|` of a cross-validated lasso per factor.
    #[default]
    Lasso,
    /// Impurity decrease of bagged regression trees per factor.
    TreeEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DciConfig {
    pub n_train: usize,
    pub importance: ImportanceMethod,
    pub lasso: LassoConfig,
    pub trees: TreeEnsembleConfig,
}

impl Default for DciConfig {
    fn default() -> Self {
        Self {
            n_train: 10000,
            importance: ImportanceMethod::Lasso,
            lasso: LassoConfig {
                objective: LassoObjective::PerTarget,
                rule: LambdaRule::OneStandardError,
                ..LassoConfig::default()
            },
            trees: TreeEnsembleConfig::default(),
        }
    }
}

/// `K x L` nonnegative importances; row `k` is factor `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    entries: Array2<f64>,
}

impl ImportanceMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::metric("dci", "importances must be finite and nonnegative"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// `1 - H_K(p)` for one latent's importance column over `K` factors.
/// Zero entries contribute nothing; an all-zero column returns 0.
pub fn disentanglement_of(column: &[f64]) -> f64 {
    let k = column.len();
    let total: f64 = column.iter().sum();
    if k < 2 || total <= 0.0 {
        return 0.0;
    }
    let h: f64 = column
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln() / (k as f64).ln()
        })
        .sum();
    1.0 - h
}

/// Importance-weighted mean of per-latent disentanglement.
pub fn dci_from_importance(m: &ImportanceMatrix) -> MetricOutcome {
    let e = m.entries();
    let total = e.sum();
    if total <= 0.0 {
        return MetricOutcome {
            score: 0.0,
            diagnostics: vec!["importance matrix is all zero; score set to 0".into()],
        };
    }
    let score = e
        .columns()
        .into_iter()
        .map(|c| {
            let w = c.sum() / total;
            w * disentanglement_of(&c.to_vec())
        })
        .sum::<f64>();
    MetricOutcome::new(score.clamp(0.0, 1.0))
}

/// Builds the importance matrix from `n_train` seeded rows and scores it.
/// Uses every row when fewer than `n_train` are available.
pub fn dci_disentanglement(
    latents: ArrayView2<'_, f64>,
    factors: ArrayView2<'_, i32>,
    config: &DciConfig,
    seed: u64,
) -> Result<MetricOutcome> {
    let k = factors.ncols();
    if latents.nrows() != factors.nrows() {
        return Err(Error::Dimension(format!(
            "{} latent rows but {} factor rows",
            latents.nrows(),
            factors.nrows()
        )));
    }
    if k < 2 {
        return Err(Error::metric("dci", "needs at least 2 factors"));
    }
    let rows = select_rows(latents.nrows(), config.n_train, seed);
    let x = standardize_columns(latents.select(Axis(0), &rows).view());
    let y = standardize_columns(factors.select(Axis(0), &rows).mapv(f64::from).view());
    let importance = match config.importance {
        ImportanceMethod::Lasso => {
            let cfg = LassoConfig { objective: LassoObjective::PerTarget, ..config.lasso.clone() };
            fit_multitask_lasso(x.view(), y.view(), &cfg, seed)?.weights.t().mapv(f64::abs)
        }
        ImportanceMethod::TreeEnsemble => {
            let mut m = Array2::zeros((k, x.ncols()));
            for (f, target) in y.columns().into_iter().enumerate() {
                let imp = Array1::from(tree_importance(x.view(), target, &config.trees, seed));
                let s = imp.sum();
                if s > 0.0 {
                    m.row_mut(f).assign(&(imp / s));
                }
            }
            m
        }
    };
    Ok(dci_from_importance(&ImportanceMatrix::new(importance)?))
}
