use ndarray::{Array2, ArrayView2};

use super::{Comparison, SimilarityKind, SimilarityMatrix, SimilarityMethod};
use crate::error::Result;
use crate::stats::normalized_rank_columns;

/// Absolute Spearman correlation between every pair of latent columns.
#[derive(Debug, Clone)]
pub struct SpearmanMethod {
    n_samples: usize,
}

impl SpearmanMethod {
    pub fn new(n_samples: usize) -> Self {
        Self { n_samples }
    }
}

impl SimilarityMethod for SpearmanMethod {
    fn kind(&self) -> SimilarityKind {
        SimilarityKind::Spearman
    }

    fn n_samples(&self) -> usize {
        self.n_samples
    }

    fn prepare(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        normalized_rank_columns(values)
    }

    fn compare(&self, zi: &Array2<f64>, zj: &Array2<f64>, _seed: u64) -> Result<Comparison> {
        let raw = zi.t().dot(zj);
        Ok(Comparison {
            matrices: vec![SimilarityMatrix::from_raw(raw, SimilarityKind::Spearman)?],
            unconverged_fits: 0,
        })
    }
}
