//! Domain types shared by every stage of the pipeline.
//!
//! All types validate their invariants at construction and are immutable
//! afterwards, so they can be shared freely between worker threads.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::EncoderConfig;

/// One generative factor of variation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub cardinality: usize,
    #[serde(default)]
    pub circular: bool,
}

impl Factor {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            cardinality,
            circular: false,
        }
    }

    pub fn circular(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            cardinality,
            circular: true,
        }
    }
}

/// The ground-truth factor space: an ordered list of independent factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Factor>", into = "Vec<Factor>")]
pub struct FactorSpec {
    factors: Vec<Factor>,
}

impl FactorSpec {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::FactorSpec("at least one factor is required".into()));
        }
        let mut seen = HashSet::new();
        for f in &factors {
            if f.cardinality < 2 {
                return Err(Error::FactorSpec(format!(
                    "factor `{}` has cardinality {} (must be >= 2)",
                    f.name, f.cardinality
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::FactorSpec(format!(
                    "duplicate factor name `{}`",
                    f.name
                )));
            }
        }
        Ok(Self { factors })
    }

    /// Convenience constructor from bare cardinalities, naming factors `f0..fK`.
    pub fn from_cardinalities(cards: &[usize]) -> Result<Self> {
        Self::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &c)| Factor::new(format!("f{i}"), c))
                .collect(),
        )
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.cardinality).collect()
    }

    /// Size of the full Cartesian product, `None` on overflow.
    pub fn product(&self) -> Option<usize> {
        self.factors
            .iter()
            .try_fold(1usize, |acc, f| acc.checked_mul(f.cardinality))
    }
}

impl TryFrom<Vec<Factor>> for FactorSpec {
    type Error = Error;

    fn try_from(factors: Vec<Factor>) -> Result<Self> {
        Self::new(factors)
    }
}

impl From<FactorSpec> for Vec<Factor> {
    fn from(spec: FactorSpec) -> Self {
        spec.factors
    }
}

/// Factor assignments for an ordered sample set (row `n` = factor indices of sample `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrid {
    spec: FactorSpec,
    assignments: Array2<i32>,
}

impl FactorGrid {
    pub fn new(spec: FactorSpec, assignments: Array2<i32>) -> Result<Self> {
        if assignments.ncols() != spec.n_factors() {
            return Err(Error::FactorGrid(format!(
                "assignments have {} columns but the spec has {} factors",
                assignments.ncols(),
                spec.n_factors()
            )));
        }
        for (k, factor) in spec.factors().iter().enumerate() {
            let card = factor.cardinality as i32;
            if let Some(bad) = assignments.column(k).iter().find(|&&v| v < 0 || v >= card) {
                return Err(Error::FactorGrid(format!(
                    "factor `{}` has value {bad} outside [0, {card})",
                    factor.name
                )));
            }
        }
        Ok(Self { spec, assignments })
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    pub fn assignments(&self) -> &Array2<i32> {
        &self.assignments
    }

    pub fn n_samples(&self) -> usize {
        self.assignments.nrows()
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, i32> {
        self.assignments.row(n)
    }
}

/// Mean posterior responses of one model over an ordered sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentResponse {
    values: Array2<f64>,
    kl: Vec<f64>,
    sample_ids: Vec<u64>,
}

impl LatentResponse {
    /// Builds a response with default row-index sample ids.
    pub fn new(values: Array2<f64>, kl: Vec<f64>) -> Result<Self> {
        let ids = (0..values.nrows() as u64).collect();
        Self::with_sample_ids(values, kl, ids)
    }

    pub fn with_sample_ids(values: Array2<f64>, kl: Vec<f64>, sample_ids: Vec<u64>) -> Result<Self> {
        let (n, l) = values.dim();
        if n < 2 {
            return Err(Error::LatentResponse(format!("need at least 2 samples, got {n}")));
        }
        if l < 1 {
            return Err(Error::LatentResponse("need at least 1 latent".into()));
        }
        if kl.len() != l {
            return Err(Error::Dimension(format!(
                "kl vector has length {} but the response has {l} latents",
                kl.len()
            )));
        }
        if sample_ids.len() != n {
            return Err(Error::Dimension(format!(
                "{} sample ids for {n} rows",
                sample_ids.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::LatentResponse("non-finite latent value".into()));
        }
        if let Some(bad) = kl.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::LatentResponse(format!(
                "kl entries must be finite and >= 0, found {bad}"
            )));
        }
        if sample_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::LatentResponse(
                "sample ids must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            values,
            kl,
            sample_ids,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kl(&self) -> &[f64] {
        &self.kl
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_latents(&self) -> usize {
        self.values.ncols()
    }
}

/// Ground-truth provenance attached to simulated records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub encoder: EncoderConfig,
    /// Known disentanglement quality of the record's hyperparameter setting (higher is better).
    pub quality: f64,
}

/// A trained (or simulated) model tagged with its hyperparameter and seed indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub model_id: String,
    pub hyper_index: usize,
    pub seed_index: usize,
    pub response: LatentResponse,
    pub provenance: Option<Provenance>,
}

impl ModelRecord {
    pub fn new(
        model_id: impl Into<String>,
        hyper_index: usize,
        seed_index: usize,
        response: LatentResponse,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            hyper_index,
            seed_index,
            response,
            provenance: None,
        }
    }
}

/// The population of models UDR operates over.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    records: Vec<ModelRecord>,
    factor_grid: Option<FactorGrid>,
}

impl ModelSet {
    pub fn new(records: Vec<ModelRecord>, factor_grid: Option<FactorGrid>) -> Result<Self> {
        if let Some(first) = records.first() {
            let (n, l) = first.response.values().dim();
            let ids = first.response.sample_ids();
            for r in &records[1..] {
                let (rn, rl) = r.response.values().dim();
                if rn != n || rl != l {
                    return Err(Error::Dimension(format!(
                        "record `{}` has shape {rn}x{rl}, expected {n}x{l}",
                        r.model_id
                    )));
                }
                if r.response.sample_ids() != ids {
                    return Err(Error::Misaligned(format!(
                        "record `{}` has a different sample ordering",
                        r.model_id
                    )));
                }
            }
            if let Some(grid) = &factor_grid {
                if grid.n_samples() != n {
                    return Err(Error::Dimension(format!(
                        "factor grid has {} rows but responses have {n}",
                        grid.n_samples()
                    )));
                }
            }
        }
        let mut keys = HashSet::new();
        let mut ids = HashSet::new();
        for r in &records {
            if !keys.insert((r.hyper_index, r.seed_index)) {
                return Err(Error::ModelSet(format!(
                    "duplicate (hyper_index, seed_index) = ({}, {})",
                    r.hyper_index, r.seed_index
                )));
            }
            if !ids.insert(r.model_id.as_str()) {
                return Err(Error::ModelSet(format!("duplicate model_id `{}`", r.model_id)));
            }
        }
        Ok(Self {
            records,
            factor_grid,
        })
    }

    pub fn records(&self) -> &[ModelRecord] {
        &self.records
    }

    pub fn factor_grid(&self) -> Option<&FactorGrid> {
        self.factor_grid.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_samples(&self) -> Option<usize> {
        self.records.first().map(|r| r.response.n_samples())
    }

    pub fn n_latents(&self) -> Option<usize> {
        self.records.first().map(|r| r.response.n_latents())
    }

    /// Record indices grouped by hyperparameter index, each group sorted by seed.
    pub fn by_hyper(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            groups.entry(r.hyper_index).or_default().push(i);
        }
        for idx in groups.values_mut() {
            idx.sort_by_key(|&i| self.records[i].seed_index);
        }
        groups
    }

    pub fn index_of(&self, model_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.model_id == model_id)
    }
}

/// One metric value for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model_id: String,
    pub hyper_index: usize,
    pub seed_index: usize,
    pub metric: String,
    pub score: f64,
    /// Number of informative latents of the model.
    pub d: usize,
}

/// Per-model metric scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn new(rows: Vec<ScoreRow>) -> Result<Self> {
        for r in &rows {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::Report(format!(
                    "score {} for `{}` / {} outside [0, 1]",
                    r.score, r.model_id, r.metric
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<ScoreRow> {
        self.rows
    }

    /// Metric names in order of first appearance.
    pub fn metrics(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.rows {
            if seen.insert(r.metric.as_str()) {
                out.push(r.metric.clone());
            }
        }
        out
    }

    /// `model_id -> score` for one metric.
    pub fn metric_scores(&self, metric: &str) -> BTreeMap<String, f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.model_id.clone(), r.score))
            .collect()
    }

    /// Replaces every row of the metrics present in `other` and appends `other`'s rows.
    pub fn merge(&mut self, other: ScoreTable) {
        let replaced: HashSet<String> = other.rows.iter().map(|r| r.metric.clone()).collect();
        self.rows.retain(|r| !replaced.contains(&r.metric));
        self.rows.extend(other.rows);
    }
}
