//! Every scoring metric behind one name-keyed trait, so callers can pick
//! `udr`, `udr-a2a`, `betavae`, `factorvae`, `mig` or `dci` at run time.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{supervised_scores, MetricRegistry, SupervisedConfig};
use crate::model::{ModelSet, ScoreTable};
use crate::similarity::{SimilarityConfig, SimilarityRegistry};
use crate::udr::{build_pairing_plan, udr_scores, MaskScope, PairingMode, UdrConfig};

/// Parameters shared by all metrics; each metric reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreParams {
    /// Similarity method name for UDR.
    pub method: String,
    /// Partners per model.
    pub p: usize,
    pub seed: u64,
    /// All-to-all only: seeds kept per hyper.
    pub a2a_seed_cap: Option<usize>,
    pub scope: MaskScope,
    pub similarity: SimilarityConfig,
    pub supervised: SupervisedConfig,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            method: "lasso".into(),
            p: 50,
            seed: 0,
            a2a_seed_cap: None,
            scope: MaskScope::Informative,
            similarity: SimilarityConfig::default(),
            supervised: SupervisedConfig::default(),
        }
    }
}

/// Scores plus warnings worth surfacing to the user.
#[derive(Debug, Clone)]
pub struct MetricRun {
    pub table: ScoreTable,
    pub notes: Vec<String>,
}

pub trait ScoringMetric: Send + Sync {
    /// Name used to select the metric.
    fn name(&self) -> &'static str;

    /// Value written to the `metric` column of the score table.
    fn column(&self, params: &ScoreParams) -> String;

    fn needs_factor_labels(&self) -> bool;

    fn run(&self, set: &ModelSet, params: &ScoreParams) -> Result<MetricRun>;
}

struct Udr {
    mode: PairingMode,
}

impl ScoringMetric for Udr {
    fn name(&self) -> &'static str {
        match self.mode {
            PairingMode::WithinHyper => "udr",
            PairingMode::AllToAll => "udr-a2a",
        }
    }

    fn column(&self, params: &ScoreParams) -> String {
        format!("{}-{}", self.name(), params.method)
    }

    fn needs_factor_labels(&self) -> bool {
        false
    }

    fn run(&self, set: &ModelSet, params: &ScoreParams) -> Result<MetricRun> {
        let method = SimilarityRegistry::default().create(&params.method, &params.similarity)?;
        let cap = match self.mode {
            PairingMode::WithinHyper => None,
            PairingMode::AllToAll => params.a2a_seed_cap,
        };
        let plan = build_pairing_plan(set, self.mode, params.p, params.seed, cap)?;
        let config = UdrConfig { seed: params.seed, scope: params.scope };
        let out = udr_scores(set, &plan, method.as_ref(), &config, &self.column(params))?;
        let mut notes = Vec::new();
        if out.capped {
            let got = plan.partners.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);
            notes.push(format!("P = {} exceeds the available partners; capped at {got}", params.p));
        }
        if out.unconverged_fits > 0 {
            notes.push(format!("{} lasso fits hit the iteration limit", out.unconverged_fits));
        }
        Ok(MetricRun { table: out.table, notes })
    }
}

struct Supervised {
    name: &'static str,
}

impl ScoringMetric for Supervised {
    fn name(&self) -> &'static str {
        self.name
    }

    fn column(&self, _params: &ScoreParams) -> String {
        self.name.to_string()
    }

    fn needs_factor_labels(&self) -> bool {
        true
    }

    fn run(&self, set: &ModelSet, params: &ScoreParams) -> Result<MetricRun> {
        let metric = MetricRegistry::default().create(self.name, &params.supervised)?;
        let (table, diag) = supervised_scores(set, metric.as_ref(), params.seed)?;
        let notes = diag.into_iter().map(|(id, m)| format!("{id}: {m}")).collect();
        Ok(MetricRun { table, notes })
    }
}

/// Name -> scoring metric.
pub struct MetricCatalog {
    metrics: BTreeMap<&'static str, Arc<dyn ScoringMetric>>,
}

impl Default for MetricCatalog {
    fn default() -> Self {
        let mut c = Self { metrics: BTreeMap::new() };
        c.register(Arc::new(Udr { mode: PairingMode::WithinHyper }));
        c.register(Arc::new(Udr { mode: PairingMode::AllToAll }));
        for name in MetricRegistry::default().names() {
            c.register(Arc::new(Supervised { name }));
        }
        c
    }
}

impl MetricCatalog {
    pub fn register(&mut self, metric: Arc<dyn ScoringMetric>) {
        self.metrics.insert(metric.name(), metric);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.metrics.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ScoringMetric>> {
        self.metrics.get(name).cloned().ok_or_else(|| Error::UnknownStrategy {
            kind: "metric",
            name: name.into(),
            known: self.names().join(", "),
        })
    }
}
