//! Cross-metric reports: rank correlations, per-hyper box summaries and the
//! partner-count stability study.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::ArrayView1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSet, ScoreTable};
use crate::similarity::SimilarityMethod;
use crate::stats::{derive_seed, mean, median, quantile, spearman, std_dev};
use crate::udr::{build_pairing_plan, PairScoreCache, PairingMode, PairingPlan, UdrConfig};

/// Spearman correlation between two `model_id -> score` maps over the same models.
pub fn rank_correlation(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<f64> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::Report("rank correlation needs identical model sets".into()));
    }
    if a.len() < 3 {
        return Err(Error::Report(format!("rank correlation needs at least 3 models, got {}", a.len())));
    }
    let x: Vec<f64> = a.values().copied().collect();
    let y: Vec<f64> = b.values().copied().collect();
    Ok(spearman(ArrayView1::from(&x), ArrayView1::from(&y)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub metric_a: String,
    pub metric_b: String,
    pub rho: f64,
    pub n_models: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationReport {
    /// Every pair of metrics in `table`, over the models both metrics scored.
    /// Pairs sharing fewer than 3 models are skipped.
    pub fn from_table(table: &ScoreTable) -> Result<Self> {
        let mut metrics = table.metrics();
        metrics.sort();
        if metrics.len() < 2 {
            return Err(Error::Report(format!(
                "correlations need at least 2 metrics, found {}",
                metrics.len()
            )));
        }
        let scores: BTreeMap<&str, BTreeMap<String, f64>> =
            metrics.iter().map(|m| (m.as_str(), table.metric_scores(m))).collect();
        let mut rows = Vec::new();
        for (i, ma) in metrics.iter().enumerate() {
            for mb in &metrics[i + 1..] {
                let (sa, sb) = (&scores[ma.as_str()], &scores[mb.as_str()]);
                let common: BTreeSet<&String> = sa.keys().filter(|k| sb.contains_key(*k)).collect();
                if common.len() < 3 {
                    continue;
                }
                let pick = |s: &BTreeMap<String, f64>| -> BTreeMap<String, f64> {
                    common.iter().map(|k| ((*k).clone(), s[*k])).collect()
                };
                rows.push(CorrelationRow {
                    metric_a: ma.clone(),
                    metric_b: mb.clone(),
                    rho: rank_correlation(&pick(sa), &pick(sb))?,
                    n_models: common.len(),
                });
            }
        }
        Ok(Self { rows })
    }

    /// Unweighted mean correlation of each UDR column against the supervised ones.
    pub fn udr_vs_supervised_means(&self) -> BTreeMap<String, f64> {
        let is_udr = |m: &str| m.starts_with("udr");
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            match (is_udr(&r.metric_a), is_udr(&r.metric_b)) {
                (true, false) => acc.entry(r.metric_a.clone()).or_default().push(r.rho),
                (false, true) => acc.entry(r.metric_b.clone()).or_default().push(r.rho),
                _ => {}
            }
        }
        acc.into_iter().map(|(k, v)| (k, mean(&v).expect("non-empty"))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub hyper_index: usize,
    pub metric: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepSummary {
    pub cells: Vec<SweepCell>,
    /// Hypers attaining the largest median, per metric (several on exact ties).
    pub argmax_median: BTreeMap<String, Vec<usize>>,
}

impl SweepSummary {
    /// Hypers in the argmax-median set of every metric.
    pub fn common_argmax(&self) -> Vec<usize> {
        let mut sets = self.argmax_median.values();
        let Some(first) = sets.next() else { return vec![] };
        let mut common: BTreeSet<usize> = first.iter().copied().collect();
        for s in sets {
            let s: BTreeSet<usize> = s.iter().copied().collect();
            common = common.intersection(&s).copied().collect();
        }
        common.into_iter().collect()
    }
}

/// Quartiles of every metric's scores per hyperparameter setting of `set`.
pub fn sweep_summary(table: &ScoreTable, set: &ModelSet) -> Result<SweepSummary> {
    let hypers: BTreeSet<usize> = set.records().iter().map(|r| r.hyper_index).collect();
    let mut metrics = table.metrics();
    metrics.sort();
    let mut out = SweepSummary::default();
    for metric in &metrics {
        let mut groups: BTreeMap<usize, Vec<f64>> = hypers.iter().map(|&h| (h, Vec::new())).collect();
        for r in table.rows().iter().filter(|r| &r.metric == metric) {
            groups
                .get_mut(&r.hyper_index)
                .ok_or_else(|| Error::Report(format!("score for unknown hyper {}", r.hyper_index)))?
                .push(r.score);
        }
        let mut best: Vec<usize> = Vec::new();
        let mut best_median = f64::NEG_INFINITY;
        for (&h, scores) in &groups {
            if scores.is_empty() {
                return Err(Error::Report(format!("metric `{metric}` has no scores for hyper {h}")));
            }
            let q = |p| quantile(scores, p).expect("non-empty");
            let med = median(scores).expect("non-empty");
            out.cells.push(SweepCell {
                hyper_index: h,
                metric: metric.clone(),
                n: scores.len(),
                min: q(0.0),
                q1: q(0.25),
                median: med,
                q3: q(0.75),
                max: q(1.0),
            });
            if med > best_median + 1e-12 {
                best_median = med;
                best = vec![h];
            } else if (med - best_median).abs() <= 1e-12 {
                best.push(h);
            }
        }
        out.argmax_median.insert(metric.clone(), best);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PSweepRow {
    pub p: usize,
    pub repeats: usize,
    pub mean_rho: f64,
    pub std_rho: f64,
}

/// For each `P`, draws `n_repeats` within-hyper pairing plans, recomputes
/// UDR and correlates it with `reference`. Pair scores are computed once and
/// shared across plans. The std is the population std over repeats.
pub fn p_sweep_study(
    set: &ModelSet,
    p_values: &[usize],
    n_repeats: usize,
    reference: &BTreeMap<String, f64>,
    method: &dyn SimilarityMethod,
    config: &UdrConfig,
    seed: u64,
) -> Result<Vec<PSweepRow>> {
    if n_repeats == 0 {
        return Err(Error::Report("p sweep needs at least one repeat".into()));
    }
    let min_peers = set.by_hyper().values().map(|g| g.len().saturating_sub(1)).min().unwrap_or(0);
    if let Some(&p) = p_values.iter().find(|&&p| p == 0 || p > min_peers) {
        return Err(Error::Pairing(format!("P = {p} must lie in 1..={min_peers}")));
    }
    let mut plans: Vec<(usize, PairingPlan)> = Vec::new();
    for &p in p_values {
        for r in 0..n_repeats {
            let plan_seed = derive_seed(seed, &[p as u64, r as u64]);
            plans.push((p, build_pairing_plan(set, PairingMode::WithinHyper, p, plan_seed, None)?));
        }
    }
    let pairs: BTreeSet<(usize, usize)> = plans.iter().flat_map(|(_, pl)| pl.unordered_pairs()).collect();
    let cache = PairScoreCache::compute(set, &pairs, method, config)?;
    let ids: Vec<&String> = set.records().iter().map(|r| &r.model_id).collect();

    let mut out = Vec::new();
    for &p in p_values {
        let mut rhos = Vec::new();
        for (_, plan) in plans.iter().filter(|(q, _)| *q == p) {
            let udr: BTreeMap<String, f64> = cache
                .aggregate(plan)?
                .into_iter()
                .map(|(i, s)| (ids[i].clone(), s))
                .collect();
            rhos.push(rank_correlation(&udr, reference)?);
        }
        out.push(PSweepRow {
            p,
            repeats: rhos.len(),
            mean_rho: mean(&rhos).expect("non-empty"),
            std_rho: std_dev(&rhos).expect("non-empty"),
        });
    }
    Ok(out)
}

fn write_rows<T: Serialize>(rows: &[T], header: &[&str], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_correlations(report: &CorrelationReport, path: impl AsRef<Path>) -> Result<()> {
    write_rows(&report.rows, &["metric_a", "metric_b", "rho", "n_models"], path.as_ref())
}

pub fn write_sweep_summary(summary: &SweepSummary, path: impl AsRef<Path>) -> Result<()> {
    write_rows(
        &summary.cells,
        &["hyper_index", "metric", "n", "min", "q1", "median", "q3", "max"],
        path.as_ref(),
    )
}

pub fn write_p_sweep(rows: &[PSweepRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(rows, &["p", "repeats", "mean_rho", "std_rho"], path.as_ref())
}
