//! Unsupervised disentanglement ranking.
//!
//! For each model, a set of partner models is sampled (within its
//! hyperparameter setting or across all settings), each pair is compared
//! through a latent similarity matrix, the matrix is reduced to a pairwise
//! score, and the model's score is the median over its partners.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LatentResponse, ModelSet, ScoreRow, ScoreTable};
use crate::similarity::{SimilarityMatrix, SimilarityMethod};
use crate::stats::{derive_seed, median, select_rows};

/// A latent is informative when its KL from the prior strictly exceeds this.
pub const KL_THRESHOLD: f64 = 0.01;

/// `mask[a] = kl[a] > 0.01` and the number of informative latents.
pub fn informative_mask(kl: &[f64]) -> Result<(Vec<bool>, usize)> {
    if let Some(bad) = kl.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::LatentResponse(format!("negative or NaN KL value {bad}")));
    }
    let mask: Vec<bool> = kl.iter().map(|&k| k > KL_THRESHOLD).collect();
    let d = mask.iter().filter(|&&m| m).count();
    Ok((mask, d))
}

/// Which latents the row/column maxima and sums range over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskScope {
    /// Maxima and sums over informative latents only: the matrix is first
    /// restricted to informative rows and columns.
    #[default]
    Informative,
    /// Maxima and sums over all latents; the indicator only gates which
    /// rows and columns contribute a term.
    AllLatents,
}

/// Score of one pair of models plus their informative counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairValue {
    pub score: f64,
    pub d_i: usize,
    pub d_j: usize,
}

/// Pairwise score with the default [`MaskScope::Informative`].
pub fn udr_pair_score(r: &SimilarityMatrix, kl_i: &[f64], kl_j: &[f64]) -> Result<PairValue> {
    udr_pair_score_with(r, kl_i, kl_j, MaskScope::Informative)
}

/// Each informative column `b` contributes `max_a R(a,b)^2 / sum_a R(a,b)`,
/// each informative row `a` contributes `max_b R(a,b)^2 / sum_b R(a,b)`, and
/// the total is divided by `d_i + d_j`. Zero-sum rows or columns contribute 0;
/// `d_i + d_j = 0` scores 0.
pub fn udr_pair_score_with(
    r: &SimilarityMatrix,
    kl_i: &[f64],
    kl_j: &[f64],
    scope: MaskScope,
) -> Result<PairValue> {
    let e = r.entries();
    if e.nrows() != kl_i.len() || e.ncols() != kl_j.len() {
        return Err(Error::Dimension(format!(
            "similarity matrix is {}x{} but kl vectors have lengths {} and {}",
            e.nrows(),
            e.ncols(),
            kl_i.len(),
            kl_j.len()
        )));
    }
    let (mask_i, d_i) = informative_mask(kl_i)?;
    let (mask_j, d_j) = informative_mask(kl_j)?;
    if d_i + d_j == 0 {
        return Ok(PairValue { score: 0.0, d_i, d_j });
    }
    let in_scope = |mask: &[bool], idx: usize| scope == MaskScope::AllLatents || mask[idx];

    let term = |values: &mut dyn Iterator<Item = f64>| {
        let (mut max, mut sum) = (0.0f64, 0.0f64);
        for v in values {
            max = max.max(v);
            sum += v;
        }
        if sum > 0.0 {
            max * max / sum
        } else {
            0.0
        }
    };

    let mut total = 0.0;
    for b in (0..e.ncols()).filter(|&b| mask_j[b]) {
        let mut col = (0..e.nrows()).filter(|&a| in_scope(&mask_i, a)).map(|a| e[[a, b]]);
        total += term(&mut col);
    }
    for a in (0..e.nrows()).filter(|&a| mask_i[a]) {
        let mut row = (0..e.ncols()).filter(|&b| in_scope(&mask_j, b)).map(|b| e[[a, b]]);
        total += term(&mut row);
    }
    let score = (total / (d_i + d_j) as f64).clamp(0.0, 1.0);
    Ok(PairValue { score, d_i, d_j })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    WithinHyper,
    AllToAll,
}

/// Partners sampled for every model.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingPlan {
    pub mode: PairingMode,
    pub p: usize,
    pub seed: u64,
    /// `partners[i]`: record indices paired with record `i` (sorted, no self).
    /// Empty for models excluded from the plan.
    pub partners: Vec<Vec<usize>>,
    /// Set when some model had fewer than `p` available partners.
    pub capped: bool,
}

impl PairingPlan {
    /// `model_id -> partner model_ids`.
    pub fn by_id(&self, set: &ModelSet) -> BTreeMap<String, Vec<String>> {
        let rec = set.records();
        self.partners
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty())
            .map(|(i, p)| {
                (
                    rec[i].model_id.clone(),
                    p.iter().map(|&j| rec[j].model_id.clone()).collect(),
                )
            })
            .collect()
    }

    /// Distinct unordered pairs `(i, j)` with `i < j`.
    pub fn unordered_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.partners
            .iter()
            .enumerate()
            .flat_map(|(i, ps)| ps.iter().map(move |&j| (i.min(j), i.max(j))))
            .collect()
    }
}

/// Samples `min(p, available)` partners per model without replacement.
///
/// In all-to-all mode `a2a_seed_cap` restricts the population to that many
/// randomly chosen seeds per hyperparameter setting; other models get no
/// partners and no score.
pub fn build_pairing_plan(
    set: &ModelSet,
    mode: PairingMode,
    p: usize,
    seed: u64,
    a2a_seed_cap: Option<usize>,
) -> Result<PairingPlan> {
    if p == 0 {
        return Err(Error::Pairing("P must be at least 1".into()));
    }
    let m = set.len();
    let groups = set.by_hyper();
    let mut included = vec![true; m];
    match mode {
        PairingMode::WithinHyper => {
            if let Some((h, g)) = groups.iter().find(|(_, g)| g.len() < 2) {
                return Err(Error::Pairing(format!(
                    "hyper {h} has {} seed(s); within-hyper pairing needs at least 2",
                    g.len()
                )));
            }
        }
        PairingMode::AllToAll => {
            if let Some(cap) = a2a_seed_cap {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xa2a]));
                included.fill(false);
                for g in groups.values() {
                    let keep = sample(&mut rng, g.len(), cap.min(g.len()));
                    keep.iter().for_each(|k| included[g[k]] = true);
                }
            }
            if included.iter().filter(|&&x| x).count() < 2 {
                return Err(Error::Pairing("all-to-all pairing needs at least 2 models".into()));
            }
        }
    }

    let hyper_of: Vec<usize> = set.records().iter().map(|r| r.hyper_index).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut capped = false;
    let mut partners = vec![Vec::new(); m];
    for i in (0..m).filter(|&i| included[i]) {
        let pool: Vec<usize> = match mode {
            PairingMode::WithinHyper => groups[&hyper_of[i]].iter().copied().filter(|&j| j != i).collect(),
            PairingMode::AllToAll => (0..m).filter(|&j| j != i && included[j]).collect(),
        };
        if p > pool.len() {
            capped = true;
        }
        let take = p.min(pool.len());
        let mut chosen: Vec<usize> = sample(&mut rng, pool.len(), take)
            .iter()
            .map(|k| pool[k])
            .collect();
        chosen.sort_unstable();
        partners[i] = chosen;
    }
    Ok(PairingPlan { mode, p, seed, partners, capped })
}

/// Settings shared by every UDR run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UdrConfig {
    pub seed: u64,
    pub scope: MaskScope,
}

/// Averages the pair score over every matrix the method returns; also
/// returns the number of unconverged fits.
fn score_prepared(
    zi: &Array2<f64>,
    zj: &Array2<f64>,
    kl_i: &[f64],
    kl_j: &[f64],
    method: &dyn SimilarityMethod,
    config: &UdrConfig,
) -> Result<(PairValue, usize)> {
    let cmp = method.compare(zi, zj, config.seed)?;
    let mut total = 0.0;
    let mut value = None;
    for r in &cmp.matrices {
        let v = udr_pair_score_with(r, kl_i, kl_j, config.scope)?;
        total += v.score;
        value = Some(v);
    }
    let mut v = value.ok_or_else(|| Error::metric("udr", "similarity method returned no matrix"))?;
    v.score = total / cmp.matrices.len() as f64;
    Ok((v, cmp.unconverged_fits))
}

/// Score of a single pair of responses over their shared samples, using the
/// same row draw as [`PairScoreCache`]. The responses may differ in `L`.
pub fn pair_udr(
    a: &LatentResponse,
    b: &LatentResponse,
    method: &dyn SimilarityMethod,
    config: &UdrConfig,
) -> Result<PairValue> {
    if a.sample_ids() != b.sample_ids() {
        return Err(Error::Misaligned("responses are not over the same ordered samples".into()));
    }
    let rows = select_rows(a.n_samples(), method.n_samples(), derive_seed(config.seed, &[0x5a]));
    let za = method.prepare(a.values().select(Axis(0), &rows).view());
    let zb = method.prepare(b.values().select(Axis(0), &rows).view());
    Ok(score_prepared(&za, &zb, a.kl(), b.kl(), method, config)?.0)
}

/// Scored pair with model identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub model_i: String,
    pub model_j: String,
    pub score: f64,
    pub d_i: usize,
    pub d_j: usize,
}

/// Pairwise scores for a fixed collection of unordered pairs.
#[derive(Debug, Clone, Default)]
pub struct PairScoreCache {
    scores: BTreeMap<(usize, usize), PairValue>,
    pub unconverged_fits: usize,
}

impl PairScoreCache {
    /// Computes every pair in `pairs` (each `(i, j)` with `i < j`) in parallel.
    pub fn compute(
        set: &ModelSet,
        pairs: &BTreeSet<(usize, usize)>,
        method: &dyn SimilarityMethod,
        config: &UdrConfig,
    ) -> Result<Self> {
        let Some(n) = set.n_samples() else {
            return Ok(Self::default());
        };
        let rows = select_rows(n, method.n_samples(), derive_seed(config.seed, &[0x5a]));
        let used: BTreeSet<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
        let prepared: BTreeMap<usize, Array2<f64>> = used
            .par_iter()
            .map(|&i| {
                let v = set.records()[i].response.values().select(Axis(0), &rows);
                (i, method.prepare(v.view()))
            })
            .collect();
        let pair_list: Vec<(usize, usize)> = pairs.iter().copied().collect();
        let results = pair_list
            .par_iter()
            .map(|&(i, j)| {
                let (kl_i, kl_j) = (set.records()[i].response.kl(), set.records()[j].response.kl());
                let (v, unconv) = score_prepared(&prepared[&i], &prepared[&j], kl_i, kl_j, method, config)?;
                Ok(((i, j), v, unconv))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cache = Self::default();
        for (key, v, unconv) in results {
            cache.scores.insert(key, v);
            cache.unconverged_fits += unconv;
        }
        Ok(cache)
    }

    /// Score of the pair `(i, j)` in either order.
    pub fn get(&self, i: usize, j: usize) -> Option<PairValue> {
        self.scores.get(&(i.min(j), i.max(j))).map(|v| {
            if i <= j {
                *v
            } else {
                PairValue { score: v.score, d_i: v.d_j, d_j: v.d_i }
            }
        })
    }

    /// Median partner score per planned model: `(record index, median)`.
    pub fn aggregate(&self, plan: &PairingPlan) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for (i, partners) in plan.partners.iter().enumerate() {
            if partners.is_empty() {
                continue;
            }
            let scores = partners
                .iter()
                .map(|&j| {
                    self.get(i, j)
                        .map(|v| v.score)
                        .ok_or_else(|| Error::Pairing(format!("pair ({i}, {j}) not computed")))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push((i, median(&scores).expect("non-empty")));
        }
        Ok(out)
    }
}

/// Full result of a UDR run.
#[derive(Debug, Clone)]
pub struct UdrOutcome {
    pub table: ScoreTable,
    pub pairs: Vec<PairScore>,
    pub capped: bool,
    pub unconverged_fits: usize,
}

/// Runs UDR for every model in `plan`, labelling rows with `metric_name`.
pub fn udr_scores(
    set: &ModelSet,
    plan: &PairingPlan,
    method: &dyn SimilarityMethod,
    config: &UdrConfig,
    metric_name: &str,
) -> Result<UdrOutcome> {
    if plan.partners.len() != set.len() {
        return Err(Error::Pairing("plan does not match the model set".into()));
    }
    let pairs = plan.unordered_pairs();
    let cache = PairScoreCache::compute(set, &pairs, method, config)?;
    let medians = cache.aggregate(plan)?;
    let rec = set.records();
    let rows = medians
        .into_iter()
        .map(|(i, score)| {
            let (_, d) = informative_mask(rec[i].response.kl())?;
            Ok(ScoreRow {
                model_id: rec[i].model_id.clone(),
                hyper_index: rec[i].hyper_index,
                seed_index: rec[i].seed_index,
                metric: metric_name.to_string(),
                score,
                d,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pair_scores = pairs
        .iter()
        .map(|&(i, j)| {
            let v = cache.get(i, j).expect("computed");
            PairScore {
                model_i: rec[i].model_id.clone(),
                model_j: rec[j].model_id.clone(),
                score: v.score,
                d_i: v.d_i,
                d_j: v.d_j,
            }
        })
        .collect();
    Ok(UdrOutcome {
        table: ScoreTable::new(rows)?,
        pairs: pair_scores,
        capped: plan.capped,
        unconverged_fits: cache.unconverged_fits,
    })
}
