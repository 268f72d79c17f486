use udr_core::harness::{sweep_summary, CorrelationReport};
use udr_core::metrics::ImportanceMethod;
use udr_core::registry::{MetricCatalog, ScoreParams};
use udr_core::simulator::{make_factor_grid, preset, simulate_population, GridMode, PopulationOptions, QualityLevel};
use udr_core::{ModelSet, ScoreTable};

fn population() -> ModelSet {
    let spec = preset("dsprites-mini").unwrap();
    let grid = make_factor_grid(&spec, GridMode::UniformSample { n: 1500, seed: 1 }).unwrap();
    simulate_population(&grid, &QualityLevel::sweep(4, 8, 5), 5, &PopulationOptions::new(8), 7).unwrap()
}

fn score_all(set: &ModelSet, params: &ScoreParams) -> ScoreTable {
    let catalog = MetricCatalog::default();
    let mut table = ScoreTable::default();
    for name in catalog.names() {
        let run = catalog.get(name).unwrap().run(set, params).unwrap();
        table.merge(run.table);
    }
    table
}

#[test]
fn every_metric_scores_every_model() {
    let set = population();
    let params = ScoreParams { method: "spearman".into(), p: 4, seed: 3, ..Default::default() };
    let table = score_all(&set, &params);
    let mut metrics = table.metrics();
    metrics.sort();
    assert_eq!(metrics, ["betavae", "dci", "factorvae", "mig", "udr-a2a-spearman", "udr-spearman"]);
    for m in &metrics {
        assert_eq!(table.metric_scores(m).len(), set.len(), "{m}");
    }
    assert!(table.rows().iter().all(|r| (0.0..=1.0).contains(&r.score)));

    let report = CorrelationReport::from_table(&table).unwrap();
    assert_eq!(report.rows.len(), 15);
    let udr_mig = report
        .rows
        .iter()
        .find(|r| r.metric_a == "mig" && r.metric_b == "udr-spearman")
        .unwrap();
    assert!(udr_mig.rho > 0.5, "{}", udr_mig.rho);

    let sweep = sweep_summary(&table, &set).unwrap();
    assert_eq!(sweep.cells.len(), 4 * 6);
    assert_eq!(sweep.argmax_median["udr-spearman"], vec![3]);
}

#[test]
fn scoring_is_deterministic() {
    let set = population();
    let params = ScoreParams { p: 3, seed: 11, ..Default::default() };
    let a = score_all(&set, &params);
    let b = score_all(&set, &params);
    assert_eq!(a, b);
}

#[test]
fn all_to_all_cap_leaves_unsampled_models_unscored() {
    let set = population();
    let params = ScoreParams { method: "spearman".into(), p: 5, a2a_seed_cap: Some(2), ..Default::default() };
    let run = MetricCatalog::default().get("udr-a2a").unwrap().run(&set, &params).unwrap();
    assert_eq!(run.table.rows().len(), 4 * 2);
    assert!(run.notes.is_empty());
}

#[test]
fn tree_importances_rank_like_lasso() {
    let set = population();
    let mut params = ScoreParams::default();
    let catalog = MetricCatalog::default();
    let lasso = catalog.get("dci").unwrap().run(&set, &params).unwrap().table;
    params.supervised.dci.importance = ImportanceMethod::TreeEnsemble;
    let trees = catalog.get("dci").unwrap().run(&set, &params).unwrap().table;
    let mut rows = lasso.into_rows();
    rows.extend(trees.into_rows().into_iter().map(|mut r| {
        r.metric = "dci-trees".into();
        r
    }));
    let report = CorrelationReport::from_table(&ScoreTable::new(rows).unwrap()).unwrap();
    assert!(report.rows[0].rho > 0.7, "{}", report.rows[0].rho);
}
