use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use udr_core::harness::{p_sweep_study, sweep_summary};
use udr_core::io::{load_model_set, save_model_set};
use udr_core::metrics::{
    beta_vae_metric, dci_disentanglement, factorvae_metric, mutual_information_gap, BetaVaeConfig, Binning,
    DciConfig, FactorVaeConfig, GridOracle, MigConfig,
};
use udr_core::similarity::{
    LassoConfig, LassoMethod, SimilarityKind, SimilarityMatrix, SimilarityMethod, SpearmanMethod,
};
use udr_core::simulator::{
    make_factor_grid, population_member, simulate_encoder, simulate_population, EncoderConfig, GridMode,
    PopulationOptions, QualityLevel,
};
use udr_core::stats::spearman;
use udr_core::udr::{
    build_pairing_plan, informative_mask, pair_udr, udr_pair_score, udr_scores, MaskScope, PairingMode, UdrConfig,
};
use udr_core::{FactorGrid, FactorSpec, LatentResponse, ModelRecord, ModelSet, ScoreRow, ScoreTable};

fn small_grid() -> FactorGrid {
    let spec = FactorSpec::from_cardinalities(&[4, 5, 6]).unwrap();
    make_factor_grid(&spec, GridMode::Full).unwrap()
}

fn level(angle: f64, noise: f64, dead: usize) -> QualityLevel {
    QualityLevel { mixing_angle: angle, noise_sd: noise, dead_latent_count: dead }
}

fn member(grid: &FactorGrid, q: &QualityLevel, l: usize, seed: u64) -> (EncoderConfig, LatentResponse) {
    let cfg = population_member(grid.spec(), q, &PopulationOptions::new(l), seed).unwrap();
    let resp = simulate_encoder(grid, &cfg).unwrap();
    (cfg, resp)
}

/// Column permutation `perm` and sign flips `flips` applied to a response.
fn transform(z: &LatentResponse, perm: &[usize], flips: &[bool]) -> LatentResponse {
    let mut values = z.values().select(Axis(1), perm);
    for (mut c, &f) in values.columns_mut().into_iter().zip(flips) {
        if f {
            c.mapv_inplace(|v| -v);
        }
    }
    let kl = perm.iter().map(|&p| z.kl()[p]).collect();
    LatentResponse::new(values, kl).unwrap()
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn sim(m: Array2<f64>) -> SimilarityMatrix {
    SimilarityMatrix::from_raw(m, SimilarityKind::Spearman).unwrap()
}

fn matrix_and_kl(max: usize) -> impl Strategy<Value = (Array2<f64>, Vec<f64>, Vec<f64>)> {
    (1..=max, 1..=max).prop_flat_map(|(la, lb)| {
        (
            proptest::collection::vec(0.0..=1.0f64, la * lb),
            proptest::collection::vec(0.0..3.0f64, la),
            proptest::collection::vec(0.0..3.0f64, lb),
        )
            .prop_map(move |(v, ka, kb)| (Array2::from_shape_vec((la, lb), v).unwrap(), ka, kb))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pair_score_in_unit_interval_and_symmetric((m, ka, kb) in matrix_and_kl(7)) {
        let r = sim(m);
        let s = udr_pair_score(&r, &ka, &kb).unwrap().score;
        prop_assert!((0.0..=1.0).contains(&s));
        let t = udr_pair_score(&r.transposed(), &kb, &ka).unwrap().score;
        prop_assert!((s - t).abs() < 1e-12);
    }

    #[test]
    fn pair_score_ignores_latent_order((m, ka, kb) in matrix_and_kl(7), seed in any::<u64>()) {
        let (pa, pb) = (shuffled(m.nrows(), seed), shuffled(m.ncols(), seed ^ 1));
        let mp = m.select(Axis(0), &pa).select(Axis(1), &pb);
        let kap: Vec<f64> = pa.iter().map(|&i| ka[i]).collect();
        let kbp: Vec<f64> = pb.iter().map(|&i| kb[i]).collect();
        let s = udr_pair_score(&sim(m), &ka, &kb).unwrap().score;
        let sp = udr_pair_score(&sim(mp), &kap, &kbp).unwrap().score;
        prop_assert!((s - sp).abs() < 1e-12);
    }

    #[test]
    fn informative_mask_counts_strictly_above_threshold(kl in proptest::collection::vec(0.0..0.02f64, 0..12)) {
        let (mask, d) = informative_mask(&kl).unwrap();
        prop_assert_eq!(d, kl.iter().filter(|&&k| k > 0.01).count());
        prop_assert!(mask.iter().zip(&kl).all(|(&m, &k)| m == (k > 0.01)));
    }

    #[test]
    fn spearman_is_sign_and_monotone_invariant(
        x in proptest::collection::vec(-5.0..5.0f64, 3..40),
        y_seed in any::<u64>(),
    ) {
        let mut y = x.clone();
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(y_seed));
        let (xa, ya) = (ndarray::Array1::from(x), ndarray::Array1::from(y));
        let r = spearman(xa.view(), ya.view());
        let neg = ya.mapv(|v| -v);
        let cubed = ya.mapv(|v| v.powi(3) + 2.0 * v);
        prop_assert!((spearman(xa.view(), neg.view()) + r).abs() < 1e-12);
        prop_assert!((spearman(xa.view(), cubed.view()) - r).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulator_kl_mask_matches_active_set(
        seed in any::<u64>(),
        dead in 0usize..=3,
        angle in 0.0..std::f64::consts::FRAC_PI_4,
    ) {
        let grid = small_grid();
        let (cfg, resp) = member(&grid, &level(angle, 0.1, dead), 3 + dead, seed);
        let (mask, d) = informative_mask(resp.kl()).unwrap();
        prop_assert_eq!(d, cfg.active_factors.len());
        for (slot, &m) in mask.iter().enumerate() {
            prop_assert_eq!(m, cfg.slots.contains(&slot));
        }
        let again = simulate_encoder(&grid, &cfg).unwrap();
        prop_assert_eq!(&again, &resp);
    }

    #[test]
    fn similarity_is_permutation_equivariant_and_sign_invariant(seed in any::<u64>(), dead in 0usize..=2) {
        let grid = small_grid();
        let q = level(0.3, 0.2, dead);
        let (_, a) = member(&grid, &q, 3 + dead, seed);
        let (_, b) = member(&grid, &q, 3 + dead, seed ^ 0xff);
        let l = b.n_latents();
        let perm = shuffled(l, seed);
        let flips: Vec<bool> = (0..l).map(|c| (seed >> c) & 1 == 1).collect();
        let bp = transform(&b, &perm, &flips);
        let lasso = LassoMethod::new(LassoConfig { n_samples: 120, ..LassoConfig::default() });
        let methods: [&dyn SimilarityMethod; 2] = [&SpearmanMethod::new(120), &lasso];
        for m in methods {
            let za = m.prepare(a.values().view());
            let r = m.compare(&za, &m.prepare(b.values().view()), 3).unwrap();
            let rp = m.compare(&za, &m.prepare(bp.values().view()), 3).unwrap();
            let expected = r.matrices[0].entries().select(Axis(1), &perm);
            let err = (&expected - rp.matrices[0].entries()).mapv(f64::abs).fold(0.0f64, |x, &y| x.max(y));
            prop_assert!(err < 1e-6, "{:?}: {}", m.kind(), err);
        }
    }

    #[test]
    fn udr_unchanged_by_permutation_and_sign_flips(seed in any::<u64>()) {
        let grid = small_grid();
        let q = level(0.2, 0.1, 2);
        let (_, a) = member(&grid, &q, 5, seed);
        let (_, b) = member(&grid, &q, 5, seed.wrapping_add(1));
        let bp = transform(&b, &shuffled(5, seed), &[true, false, true, true, false]);
        let cfg = UdrConfig { seed: 1, scope: MaskScope::Informative };
        let m = SpearmanMethod::new(1000);
        let s = pair_udr(&a, &b, &m, &cfg).unwrap().score;
        prop_assert!((s - pair_udr(&a, &bp, &m, &cfg).unwrap().score).abs() < 1e-12);
        prop_assert!((s - pair_udr(&b, &a, &m, &cfg).unwrap().score).abs() < 1e-12);
    }

    #[test]
    fn mig_quantile_binning_is_monotone_invariant(seed in any::<u64>(), col in 0usize..4) {
        let grid = small_grid();
        let (_, z) = member(&grid, &level(0.4, 0.3, 1), 4, seed);
        let mut warped = z.values().clone();
        warped.column_mut(col).mapv_inplace(|v| (v * 1.7).exp());
        let cfg = MigConfig { binning: Binning::Quantile, ..MigConfig::default() };
        let f = grid.assignments().view();
        let a = mutual_information_gap(z.values().view(), f, &cfg, 5).unwrap().score;
        let b = mutual_information_gap(warped.view(), f, &cfg, 5).unwrap().score;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mig_and_dci_ignore_latent_order(seed in any::<u64>()) {
        let grid = small_grid();
        let (_, z) = member(&grid, &level(0.3, 0.2, 2), 5, seed);
        let zp = z.values().select(Axis(1), &shuffled(5, seed));
        let f = grid.assignments().view();
        let mig = |v: &Array2<f64>| mutual_information_gap(v.view(), f, &MigConfig::default(), 2).unwrap().score;
        let dci = |v: &Array2<f64>| dci_disentanglement(v.view(), f, &DciConfig::default(), 2).unwrap().score;
        let (m, d) = (mig(z.values()), dci(z.values()));
        prop_assert!((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&d));
        prop_assert!((m - mig(&zp)).abs() < 1e-12);
        prop_assert!((d - dci(&zp)).abs() < 1e-6);
    }

    #[test]
    fn classifier_metrics_ignore_order_and_sign(seed in any::<u64>()) {
        let grid = small_grid();
        let (_, z) = member(&grid, &level(0.3, 0.2, 1), 4, seed);
        let zp = transform(&z, &shuffled(4, seed), &[true, false, false, true]);
        let score = |r: &LatentResponse| {
            let oracle = GridOracle::new(r.values().view(), &grid).unwrap();
            let bcfg = BetaVaeConfig { n_train: 300, n_test: 150, ..BetaVaeConfig::default() };
            let fcfg = FactorVaeConfig { n_prune: 2000, n_votes: 300, n_test: 150, ..FactorVaeConfig::default() };
            (
                beta_vae_metric(&oracle, &bcfg, 4).unwrap().score,
                factorvae_metric(&oracle, &fcfg, 4).unwrap().score,
            )
        };
        let (b, f) = score(&z);
        let (bp, fp) = score(&zp);
        prop_assert!((0.0..=1.0).contains(&b) && (0.0..=1.0).contains(&f));
        prop_assert!((b - bp).abs() < 1e-9, "betavae {} vs {}", b, bp);
        prop_assert!((f - fp).abs() < 1e-9, "factorvae {} vs {}", f, fp);
    }

    #[test]
    fn save_then_load_is_identity(seed in any::<u64>(), hypers in 1usize..3, seeds in 1usize..3) {
        let grid = small_grid();
        let schedule = QualityLevel::sweep(hypers, 4, 3);
        let set = simulate_population(&grid, &schedule, seeds, &PopulationOptions::new(4), seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_model_set(&set, dir.path()).unwrap();
        let back = load_model_set(&manifest).unwrap();
        prop_assert_eq!(back.factor_grid(), set.factor_grid());
        prop_assert_eq!(back.len(), set.len());
        for (x, y) in back.records().iter().zip(set.records()) {
            prop_assert_eq!(&x.model_id, &y.model_id);
            prop_assert_eq!((x.hyper_index, x.seed_index), (y.hyper_index, y.seed_index));
            prop_assert_eq!(&x.response, &y.response);
        }
    }

    #[test]
    fn model_set_rejects_mutations(kind in 0usize..3, seed in any::<u64>()) {
        let grid = small_grid();
        let set = simulate_population(&grid, &QualityLevel::sweep(2, 4, 3), 2, &PopulationOptions::new(4), seed).unwrap();
        let mut records: Vec<ModelRecord> = set.records().to_vec();
        match kind {
            0 => {
                records[1].hyper_index = records[0].hyper_index;
                records[1].seed_index = records[0].seed_index;
            }
            1 => {
                let r = &records[2].response;
                let v = r.values().select(Axis(1), &[0, 1, 2]);
                records[2].response = LatentResponse::new(v, r.kl()[..3].to_vec()).unwrap();
            }
            _ => records[3].model_id = records[0].model_id.clone(),
        }
        prop_assert!(ModelSet::new(records, Some(grid)).is_err());
    }

    #[test]
    fn pairing_plan_stays_within_hyper(
        hypers in 1usize..4,
        seeds in 2usize..7,
        p in 1usize..8,
        seed in any::<u64>(),
    ) {
        let set = tiny_set(hypers, seeds);
        let plan = build_pairing_plan(&set, PairingMode::WithinHyper, p, seed, None).unwrap();
        prop_assert_eq!(plan.capped, p > seeds - 1);
        for (i, partners) in plan.partners.iter().enumerate() {
            prop_assert_eq!(partners.len(), p.min(seeds - 1));
            prop_assert!(partners.windows(2).all(|w| w[0] < w[1]));
            for &j in partners {
                prop_assert!(j != i);
                prop_assert_eq!(set.records()[j].hyper_index, set.records()[i].hyper_index);
            }
        }
        prop_assert_eq!(&plan, &build_pairing_plan(&set, PairingMode::WithinHyper, p, seed, None).unwrap());
    }

    #[test]
    fn sweep_quartiles_are_ordered(scores in proptest::collection::vec(0.0..=1.0f64, 12)) {
        let set = tiny_set(3, 4);
        let rows = set.records().iter().zip(&scores).map(|(r, &s)| ScoreRow {
            model_id: r.model_id.clone(),
            hyper_index: r.hyper_index,
            seed_index: r.seed_index,
            metric: "mig".into(),
            score: s,
            d: 2,
        }).collect();
        let summary = sweep_summary(&ScoreTable::new(rows).unwrap(), &set).unwrap();
        prop_assert_eq!(summary.cells.len(), 3);
        for c in &summary.cells {
            prop_assert!(c.min <= c.q1 && c.q1 <= c.median && c.median <= c.q3 && c.q3 <= c.max);
        }
        let best = &summary.argmax_median["mig"];
        let top = summary.cells.iter().map(|c| c.median).fold(f64::NEG_INFINITY, f64::max);
        for c in &summary.cells {
            prop_assert_eq!(best.contains(&c.hyper_index), (c.median - top).abs() <= 1e-12);
        }
    }
}

/// Random responses over a shared 30-row sample, `hypers x seeds` records.
fn tiny_set(hypers: usize, seeds: usize) -> ModelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let records = (0..hypers)
        .flat_map(|h| (0..seeds).map(move |s| (h, s)))
        .map(|(h, s)| {
            let v = Array2::from_shape_fn((30, 3), |_| rand::Rng::random::<f64>(&mut rng));
            ModelRecord::new(format!("h{h}_s{s}"), h, s, LatentResponse::new(v, vec![1.0, 1.0, 0.0]).unwrap())
        })
        .collect();
    ModelSet::new(records, None).unwrap()
}

#[test]
fn full_partner_count_gives_zero_spread() {
    let grid = small_grid();
    let set = simulate_population(&grid, &QualityLevel::sweep(4, 4, 3), 5, &PopulationOptions::new(4), 3).unwrap();
    let reference = set
        .records()
        .iter()
        .map(|r| (r.model_id.clone(), r.provenance.as_ref().unwrap().quality + 1e-3 * r.seed_index as f64))
        .collect();
    let cfg = UdrConfig { seed: 2, scope: MaskScope::Informative };
    let rows = p_sweep_study(&set, &[2, 4], 6, &reference, &SpearmanMethod::new(1000), &cfg, 8).unwrap();
    assert_eq!(rows[1].p, 4);
    assert_eq!(rows[1].std_rho, 0.0);
    assert!(rows.iter().all(|r| r.repeats == 6));
}

#[test]
fn resampled_plans_agree_with_the_full_plan() {
    let spec = FactorSpec::from_cardinalities(&[5, 5, 5, 5]).unwrap();
    let grid = make_factor_grid(&spec, GridMode::Full).unwrap();
    let set = simulate_population(&grid, &QualityLevel::sweep(5, 6, 4), 30, &PopulationOptions::new(6), 4).unwrap();
    let cfg = UdrConfig { seed: 2, scope: MaskScope::Informative };
    let m = SpearmanMethod::new(600);
    let full = build_pairing_plan(&set, PairingMode::WithinHyper, 29, 0, None).unwrap();
    let reference = udr_scores(&set, &full, &m, &cfg, "udr").unwrap().table.metric_scores("udr");
    let rows = p_sweep_study(&set, &[15, 25], 5, &reference, &m, &cfg, 6).unwrap();
    for r in &rows {
        assert!(r.mean_rho >= 0.9, "P = {}: {}", r.p, r.mean_rho);
    }
}

#[test]
fn subset_encoder_scores_by_latent_count() {
    let grid = small_grid();
    let big = simulate_encoder(&grid, &EncoderConfig::disentangled(&[0, 1, 2], 0, 1)).unwrap();
    let small = simulate_encoder(&grid, &EncoderConfig::disentangled(&[0, 1], 1, 2)).unwrap();
    let cfg = UdrConfig { seed: 0, scope: MaskScope::Informative };
    let v = pair_udr(&small, &big, &SpearmanMethod::new(1000), &cfg).unwrap();
    assert_eq!((v.d_i, v.d_j), (2, 3));
    assert!((v.score - 0.8).abs() < 1e-9, "{}", v.score);
}

#[test]
fn hand_matrix_subset_case() {
    let r = sim(ndarray::array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    assert!((udr_pair_score(&r, &[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap().score - 0.8).abs() < 1e-15);
}
