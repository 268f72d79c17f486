use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::{json, Value};

use udr_core::harness::{
    p_sweep_study, sweep_summary, write_correlations, write_p_sweep, write_sweep_summary, CorrelationReport,
};
use udr_core::io::{load_model_set, read_score_table, save_model_set, write_score_table, MANIFEST_FILE};
use udr_core::registry::{MetricCatalog, ScoreParams};
use udr_core::similarity::{SimilarityKind, SimilarityMatrix, SimilarityRegistry};
use udr_core::simulator::{
    make_factor_grid, preset, simulate_population, GridMode, MapPolicy, PopulationOptions, QualityLevel,
};
use udr_core::stats::{normalized_rank_columns, select_rows};
use udr_core::udr::{udr_pair_score, MaskScope, UdrConfig};
use udr_core::{ModelSet, ScoreTable};

const SCORES_FILE: &str = "scores.csv";
const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Parser)]
#[command(name = "udr-rank", version, about = "Rank latent representations without labels")]
struct Cli {
    /// Worker threads for pair and metric evaluations (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a population of encoders over a factor grid.
    Simulate(SimulateArgs),
    /// Score every model of a set and merge the result into scores.csv.
    Score(ScoreArgs),
    /// Correlations, per-hyper summaries and the P-sweep study.
    Report(ReportArgs),
    /// Check a model set (and its scores, if present) against the library invariants.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Maps {
    Identity,
    RandomMonotone,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "dsprites-mini")]
    preset: String,
    /// Number of hyperparameter settings H.
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
    hypers: u64,
    /// Seeds per setting S.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// Latent dimension L (default: number of factors + 3).
    #[arg(long)]
    latents: Option<usize>,
    /// Rows drawn uniformly from the factor space.
    #[arg(long, default_value_t = 10000, conflicts_with = "full")]
    samples: usize,
    /// Use the complete Cartesian grid instead of a sample.
    #[arg(long)]
    full: bool,
    #[arg(long, value_enum, default_value = "identity")]
    maps: Maps,
    #[arg(long, env = "UDR_RANK_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Informative,
    AllLatents,
}

#[derive(Args)]
struct ScoreArgs {
    /// Model set directory or manifest.
    #[arg(long)]
    models: PathBuf,
    #[arg(long, value_parser = ["udr", "udr-a2a", "betavae", "factorvae", "mig", "dci"])]
    metric: String,
    /// Similarity method for UDR.
    #[arg(long, value_parser = ["spearman", "lasso"])]
    method: Option<String>,
    /// Partners per model.
    #[arg(long)]
    p: Option<usize>,
    /// All-to-all only: seeds kept per hyper.
    #[arg(long)]
    a2a_cap: Option<usize>,
    #[arg(long, value_enum)]
    scope: Option<Scope>,
    #[arg(long, env = "UDR_RANK_SEED")]
    seed: Option<u64>,
    /// TOML file with default score parameters; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: the model set directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding scores.csv; reports are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Model set (needed for sweep summaries and the P sweep; default: --out).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Comma-separated partner counts for the stability study.
    #[arg(long, value_delimiter = ',')]
    p_sweep: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    /// Metric the P-sweep UDR rankings are correlated against.
    #[arg(long, default_value = "mig")]
    reference: String,
    #[arg(long, value_parser = ["spearman", "lasso"], default_value = "lasso")]
    method: String,
    #[arg(long, env = "UDR_RANK_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    models: PathBuf,
    /// Pairs checked for symmetry and permutation invariance.
    #[arg(long, default_value_t = 10)]
    pairs: usize,
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn set_dir(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.to_path_buf()
    } else {
        p.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn load(p: &Path) -> Result<ModelSet> {
    let path = manifest_path(p);
    info!("loading {}", path.display());
    load_model_set(&path).with_context(|| format!("cannot load model set {}", path.display()))
}

/// Merges `entry` under `key` in the output directory's run manifest.
fn record_run(dir: &Path, key: &str, entry: Value) -> Result<()> {
    let path = dir.join(RUN_MANIFEST);
    let mut doc: BTreeMap<String, Value> = match fs::read_to_string(&path) {
        Ok(s) => serde_json::from_str(&s).with_context(|| format!("corrupt {}", path.display()))?,
        Err(_) => BTreeMap::new(),
    };
    match key.split_once('/') {
        Some((outer, inner)) => {
            let slot = doc.entry(outer.to_string()).or_insert_with(|| json!({}));
            slot[inner] = entry;
        }
        None => {
            doc.insert(key.to_string(), entry);
        }
    }
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = preset(&a.preset)?;
    let k = spec.n_factors();
    let l = a.latents.unwrap_or(k + 3);
    if l < k {
        bail!("--latents {l} is smaller than the {k} factors of `{}`", a.preset);
    }
    let mode = if a.full { GridMode::Full } else { GridMode::UniformSample { n: a.samples, seed: a.seed } };
    let grid = make_factor_grid(&spec, mode)?;
    let schedule = QualityLevel::sweep(a.hypers as usize, l, k);
    let mut options = PopulationOptions::new(l);
    options.map_policy = match a.maps {
        Maps::Identity => MapPolicy::Identity,
        Maps::RandomMonotone => MapPolicy::RandomMonotone,
    };
    info!("simulating {} x {} encoders on {} rows", a.hypers, a.seeds, grid.n_samples());
    let set = simulate_population(&grid, &schedule, a.seeds as usize, &options, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    save_model_set(&set, &a.out)?;
    record_run(
        &a.out,
        "simulate",
        json!({
            "preset": a.preset,
            "hypers": a.hypers,
            "seeds": a.seeds,
            "latents": l,
            "grid": mode,
            "maps": options.map_policy,
            "seed": a.seed,
            "schedule": schedule,
        }),
    )?;
    println!("models: {}  samples: {}  latents: {}", set.len(), grid.n_samples(), l);
    println!("hyper  mixing_angle  noise_sd  dead  quality");
    for (h, q) in schedule.iter().enumerate() {
        println!("{h:>5}  {:>12.4}  {:>8.4}  {:>4}  {:>7.4}", q.mixing_angle, q.noise_sd, q.dead_latent_count, q.quality());
    }
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let mut params: ScoreParams = match &a.config {
        Some(p) => {
            let s = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            toml::from_str(&s).with_context(|| format!("invalid config {}", p.display()))?
        }
        None => ScoreParams::default(),
    };
    if let Some(m) = a.method {
        params.method = m;
    }
    if let Some(p) = a.p {
        params.p = p;
    }
    if let Some(s) = a.seed {
        params.seed = s;
    }
    if a.a2a_cap.is_some() {
        params.a2a_seed_cap = a.a2a_cap;
    }
    if let Some(s) = a.scope {
        params.scope = match s {
            Scope::Informative => MaskScope::Informative,
            Scope::AllLatents => MaskScope::AllLatents,
        };
    }
    let set = load(&a.models)?;
    let metric = MetricCatalog::default().get(&a.metric)?;
    if metric.needs_factor_labels() && set.factor_grid().is_none() {
        bail!("metric `{}`: factor labels required (the model set has no factor grid)", a.metric);
    }
    let column = metric.column(&params);
    info!("scoring {} models with {column}", set.len());
    let run = metric.run(&set, &params)?;
    for n in &run.notes {
        warn!("{n}");
    }

    let out = a.out.unwrap_or_else(|| set_dir(&a.models));
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let path = out.join(SCORES_FILE);
    let mut table = if path.exists() { read_score_table(&path)? } else { ScoreTable::default() };
    table.merge(run.table);
    let mut rows = table.into_rows();
    rows.sort_by(|x, y| (&x.metric, x.hyper_index, x.seed_index).cmp(&(&y.metric, y.hyper_index, y.seed_index)));
    write_score_table(&ScoreTable::new(rows)?, &path)?;
    record_run(&out, &format!("score/{column}"), json!({ "metric": a.metric, "params": params }))?;
    println!("wrote {column} scores to {}", path.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let path = a.out.join(SCORES_FILE);
    let table = read_score_table(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let models = a.models.clone().unwrap_or_else(|| a.out.clone());
    let set = load(&models)?;

    let corr = CorrelationReport::from_table(&table)?;
    write_correlations(&corr, a.out.join("correlations.csv"))?;
    let sweep = sweep_summary(&table, &set)?;
    write_sweep_summary(&sweep, a.out.join("sweep_summary.csv"))?;

    let mut p_rows = Vec::new();
    if !a.p_sweep.is_empty() {
        let reference = table.metric_scores(&a.reference);
        if reference.is_empty() {
            bail!("reference metric `{}` has no scores in {}", a.reference, path.display());
        }
        let params = ScoreParams { method: a.method.clone(), seed: a.seed, ..Default::default() };
        let method = SimilarityRegistry::default().create(&params.method, &params.similarity)?;
        let config = UdrConfig { seed: a.seed, scope: params.scope };
        info!("P sweep over {:?} with {} repeats", a.p_sweep, a.repeats);
        p_rows = p_sweep_study(&set, &a.p_sweep, a.repeats, &reference, method.as_ref(), &config, a.seed)?;
        write_p_sweep(&p_rows, a.out.join("p_sweep.csv"))?;
    }

    let summary = json!({
        "correlations": corr.rows,
        "udr_vs_supervised_mean_rho": corr.udr_vs_supervised_means(),
        "argmax_median": sweep.argmax_median,
        "common_argmax_median": sweep.common_argmax(),
        "p_sweep": p_rows,
    });
    fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    record_run(
        &a.out,
        "report",
        json!({ "p_sweep": a.p_sweep, "repeats": a.repeats, "reference": a.reference, "method": a.method, "seed": a.seed }),
    )?;
    for r in &corr.rows {
        println!("{:>18} {:>18}  rho = {:+.3}  (n = {})", r.metric_a, r.metric_b, r.rho, r.n_models);
    }
    for r in &p_rows {
        println!("P = {:>3}  rho = {:.3} +/- {:.3}", r.p, r.mean_rho, r.std_rho);
    }
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let set = load(&a.models)?;
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures.push(name.to_string());
        }
    };
    check("manifest", true, format!("{} models, shapes and identifiers consistent", set.len()));

    let silent: Vec<&str> = set
        .records()
        .iter()
        .filter(|r| r.response.kl().iter().all(|&k| k <= udr_core::udr::KL_THRESHOLD))
        .map(|r| r.model_id.as_str())
        .collect();
    check(
        "informative latents",
        true,
        if silent.is_empty() { "every model has one".into() } else { format!("{} models have none", silent.len()) },
    );

    let recs = set.records();
    let n = set.n_samples().unwrap_or(0);
    let rows = select_rows(n, 1000, 0);
    let prep = |i: usize| normalized_rank_columns(recs[i].response.values().select(ndarray::Axis(0), &rows).view());
    let (mut sym_err, mut perm_err) = (0.0f64, 0.0f64);
    let pairs: Vec<(usize, usize)> = (0..recs.len()).flat_map(|i| ((i + 1)..recs.len()).map(move |j| (i, j))).take(a.pairs).collect();
    for &(i, j) in &pairs {
        let (zi, zj) = (prep(i), prep(j));
        let r = SimilarityMatrix::from_raw(zi.t().dot(&zj), SimilarityKind::Spearman)?;
        let (kl_i, kl_j) = (recs[i].response.kl(), recs[j].response.kl());
        let s = udr_pair_score(&r, kl_i, kl_j)?.score;
        sym_err = sym_err.max((s - udr_pair_score(&r.transposed(), kl_j, kl_i)?.score).abs());
        // reverse the latent order of model j and flip the sign of every other latent
        let l = zj.ncols();
        let mut zp = zj.clone();
        for c in 0..l {
            let sign = if c % 2 == 0 { -1.0 } else { 1.0 };
            zp.column_mut(l - 1 - c).assign(&(&zj.column(c) * sign));
        }
        let kl_p: Vec<f64> = kl_j.iter().rev().copied().collect();
        let rp = SimilarityMatrix::from_raw(zi.t().dot(&zp), SimilarityKind::Spearman)?;
        perm_err = perm_err.max((s - udr_pair_score(&rp, kl_i, &kl_p)?.score).abs());
    }
    check("pair score symmetry", sym_err < 1e-12, format!("max deviation {sym_err:.2e} over {} pairs", pairs.len()));
    check("permutation and sign invariance", perm_err < 1e-9, format!("max deviation {perm_err:.2e}"));

    let scores = set_dir(&a.models).join(SCORES_FILE);
    if scores.exists() {
        match read_score_table(&scores) {
            Ok(t) => {
                let unknown = t.rows().iter().filter(|r| set.index_of(&r.model_id).is_none()).count();
                check("scores", unknown == 0, format!("{} rows, {unknown} with unknown model ids", t.rows().len()));
            }
            Err(e) => check("scores", false, e.to_string()),
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        bail!("{} check(s) failed: {}", failures.len(), failures.join(", "))
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Score(a) => score(a),
        Command::Report(a) => report(a),
        Command::Validate(a) => validate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
