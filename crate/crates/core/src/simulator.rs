//! Synthetic encoder populations with known ground truth.
//!
//! A simulated encoder maps each factor tuple to a latent vector: each active
//! latent is a signed monotone function of one normalised factor, the active
//! latents are then mixed by planar rotations (the entanglement knob), and
//! Gaussian noise is added. Dead latents carry only small noise and a KL
//! value below the informative threshold.
//!
//! Noise is a deterministic function of `(rng_seed, factor tuple)`, so the
//! encoder behaves like a fixed network applied to a fixed image: encoding the
//! same tuple twice yields the same latent vector.

use std::f64::consts::FRAC_PI_4;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EncoderOracle;
use crate::model::{
    Factor, FactorGrid, FactorSpec, LatentResponse, ModelRecord, ModelSet, Provenance,
};
use crate::stats::derive_seed;
use crate::udr::KL_THRESHOLD;

/// Upper bound on the number of rows a full Cartesian grid may have.
pub const MAX_GRID_ROWS: usize = 1 << 24;

/// Named factor-space presets.
pub fn preset(name: &str) -> Result<FactorSpec> {
    match name {
        "dsprites" => FactorSpec::new(vec![
            Factor::new("shape", 3),
            Factor::new("scale", 6),
            Factor::circular("orientation", 40),
            Factor::new("pos_x", 32),
            Factor::new("pos_y", 32),
        ]),
        "shapes3d" => FactorSpec::new(vec![
            Factor::circular("floor_hue", 10),
            Factor::circular("wall_hue", 10),
            Factor::circular("object_hue", 10),
            Factor::new("scale", 8),
            Factor::new("shape", 4),
            Factor::new("orientation", 15),
        ]),
        "cars3d" => FactorSpec::new(vec![
            Factor::new("car_model", 199),
            Factor::circular("rotation", 24),
        ]),
        "dsprites-mini" => FactorSpec::new(vec![
            Factor::new("shape", 3),
            Factor::new("scale", 6),
            Factor::circular("orientation", 10),
            Factor::new("pos_x", 8),
            Factor::new("pos_y", 8),
        ]),
        "shapes3d-mini" => FactorSpec::new(vec![
            Factor::circular("floor_hue", 5),
            Factor::circular("wall_hue", 5),
            Factor::circular("object_hue", 5),
            Factor::new("scale", 4),
            Factor::new("shape", 4),
            Factor::new("orientation", 5),
        ]),
        other => Err(Error::UnknownStrategy {
            kind: "preset",
            name: other.into(),
            known: PRESETS.join(", "),
        }),
    }
}

pub const PRESETS: &[&str] = &["dsprites", "shapes3d", "cars3d", "dsprites-mini", "shapes3d-mini"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum GridMode {
    /// Complete Cartesian product in lexicographic order (last factor fastest).
    Full,
    /// `n` i.i.d. uniform rows.
    UniformSample { n: usize, seed: u64 },
}

pub fn make_factor_grid(spec: &FactorSpec, mode: GridMode) -> Result<FactorGrid> {
    let cards = spec.cardinalities();
    let k = cards.len();
    let assignments = match mode {
        GridMode::Full => {
            let n = spec
                .product()
                .filter(|&n| n <= MAX_GRID_ROWS)
                .ok_or_else(|| {
                    Error::FactorGrid(format!(
                        "Cartesian product of {cards:?} exceeds {MAX_GRID_ROWS} rows"
                    ))
                })?;
            let mut a = Array2::zeros((n, k));
            let mut digits = vec![0i32; k];
            for mut row in a.rows_mut() {
                row.iter_mut().zip(&digits).for_each(|(d, &v)| *d = v);
                for j in (0..k).rev() {
                    digits[j] += 1;
                    if (digits[j] as usize) < cards[j] {
                        break;
                    }
                    digits[j] = 0;
                }
            }
            a
        }
        GridMode::UniformSample { n, seed } => {
            if n == 0 {
                return Err(Error::FactorGrid("sample size must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Array2::from_shape_fn((n, k), |(_, j)| rng.random_range(0..cards[j]) as i32)
        }
    };
    FactorGrid::new(spec.clone(), assignments)
}

/// Monotone transform applied to a normalised factor value in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseMap {
    Identity,
    Cube,
    /// `2 / (1 + exp(-3x)) - 1`, rescaled to span [-1, 1].
    ScaledSigmoid,
    /// `sin(pi * x)`: treats the factor as an angle. Not monotone.
    Circular,
}

impl ResponseMap {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ResponseMap::Identity => x,
            ResponseMap::Cube => x * x * x,
            ResponseMap::ScaledSigmoid => {
                let s = |t: f64| 2.0 / (1.0 + (-3.0 * t).exp()) - 1.0;
                s(x) / s(1.0)
            }
            ResponseMap::Circular => (std::f64::consts::PI * x).sin(),
        }
    }
}

/// How the per-record response maps are chosen in a population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapPolicy {
    Identity,
    /// Uniform over identity, cube and scaled sigmoid, per latent.
    RandomMonotone,
}

/// Full description of one simulated encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Factor index encoded by each active latent.
    pub active_factors: Vec<usize>,
    /// Latent slot of each active latent (a bijection onto a subset of slots).
    pub slots: Vec<usize>,
    /// +1 or -1 per active latent.
    pub signs: Vec<i8>,
    pub maps: Vec<ResponseMap>,
    /// Planar rotation angle in [0, pi/4] applied along the chain of
    /// consecutive active slots; 0 is disentangled.
    pub mixing_angle: f64,
    /// Replace the rotation chain by a random orthogonal mixing of all active latents.
    #[serde(default)]
    pub orthogonal_mixing: bool,
    pub noise_sd: f64,
    pub dead_latent_count: usize,
    #[serde(default = "default_dead_noise_sd")]
    pub dead_noise_sd: f64,
    pub kl_active_range: (f64, f64),
    pub kl_dead_range: (f64, f64),
    pub rng_seed: u64,
}

fn default_dead_noise_sd() -> f64 {
    0.01
}

pub const DEFAULT_KL_ACTIVE: (f64, f64) = (0.5, 4.0);
pub const DEFAULT_KL_DEAD: (f64, f64) = (0.0, 0.005);

impl EncoderConfig {
    /// Noise-free, unmixed encoder of `factors` in slot order, with identity maps.
    pub fn disentangled(factors: &[usize], dead_latent_count: usize, rng_seed: u64) -> Self {
        Self {
            active_factors: factors.to_vec(),
            slots: (0..factors.len()).collect(),
            signs: vec![1; factors.len()],
            maps: vec![ResponseMap::Identity; factors.len()],
            mixing_angle: 0.0,
            orthogonal_mixing: false,
            noise_sd: 0.0,
            dead_latent_count,
            dead_noise_sd: default_dead_noise_sd(),
            kl_active_range: DEFAULT_KL_ACTIVE,
            kl_dead_range: DEFAULT_KL_DEAD,
            rng_seed,
        }
    }

    /// An encoder whose every latent is unit-variance noise unrelated to the factors.
    pub fn pure_noise(n_latents: usize, rng_seed: u64) -> Self {
        Self {
            dead_noise_sd: 1.0,
            ..Self::disentangled(&[], n_latents, rng_seed)
        }
    }

    pub fn n_latents(&self) -> usize {
        self.active_factors.len() + self.dead_latent_count
    }

    pub fn validate(&self, n_factors: usize) -> Result<()> {
        let err = |m: String| Err(Error::EncoderConfig(m));
        let a = self.active_factors.len();
        let l = self.n_latents();
        if l == 0 {
            return err("encoder has no latents".into());
        }
        if self.slots.len() != a || self.signs.len() != a || self.maps.len() != a {
            return err(format!(
                "{a} active factors but {} slots, {} signs, {} maps",
                self.slots.len(),
                self.signs.len(),
                self.maps.len()
            ));
        }
        let mut seen_f = vec![false; n_factors];
        for &f in &self.active_factors {
            if f >= n_factors || std::mem::replace(&mut seen_f[f], true) {
                return err(format!("active factor {f} out of range or repeated"));
            }
        }
        let mut seen_s = vec![false; l];
        for &s in &self.slots {
            if s >= l || std::mem::replace(&mut seen_s[s], true) {
                return err(format!("slot {s} out of range or repeated"));
            }
        }
        if self.signs.iter().any(|&s| s != 1 && s != -1) {
            return err("signs must be +1 or -1".into());
        }
        if !(0.0..=FRAC_PI_4).contains(&self.mixing_angle) {
            return err(format!("mixing angle {} outside [0, pi/4]", self.mixing_angle));
        }
        if !(self.noise_sd >= 0.0 && self.dead_noise_sd >= 0.0) {
            return err("noise standard deviations must be >= 0".into());
        }
        let (dlo, dhi) = self.kl_dead_range;
        let (alo, ahi) = self.kl_active_range;
        if !(0.0 <= dlo && dlo <= dhi && dhi <= KL_THRESHOLD) {
            return err(format!("kl_dead_range {:?} not within [0, {KL_THRESHOLD}]", self.kl_dead_range));
        }
        if !(KL_THRESHOLD < alo && alo <= ahi && ahi.is_finite()) {
            return err(format!("kl_active_range {:?} not above {KL_THRESHOLD}", self.kl_active_range));
        }
        Ok(())
    }
}

/// A validated encoder ready to map factor tuples to latents.
#[derive(Debug, Clone)]
pub struct SimulatedEncoder {
    spec: FactorSpec,
    config: EncoderConfig,
    /// Row-major `A x A` mixing of the active latents (in slot order).
    mixing: Vec<f64>,
    /// Active latent indices sorted by slot.
    slot_order: Vec<usize>,
    dead_slots: Vec<usize>,
    kl: Vec<f64>,
}

impl SimulatedEncoder {
    pub fn new(spec: FactorSpec, config: EncoderConfig) -> Result<Self> {
        config.validate(spec.n_factors())?;
        let a = config.active_factors.len();
        let l = config.n_latents();
        let mut slot_order: Vec<usize> = (0..a).collect();
        slot_order.sort_by_key(|&i| config.slots[i]);
        let mut used = vec![false; l];
        config.slots.iter().for_each(|&s| used[s] = true);
        let dead_slots = (0..l).filter(|&s| !used[s]).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, &[0x4b4c]));
        let mut kl = vec![0.0; l];
        for s in 0..l {
            let (lo, hi) = if used[s] { config.kl_active_range } else { config.kl_dead_range };
            kl[s] = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }

        let mixing = if config.orthogonal_mixing {
            random_orthogonal(a, derive_seed(config.rng_seed, &[0x0e7]))
        } else {
            rotation_chain(a, config.mixing_angle)
        };
        Ok(Self {
            spec,
            config,
            mixing,
            slot_order,
            dead_slots,
            kl,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn kl(&self) -> &[f64] {
        &self.kl
    }

    pub fn factor_spec(&self) -> &FactorSpec {
        &self.spec
    }

    /// Latent vector for one factor tuple, written into `out` (length L).
    pub fn encode_into(&self, tuple: ArrayView1<'_, i32>, out: &mut [f64]) {
        let cfg = &self.config;
        let a = self.slot_order.len();
        let cards = self.spec.factors();
        let mut pre = [0.0f64; 64];
        let mut pre_vec;
        let pre: &mut [f64] = if a <= 64 {
            &mut pre[..a]
        } else {
            pre_vec = vec![0.0; a];
            &mut pre_vec
        };
        for (p, &i) in self.slot_order.iter().enumerate() {
            let f = cfg.active_factors[i];
            let card = cards[f].cardinality as f64;
            let x = 2.0 * tuple[f] as f64 / (card - 1.0) - 1.0;
            pre[p] = cfg.signs[i] as f64 * cfg.maps[i].apply(x);
        }

        let mut tuple_seed = cfg.rng_seed;
        for &v in tuple.iter() {
            tuple_seed = derive_seed(tuple_seed, &[v as u64]);
        }
        let mut noise = ChaCha8Rng::seed_from_u64(tuple_seed);

        for (p, &i) in self.slot_order.iter().enumerate() {
            let row = &self.mixing[p * a..(p + 1) * a];
            let mixed: f64 = row.iter().zip(pre.iter()).map(|(m, v)| m * v).sum();
            let eps: f64 = noise.sample(StandardNormal);
            out[cfg.slots[i]] = mixed + cfg.noise_sd * eps;
        }
        for &s in &self.dead_slots {
            let eps: f64 = noise.sample(StandardNormal);
            out[s] = cfg.dead_noise_sd * eps;
        }
    }

    pub fn encode_rows(&self, assignments: &Array2<i32>) -> Array2<f64> {
        let l = self.config.n_latents();
        let n = assignments.nrows();
        let mut flat = vec![0.0; n * l];
        flat.par_chunks_mut(l)
            .enumerate()
            .for_each(|(r, out)| self.encode_into(assignments.row(r), out));
        Array2::from_shape_vec((n, l), flat).expect("n x l buffer")
    }
}

impl EncoderOracle for SimulatedEncoder {
    fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    fn n_latents(&self) -> usize {
        self.config.n_latents()
    }

    fn draw_value(&self, factor: usize, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(0..self.spec.factors()[factor].cardinality)
    }

    fn draw(
        &self,
        n: usize,
        fixed: Option<(usize, usize)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<f64>> {
        let cards = self.spec.cardinalities();
        let mut tuples = Array2::from_shape_fn((n, cards.len()), |(_, j)| {
            rng.random_range(0..cards[j]) as i32
        });
        if let Some((k, v)) = fixed {
            tuples.column_mut(k).fill(v as i32);
        }
        let l = self.config.n_latents();
        let mut out = Array2::zeros((n, l));
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            self.encode_into(tuples.row(r), row.as_slice_mut().expect("row-major"));
        }
        Ok(out)
    }
}

/// Product of Givens rotations by `angle` over consecutive pairs
/// `(0,1), (1,2), ..., (a-2,a-1)`, as a row-major `a x a` matrix.
fn rotation_chain(a: usize, angle: f64) -> Vec<f64> {
    let mut m = identity(a);
    let (s, c) = angle.sin_cos();
    for p in 0..a.saturating_sub(1) {
        let q = p + 1;
        // m <- G(p,q) * m
        for col in 0..a {
            let (u, v) = (m[p * a + col], m[q * a + col]);
            m[p * a + col] = c * u - s * v;
            m[q * a + col] = s * u + c * v;
        }
    }
    m
}

fn identity(a: usize) -> Vec<f64> {
    let mut m = vec![0.0; a * a];
    (0..a).for_each(|i| m[i * a + i] = 1.0);
    m
}

/// Haar-ish random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal(a: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(a);
    while rows.len() < a {
        let mut v: Vec<f64> = (0..a).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let d: f64 = r.iter().zip(&v).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

pub fn simulate_encoder(grid: &FactorGrid, config: &EncoderConfig) -> Result<LatentResponse> {
    let enc = SimulatedEncoder::new(grid.spec().clone(), config.clone())?;
    LatentResponse::new(enc.encode_rows(grid.assignments()), enc.kl().to_vec())
}

/// Entanglement settings shared by every seed of one hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityLevel {
    pub mixing_angle: f64,
    pub noise_sd: f64,
    pub dead_latent_count: usize,
}

impl QualityLevel {
    /// Ground-truth quality proxy in [0, 1]: decreasing in both angle and noise.
    pub fn quality(&self) -> f64 {
        (2.0 * self.mixing_angle).cos().max(0.0) * (-self.noise_sd).exp()
    }

    /// `h` settings from fully entangled (index 0) to disentangled (index h-1),
    /// with every factor encoded when `n_latents >= n_factors`.
    pub fn sweep(h: usize, n_latents: usize, n_factors: usize) -> Vec<QualityLevel> {
        let dead = n_latents.saturating_sub(n_factors);
        (0..h)
            .map(|i| {
                let t = if h > 1 { i as f64 / (h - 1) as f64 } else { 1.0 };
                QualityLevel {
                    mixing_angle: FRAC_PI_4 * (1.0 - t),
                    noise_sd: 0.5 * (1.0 - t),
                    dead_latent_count: dead,
                }
            })
            .collect()
    }
}

/// Options for [`simulate_population`] beyond the quality schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationOptions {
    pub n_latents: usize,
    pub map_policy: MapPolicy,
    pub kl_active_range: (f64, f64),
    pub kl_dead_range: (f64, f64),
    pub dead_noise_sd: f64,
}

impl PopulationOptions {
    pub fn new(n_latents: usize) -> Self {
        Self {
            n_latents,
            map_policy: MapPolicy::Identity,
            kl_active_range: DEFAULT_KL_ACTIVE,
            kl_dead_range: DEFAULT_KL_DEAD,
            dead_noise_sd: default_dead_noise_sd(),
        }
    }
}

/// Encoder configuration for record `(hyper, seed)`: random slots, signs,
/// factor subset and (optionally) maps, all drawn from `seed`.
pub fn population_member(
    spec: &FactorSpec,
    level: &QualityLevel,
    options: &PopulationOptions,
    rng_seed: u64,
) -> Result<EncoderConfig> {
    let l = options.n_latents;
    let k = spec.n_factors();
    let n_active = l.checked_sub(level.dead_latent_count).ok_or_else(|| {
        Error::EncoderConfig(format!(
            "{} dead latents exceed {l} latents",
            level.dead_latent_count
        ))
    })?;
    if n_active > k {
        return Err(Error::EncoderConfig(format!(
            "{n_active} active latents but only {k} factors; raise the dead-latent count"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut factors: Vec<usize> = (0..k).collect();
    factors.shuffle(&mut rng);
    factors.truncate(n_active);
    factors.sort_unstable();
    let mut slots: Vec<usize> = (0..l).collect();
    slots.shuffle(&mut rng);
    slots.truncate(n_active);
    let signs = (0..n_active)
        .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
        .collect();
    let maps = (0..n_active)
        .map(|_| match options.map_policy {
            MapPolicy::Identity => ResponseMap::Identity,
            MapPolicy::RandomMonotone => [
                ResponseMap::Identity,
                ResponseMap::Cube,
                ResponseMap::ScaledSigmoid,
            ][rng.random_range(0..3)],
        })
        .collect();
    Ok(EncoderConfig {
        active_factors: factors,
        slots,
        signs,
        maps,
        mixing_angle: level.mixing_angle,
        orthogonal_mixing: false,
        noise_sd: level.noise_sd,
        dead_latent_count: level.dead_latent_count,
        dead_noise_sd: options.dead_noise_sd,
        kl_active_range: options.kl_active_range,
        kl_dead_range: options.kl_dead_range,
        rng_seed,
    })
}

/// Simulates `H x S` models; `schedule[h]` sets the entanglement of hyper `h`.
pub fn simulate_population(
    grid: &FactorGrid,
    schedule: &[QualityLevel],
    seeds: usize,
    options: &PopulationOptions,
    seed: u64,
) -> Result<ModelSet> {
    if schedule.is_empty() || seeds == 0 {
        return Err(Error::EncoderConfig("need at least one hyper and one seed".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..schedule.len())
        .flat_map(|h| (0..seeds).map(move |s| (h, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(h, s)| {
            let level = &schedule[h];
            let rng_seed = derive_seed(seed, &[h as u64, s as u64]);
            let config = population_member(grid.spec(), level, options, rng_seed)?;
            let response = simulate_encoder(grid, &config)?;
            let mut record = ModelRecord::new(format!("h{h}_s{s}"), h, s, response);
            record.provenance = Some(Provenance {
                encoder: config,
                quality: level.quality(),
            });
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    ModelSet::new(records, Some(grid.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::spearman;
    use crate::udr::informative_mask;
    use ndarray::Array1;

    #[test]
    fn presets_have_expected_sizes() {
        assert_eq!(preset("dsprites").unwrap().product(), Some(737_280));
        assert_eq!(preset("shapes3d").unwrap().product(), Some(480_000));
        assert_eq!(preset("cars3d").unwrap().cardinalities(), vec![199, 24]);
        assert!(preset("mnist").is_err());
    }

    #[test]
    fn full_grid_is_lexicographic() {
        let spec = FactorSpec::from_cardinalities(&[2]).unwrap();
        let g = make_factor_grid(&spec, GridMode::Full).unwrap();
        assert_eq!(g.assignments().as_slice().unwrap(), &[0, 1]);
        let spec = FactorSpec::from_cardinalities(&[2, 3]).unwrap();
        let g = make_factor_grid(&spec, GridMode::Full).unwrap();
        assert_eq!(g.row(0).to_vec(), vec![0, 0]);
        assert_eq!(g.row(1).to_vec(), vec![0, 1]);
        assert_eq!(g.row(3).to_vec(), vec![1, 0]);
        assert_eq!(g.n_samples(), 6);
    }

    #[test]
    fn dsprites_full_grid_has_all_rows() {
        let g = make_factor_grid(&preset("dsprites").unwrap(), GridMode::Full).unwrap();
        assert_eq!(g.n_samples(), 737_280);
        assert_eq!(g.row(737_279).to_vec(), vec![2, 5, 39, 31, 31]);
    }

    #[test]
    fn grid_errors() {
        let spec = FactorSpec::from_cardinalities(&[1 << 20, 1 << 20]).unwrap();
        assert!(make_factor_grid(&spec, GridMode::Full).is_err());
        assert!(make_factor_grid(&spec, GridMode::UniformSample { n: 0, seed: 1 }).is_err());
    }

    #[test]
    fn disentangled_encoder_is_rank_exact() {
        let spec = FactorSpec::from_cardinalities(&[4, 5, 6]).unwrap();
        let grid = make_factor_grid(&spec, GridMode::UniformSample { n: 500, seed: 3 }).unwrap();
        let mut cfg = EncoderConfig::disentangled(&[0, 1, 2], 2, 11);
        cfg.slots = vec![3, 0, 2];
        cfg.signs = vec![-1, 1, -1];
        cfg.maps = vec![ResponseMap::Cube, ResponseMap::ScaledSigmoid, ResponseMap::Identity];
        let resp = simulate_encoder(&grid, &cfg).unwrap();
        for (i, &f) in cfg.active_factors.iter().enumerate() {
            let fac: Array1<f64> = grid.assignments().column(f).mapv(f64::from);
            let rho = spearman(resp.values().column(cfg.slots[i]), fac.view());
            assert!((rho.abs() - 1.0).abs() < 1e-12, "rho = {rho}");
        }
        let (mask, d) = informative_mask(resp.kl()).unwrap();
        assert_eq!(d, 3);
        assert_eq!(mask, vec![true, false, true, true, false]);
    }

    #[test]
    fn rotated_pair_correlates_with_both_factors() {
        let spec = FactorSpec::from_cardinalities(&[10, 10]).unwrap();
        let grid = make_factor_grid(&spec, GridMode::Full).unwrap();
        let mut cfg = EncoderConfig::disentangled(&[0, 1], 0, 5);
        cfg.mixing_angle = FRAC_PI_4;
        let resp = simulate_encoder(&grid, &cfg).unwrap();
        for latent in 0..2 {
            for f in 0..2 {
                let fac: Array1<f64> = grid.assignments().column(f).mapv(f64::from);
                let rho = spearman(resp.values().column(latent), fac.view());
                assert!(rho.abs() > 0.3, "latent {latent} factor {f}: {rho}");
            }
        }
    }

    #[test]
    fn all_dead_encoder_has_no_informative_latents() {
        let spec = FactorSpec::from_cardinalities(&[3, 3]).unwrap();
        let grid = make_factor_grid(&spec, GridMode::Full).unwrap();
        let resp = simulate_encoder(&grid, &EncoderConfig::disentangled(&[], 4, 1)).unwrap();
        assert!(resp.kl().iter().all(|&k| k < KL_THRESHOLD));
        assert_eq!(informative_mask(resp.kl()).unwrap().1, 0);
    }

    #[test]
    fn encoder_is_deterministic_and_matches_oracle() {
        let spec = FactorSpec::from_cardinalities(&[3, 4, 5]).unwrap();
        let grid = make_factor_grid(&spec, GridMode::UniformSample { n: 50, seed: 9 }).unwrap();
        let level = QualityLevel { mixing_angle: 0.3, noise_sd: 0.1, dead_latent_count: 2 };
        let cfg = population_member(&spec, &level, &PopulationOptions::new(5), 77).unwrap();
        let a = simulate_encoder(&grid, &cfg).unwrap();
        let b = simulate_encoder(&grid, &cfg).unwrap();
        assert_eq!(a, b);
        let enc = SimulatedEncoder::new(spec, cfg).unwrap();
        let mut out = vec![0.0; 5];
        enc.encode_into(grid.row(7), &mut out);
        assert_eq!(out.as_slice(), a.values().row(7).as_slice().unwrap());
    }

    #[test]
    fn config_validation() {
        let mut cfg = EncoderConfig::disentangled(&[0, 1], 1, 0);
        assert!(cfg.validate(2).is_ok());
        assert!(cfg.validate(1).is_err());
        cfg.kl_dead_range = (0.0, 0.02);
        assert!(cfg.validate(2).is_err());
        let mut cfg = EncoderConfig::disentangled(&[0, 1], 1, 0);
        cfg.slots = vec![0, 0];
        assert!(cfg.validate(2).is_err());
        let mut cfg = EncoderConfig::disentangled(&[0, 1], 1, 0);
        cfg.mixing_angle = 1.0;
        assert!(cfg.validate(2).is_err());
    }

    #[test]
    fn population_shape_and_sharing() {
        let spec = FactorSpec::from_cardinalities(&[3, 4, 5, 6]).unwrap();
        let grid = make_factor_grid(&spec, GridMode::UniformSample { n: 200, seed: 1 }).unwrap();
        let schedule = QualityLevel::sweep(6, 6, 4);
        let set = simulate_population(&grid, &schedule, 10, &PopulationOptions::new(6), 42).unwrap();
        assert_eq!(set.len(), 60);
        let single = simulate_population(&grid, &schedule[..1], 1, &PopulationOptions::new(6), 42)
            .unwrap();
        assert_eq!(single.len(), 1);
        let p = |i: usize| set.records()[i].provenance.as_ref().unwrap();
        assert_eq!(p(0).encoder.mixing_angle, p(9).encoder.mixing_angle);
        assert_ne!(p(0).encoder.rng_seed, p(1).encoder.rng_seed);
        assert!(p(59).quality > p(0).quality);
        for r in set.records() {
            let (mask, _) = informative_mask(r.response.kl()).unwrap();
            let enc = &r.provenance.as_ref().unwrap().encoder;
            let mut expected = vec![false; 6];
            enc.slots.iter().for_each(|&s| expected[s] = true);
            assert_eq!(mask, expected);
        }
    }

    #[test]
    fn orthogonal_mixing_is_orthogonal() {
        let m = random_orthogonal(5, 3);
        for i in 0..5 {
            for j in 0..5 {
                let d: f64 = (0..5).map(|k| m[i * 5 + k] * m[j * 5 + k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
