//! On-disk formats: the JSON model-set manifest with its raw binary payloads,
//! CSV import of latent values, and the score table CSV.
//!
//! Latent values are stored as little-endian `f64`, row-major, `N x L`, one
//! file per model. Factor assignments are little-endian `i32`, row-major,
//! `N x K`. A `values_file` ending in `.csv` is parsed as comma-separated text
//! instead, for interoperability with other tools.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Factor, FactorGrid, FactorSpec, LatentResponse, ModelRecord, ModelSet, Provenance, ScoreRow,
    ScoreTable,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const ASSIGNMENTS_FILE: &str = "factors.i32";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    n_samples: usize,
    n_latents: usize,
    records: Vec<ManifestRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factor_grid: Option<ManifestGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_ids: Option<Vec<u64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    model_id: String,
    hyper_index: usize,
    seed_index: usize,
    values_file: String,
    kl: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestGrid {
    spec: Vec<Factor>,
    assignments_file: String,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads and fully validates a model set from its manifest.
pub fn load_model_set(manifest_path: impl AsRef<Path>) -> Result<ModelSet> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let (n, l) = (manifest.n_samples, manifest.n_latents);

    let sample_ids = match manifest.sample_ids {
        Some(ids) => ids,
        None => (0..n as u64).collect(),
    };

    let mut records = Vec::with_capacity(manifest.records.len());
    for rec in manifest.records {
        let kl = rec
            .kl
            .ok_or_else(|| malformed(path, format!("record `{}` has no kl vector", rec.model_id)))?;
        let values_path = base.join(&rec.values_file);
        let values = if rec.values_file.ends_with(".csv") {
            read_values_csv(&values_path)?
        } else {
            read_f64_matrix(&values_path, n, l)?
        };
        if values.dim() != (n, l) {
            return Err(Error::Dimension(format!(
                "record `{}` values are {:?}, manifest says {n}x{l}",
                rec.model_id,
                values.dim()
            )));
        }
        let response = LatentResponse::with_sample_ids(values, kl, sample_ids.clone())
            .map_err(|e| match e {
                Error::Dimension(m) => Error::Dimension(format!("record `{}`: {m}", rec.model_id)),
                other => other,
            })?;
        let mut record = ModelRecord::new(rec.model_id, rec.hyper_index, rec.seed_index, response);
        record.provenance = rec.provenance;
        records.push(record);
    }

    let grid = match manifest.factor_grid {
        Some(g) => {
            let spec = FactorSpec::new(g.spec)?;
            let k = spec.n_factors();
            let assignments = read_i32_matrix(&base.join(&g.assignments_file), n, k)?;
            Some(FactorGrid::new(spec, assignments)?)
        }
        None => None,
    };
    ModelSet::new(records, grid)
}

/// Writes `set` into `dir` and returns the manifest path.
pub fn save_model_set(set: &ModelSet, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = set.n_samples().unwrap_or(0);
    let l = set.n_latents().unwrap_or(0);

    let mut records = Vec::with_capacity(set.len());
    for (i, rec) in set.records().iter().enumerate() {
        let file = format!("values_{i:05}.f64");
        write_f64_matrix(&dir.join(&file), rec.response.values())?;
        records.push(ManifestRecord {
            model_id: rec.model_id.clone(),
            hyper_index: rec.hyper_index,
            seed_index: rec.seed_index,
            values_file: file,
            kl: Some(rec.response.kl().to_vec()),
            provenance: rec.provenance.clone(),
        });
    }

    let factor_grid = match set.factor_grid() {
        Some(grid) => {
            write_i32_matrix(&dir.join(ASSIGNMENTS_FILE), grid.assignments())?;
            Some(ManifestGrid {
                spec: grid.spec().factors().to_vec(),
                assignments_file: ASSIGNMENTS_FILE.into(),
            })
        }
        None => None,
    };

    let sample_ids = set.records().first().and_then(|r| {
        let ids = r.response.sample_ids();
        let default = ids.iter().enumerate().all(|(i, &id)| id == i as u64);
        (!default).then(|| ids.to_vec())
    });

    let manifest = Manifest {
        n_samples: n,
        n_latents: l,
        records,
        factor_grid,
        sample_ids,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn read_exact_len(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::Dimension(format!(
            "{} holds {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

pub fn read_f64_matrix(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let bytes = read_exact_len(path, rows * cols * 8)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

pub fn write_f64_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_i32_matrix(path: &Path, rows: usize, cols: usize) -> Result<Array2<i32>> {
    let bytes = read_exact_len(path, rows * cols * 4)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

pub fn write_i32_matrix(path: &Path, m: &Array2<i32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an `N x L` matrix from CSV. A leading non-numeric row is treated as a header.
pub fn read_values_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::LatentResponse(format!(
                    "{} line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension(format!("{}: ragged rows", path.display())));
    }
    let n = rows.len();
    Ok(Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .expect("rectangular"))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvScoreRow {
    model_id: String,
    hyper_index: usize,
    seed_index: usize,
    metric: String,
    score: f64,
    d: usize,
}

/// Writes `model_id,hyper_index,seed_index,metric,score,d`.
pub fn write_score_table(table: &ScoreTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in table.rows() {
        w.serialize(CsvScoreRow {
            model_id: r.model_id.clone(),
            hyper_index: r.hyper_index,
            seed_index: r.seed_index,
            metric: r.metric.clone(),
            score: r.score,
            d: r.d,
        })?;
    }
    // Header only, so an empty table still round-trips.
    if table.rows().is_empty() {
        w.write_record(["model_id", "hyper_index", "seed_index", "metric", "score", "d"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_score_table(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let rows = r
        .deserialize::<CsvScoreRow>()
        .map(|row| {
            row.map(|c| ScoreRow {
                model_id: c.model_id,
                hyper_index: c.hyper_index,
                seed_index: c.seed_index,
                metric: c.metric,
                score: c.score,
                d: c.d,
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    ScoreTable::new(rows)
}
