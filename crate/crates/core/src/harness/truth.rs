//! Brute-force ground truth under `D`, with an on-disk cache keyed by a hash
//! of the ground-truth embeddings.
//!
//! Cache layout (little endian): `b"BMGT"`, `n_queries: u32`, `k: u32`, then
//! per query `k` pairs of `(id: u32, distance: f64)`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{BiMetricDataset, EmbeddingSet, Qrels};
use crate::metric::euclidean;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"BMGT";

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub k: usize,
    /// Per query: the `k` closest corpus points under `D`, ties by id.
    pub rows: Vec<Vec<(u32, f64)>>,
}

/// Indices of the `k` smallest values, ascending by `(value, index)`.
pub fn top_k_by(values: &[f64], k: usize) -> Vec<(u32, f64)> {
    let mut idx: Vec<(u32, f64)> = values.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect();
    let cmp = |a: &(u32, f64), b: &(u32, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let k = k.min(idx.len());
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    } else if k == 0 {
        idx.clear();
    }
    idx.sort_unstable_by(cmp);
    idx
}

impl GroundTruth {
    pub fn compute(corpus: &EmbeddingSet, queries: &EmbeddingSet, k: usize) -> Self {
        let rows = (0..queries.len())
            .into_par_iter()
            .map(|q| {
                let qv = queries.get(q);
                let dists: Vec<f64> = corpus.iter().map(|p| euclidean(qv, p)).collect();
                top_k_by(&dists, k)
            })
            .collect();
        Self { k, rows }
    }

    pub fn of_dataset(data: &BiMetricDataset, k: usize) -> Self {
        Self::compute(&data.corpus_truth, &data.queries_truth, k)
    }

    pub fn ids(&self, query: usize) -> Vec<u32> {
        self.rows[query].iter().map(|&(id, _)| id).collect()
    }

    /// Top-`k` neighbors as relevance judgments with grade 1.
    pub fn to_qrels(&self, k: usize) -> Qrels {
        self.rows
            .iter()
            .enumerate()
            .map(|(q, row)| (q as u32, row.iter().take(k).map(|&(id, _)| (id, 1)).collect()))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows.len() as u32).to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        for row in &self.rows {
            if row.len() != self.k {
                return Err(Error::Parameter(format!(
                    "ground-truth row has {} entries, expected {}",
                    row.len(),
                    self.k
                )));
            }
            for &(id, dist) in row {
                w.write_all(&id.to_le_bytes())?;
                w.write_all(&dist.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let format = |offset: usize, message: &str| Error::Format {
            offset: offset as u64,
            message: message.to_string(),
        };
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(format(0, "not a ground-truth cache (bad magic or short header)"));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = 12 + n * k * 12;
        if bytes.len() != expected {
            return Err(format(
                bytes.len().min(expected),
                &format!("expected {expected} bytes for {n} queries x {k}, found {}", bytes.len()),
            ));
        }
        let mut rows = Vec::with_capacity(n);
        let mut at = 12;
        for _ in 0..n {
            let mut row = Vec::with_capacity(k);
            for _ in 0..k {
                let id = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
                let dist = f64::from_le_bytes(bytes[at + 4..at + 12].try_into().unwrap());
                row.push((id, dist));
                at += 12;
            }
            rows.push(row);
        }
        Ok(Self { k, rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Hex SHA-256 over the ground-truth corpus and query embeddings.
pub fn dataset_hash(data: &BiMetricDataset) -> String {
    let mut h = Sha256::new();
    for set in [&data.corpus_truth, &data.queries_truth] {
        h.update((set.dim() as u64).to_le_bytes());
        h.update((set.len() as u64).to_le_bytes());
        for v in set.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_path(dir: &Path, data: &BiMetricDataset, k: usize) -> PathBuf {
    dir.join(format!("{}-k{k}.bmgt", &dataset_hash(data)[..16]))
}

/// Loads the cached ground truth for `data`, computing and storing it on a
/// miss. Returns whether the cache was hit.
pub fn load_or_compute(data: &BiMetricDataset, k: usize, dir: &Path) -> Result<(GroundTruth, bool)> {
    let path = cache_path(dir, data, k);
    if path.exists() {
        let gt = GroundTruth::load(&path)?;
        if gt.k == k && gt.rows.len() == data.query_len() {
            return Ok((gt, true));
        }
        log::warn!("ignoring stale ground-truth cache {}", path.display());
    }
    let gt = GroundTruth::of_dataset(data, k);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    gt.save(&path)?;
    Ok((gt, false))
}
