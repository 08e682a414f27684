//! Embedding sets, relevance judgments and dataset statistics.
//!
//! Vectors are read from classic `fvecs` files: every record is a
//! little-endian `i32` dimension followed by that many little-endian `f32`
//! components. Relevance judgments are TREC-style TSV lines
//! `query_id<TAB>doc_id<TAB>grade`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metric::euclidean;
use crate::{Error, Result};

/// Datasets up to this size get exact all-pairs statistics.
pub const EXACT_STATS_LIMIT: usize = 2000;

/// A dense `count × dim` matrix of finite `f32` vectors, stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(Error::Dataset("dim 0 with non-empty data".into()));
            }
            return Ok(Self::default());
        }
        if data.len() % dim != 0 {
            return Err(Error::Dataset(format!(
                "{} components is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "non-finite component in vector {}",
                pos / dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Ok(Self::default());
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dataset(format!(
                    "row {i} has dim {} but row 0 has dim {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        // `chunks_exact(0)` panics, so guard the empty case.
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Rows `ids` in the given order.
    pub fn select(&self, ids: &[u32]) -> Self {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            data.extend_from_slice(self.get(id as usize));
        }
        Self {
            dim: if ids.is_empty() { 0 } else { self.dim },
            data,
        }
    }
}

pub fn read_fvecs<R: Read>(mut reader: R) -> Result<EmbeddingSet> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    parse_fvecs(&bytes)
}

fn parse_fvecs(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut offset = 0usize;
    let mut dim: Option<usize> = None;
    let mut data = Vec::new();
    while offset < bytes.len() {
        let fmt = |message: String| Error::Format {
            offset: offset as u64,
            message,
        };
        if bytes.len() - offset < 4 {
            return Err(fmt("truncated dimension prefix".into()));
        }
        let raw = i32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        if raw <= 0 {
            return Err(fmt(format!("record dimension {raw} must be positive")));
        }
        let d = raw as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(fmt(format!(
                    "inconsistent dimension: expected {expected}, found {d}"
                )));
            }
            Some(_) => {}
        }
        let need = 4 + 4 * d;
        if bytes.len() - offset < need {
            return Err(fmt(format!(
                "truncated record: need {need} bytes, {} left",
                bytes.len() - offset
            )));
        }
        for chunk in bytes[offset + 4..offset + need].chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(fmt("non-finite component".into()));
            }
            data.push(v);
        }
        offset += need;
    }
    EmbeddingSet::new(dim.unwrap_or(0), data)
}

pub fn write_fvecs<W: Write>(mut writer: W, set: &EmbeddingSet) -> Result<()> {
    let dim = set.dim() as i32;
    for row in set.iter().take(set.len()) {
        writer.write_all(&dim.to_le_bytes())?;
        for v in row {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_fvecs(BufReader::new(file))
}

pub fn save_fvecs(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_fvecs(BufWriter::new(file), set)
}

/// `query_id → doc_id → grade`.
pub type Qrels = BTreeMap<u32, BTreeMap<u32, u32>>;

pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let int = |s: &str, what: &str| -> Result<i64> {
            s.trim().parse::<i64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{what} {s:?} is not an integer"),
            })
        };
        let query = int(fields[0], "query_id")?;
        let doc = int(fields[1], "doc_id")?;
        let grade = int(fields[2], "grade")?;
        if grade < 0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("negative grade {grade}"),
            });
        }
        let to_u32 = |v: i64, what: &str| -> Result<u32> {
            u32::try_from(v).map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{what} {v} out of range"),
            })
        };
        let entry = qrels
            .entry(to_u32(query, "query_id")?)
            .or_default()
            .entry(to_u32(doc, "doc_id")?)
            .or_insert(0);
        *entry = (*entry).max(to_u32(grade, "grade")?);
    }
    Ok(qrels)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text)
}

pub fn save_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (q, row) in qrels {
        for (doc, grade) in row {
            out.push_str(&format!("{q}\t{doc}\t{grade}\n"));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Corpus and queries embedded twice: once by the proxy model, once by the
/// ground-truth model.
#[derive(Debug, Clone)]
pub struct BiMetricDataset {
    pub corpus_proxy: EmbeddingSet,
    pub corpus_truth: EmbeddingSet,
    pub queries_proxy: EmbeddingSet,
    pub queries_truth: EmbeddingSet,
    pub qrels: Qrels,
}

impl BiMetricDataset {
    pub fn new(
        corpus_proxy: EmbeddingSet,
        corpus_truth: EmbeddingSet,
        queries_proxy: EmbeddingSet,
        queries_truth: EmbeddingSet,
        qrels: Qrels,
    ) -> Result<Self> {
        if corpus_proxy.len() != corpus_truth.len() {
            return Err(Error::Dataset(format!(
                "corpus size mismatch: proxy {} vs truth {}",
                corpus_proxy.len(),
                corpus_truth.len()
            )));
        }
        if queries_proxy.len() != queries_truth.len() {
            return Err(Error::Dataset(format!(
                "query count mismatch: proxy {} vs truth {}",
                queries_proxy.len(),
                queries_truth.len()
            )));
        }
        for (&q, row) in &qrels {
            if q as usize >= queries_proxy.len() {
                return Err(Error::Dataset(format!(
                    "qrels query_id {q} >= query count {}",
                    queries_proxy.len()
                )));
            }
            if let Some((&doc, _)) = row.iter().next_back() {
                if doc as usize >= corpus_proxy.len() {
                    return Err(Error::Dataset(format!(
                        "qrels doc_id {doc} >= corpus size {}",
                        corpus_proxy.len()
                    )));
                }
            }
        }
        Ok(Self {
            corpus_proxy,
            corpus_truth,
            queries_proxy,
            queries_truth,
            qrels,
        })
    }

    pub fn corpus_len(&self) -> usize {
        self.corpus_proxy.len()
    }

    pub fn query_len(&self) -> usize {
        self.queries_proxy.len()
    }

    /// Collapses corpus points whose proxy AND truth vectors are bitwise
    /// identical. Returns the reduced dataset (qrels dropped, they refer to
    /// original ids) and the mapping back.
    pub fn dedup(&self) -> (BiMetricDataset, Dedup) {
        let dedup = Dedup::of(&self.corpus_proxy, &self.corpus_truth);
        let reduced = BiMetricDataset {
            corpus_proxy: self.corpus_proxy.select(&dedup.representatives),
            corpus_truth: self.corpus_truth.select(&dedup.representatives),
            queries_proxy: self.queries_proxy.clone(),
            queries_truth: self.queries_truth.clone(),
            qrels: Qrels::new(),
        };
        (reduced, dedup)
    }
}

/// Mapping between a corpus and its duplicate-free representative subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dedup {
    /// Original id of every representative, ascending.
    pub representatives: Vec<u32>,
    /// Original ids collapsed into each representative, ascending; the first
    /// entry is the representative itself.
    pub members: Vec<Vec<u32>>,
}

impl Dedup {
    pub fn of(proxy: &EmbeddingSet, truth: &EmbeddingSet) -> Self {
        let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut representatives = Vec::new();
        let mut members: Vec<Vec<u32>> = Vec::new();
        for i in 0..proxy.len() {
            let key: Vec<u32> = proxy
                .get(i)
                .iter()
                .chain(truth.get(i))
                .map(|v| v.to_bits())
                .collect();
            match seen.get(&key) {
                Some(&slot) => members[slot].push(i as u32),
                None => {
                    seen.insert(key, representatives.len());
                    representatives.push(i as u32);
                    members.push(vec![i as u32]);
                }
            }
        }
        Self {
            representatives,
            members,
        }
    }

    pub fn has_duplicates(&self) -> bool {
        self.members.iter().any(|m| m.len() > 1)
    }

    /// Maps a ranked list of representative indices to original ids, placing
    /// each representative's duplicates right after it, truncated to `k`.
    pub fn expand(&self, ranked: &[u32], k: usize) -> Vec<u32> {
        ranked
            .iter()
            .flat_map(|&r| self.members[r as usize].iter().copied())
            .take(k)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n: usize,
    /// Diameter over closest nonzero pair.
    pub delta_d: f64,
    pub lambda_d_estimate: f64,
    /// Smallest `C` with `s·d <= D <= C·s·d` on the checked pairs (1 when no
    /// ground-truth set was supplied).
    pub c_hat: f64,
    /// False when `delta_d` and `c_hat` come from sampled pairs.
    pub exact: bool,
}

/// Computes aspect ratio, a packing-based doubling dimension estimate and,
/// when `truth` is given, the approximation factor between the two spaces.
///
/// Up to [`EXACT_STATS_LIMIT`] points every pair is examined; above that
/// `sample_pairs` uniform random pairs are used.
pub fn compute_stats(
    points: &EmbeddingSet,
    truth: Option<&EmbeddingSet>,
    sample_pairs: usize,
    seed: u64,
) -> Result<DatasetStats> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Stats(format!("need at least 2 points, got {n}")));
    }
    if let Some(t) = truth {
        if t.len() != n {
            return Err(Error::Stats(format!(
                "truth set has {} points, proxy set {n}",
                t.len()
            )));
        }
    }
    let exact = n <= EXACT_STATS_LIMIT;
    let mut rng = crate::seed::rng(seed, "stats-pairs");
    let pairs: Vec<(usize, usize)> = if exact {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect()
    } else {
        (0..sample_pairs.max(1))
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect()
    };

    let mut max_d = 0.0f64;
    let mut min_d = f64::INFINITY;
    let mut ratio_lo = f64::INFINITY;
    let mut ratio_hi = 0.0f64;
    for &(i, j) in &pairs {
        let d = euclidean(points.get(i), points.get(j));
        max_d = max_d.max(d);
        if d > 0.0 {
            min_d = min_d.min(d);
            if let Some(t) = truth {
                let big = euclidean(t.get(i), t.get(j));
                ratio_lo = ratio_lo.min(big / d);
                ratio_hi = ratio_hi.max(big / d);
            }
        } else if let Some(t) = truth {
            if euclidean(t.get(i), t.get(j)) > 0.0 {
                ratio_hi = f64::INFINITY;
            }
        }
    }
    if max_d == 0.0 {
        return Err(Error::Stats("zero diameter".into()));
    }
    let c_hat = if truth.is_some() && ratio_lo.is_finite() && ratio_lo > 0.0 {
        (ratio_hi / ratio_lo).max(1.0)
    } else if truth.is_some() && ratio_hi.is_infinite() {
        f64::INFINITY
    } else {
        1.0
    };

    let lambda = estimate_doubling_dimension(points, min_d, max_d, &mut rng);
    Ok(DatasetStats {
        n,
        delta_d: max_d / min_d,
        lambda_d_estimate: lambda,
        c_hat,
        exact,
    })
}

/// Max over sampled centers `p` and a geometric grid of radii `r` of
/// `log2 |greedy r-packing of B(p, 2r)|`.
fn estimate_doubling_dimension(
    points: &EmbeddingSet,
    min_d: f64,
    max_d: f64,
    rng: &mut impl Rng,
) -> f64 {
    const CENTERS: usize = 32;
    let n = points.len();
    let centers: Vec<usize> = if n <= CENTERS {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, CENTERS).into_vec()
    };
    let mut radii = Vec::new();
    let mut r = min_d / 2.0;
    while r <= max_d {
        radii.push(r);
        r *= 2.0;
    }
    radii.push(max_d);

    let mut best = 0.0f64;
    for &c in &centers {
        let dist: Vec<f64> = (0..n)
            .map(|j| euclidean(points.get(c), points.get(j)))
            .collect();
        for &r in &radii {
            let ball: Vec<usize> = (0..n).filter(|&j| dist[j] <= 2.0 * r).collect();
            let mut packing: Vec<usize> = Vec::new();
            for &x in &ball {
                if packing
                    .iter()
                    .all(|&p| euclidean(points.get(p), points.get(x)) > r)
                {
                    packing.push(x);
                }
            }
            best = best.max((packing.len() as f64).log2());
        }
    }
    best
}
