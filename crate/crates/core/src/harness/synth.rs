//! Synthetic bi-metric instances.
//!
//! Points are drawn uniformly from the unit ball in `dim` dimensions and `D`
//! is plain Euclidean distance on them. Queries are held-out draws from the
//! same distribution. Two proxies are available, both Euclidean on a proxy
//! embedding and both satisfying `d <= D <= C·d` on every pair:
//!
//! - [`Distortion::Diagonal`]: `x -> a ⊙ x` with every `a_j` in `[1/C, 1]`.
//! - [`Distortion::FineNoise`]: `x -> (x / C, h(x))` where `h(x)` is a random
//!   vector of length `L·nn(x)/2`, `nn(x)` is the distance from `x` to its
//!   nearest other point and `L = sqrt(1 - 1/C²)`. Since
//!   `|h(x) - h(y)| <= L·(nn(x) + nn(y))/2 <= L·|x - y|`, the proxy keeps the
//!   coarse geometry but blurs the order of close neighbors.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::truth::GroundTruth;
use crate::dataset::{BiMetricDataset, EmbeddingSet};
use crate::metric::euclidean;
use crate::{seed, Error, Result};

/// Keeps the scale factors off the interval ends so that f32 rounding of the
/// stored vectors cannot push a pair outside `[1, C]`.
const END_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distortion {
    #[default]
    Diagonal,
    FineNoise,
}

impl std::str::FromStr for Distortion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(Distortion::Diagonal),
            "fine-noise" => Ok(Distortion::FineNoise),
            other => Err(Error::Parameter(format!(
                "unknown distortion {other:?} (expected diagonal or fine-noise)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    pub n_queries: usize,
    pub dim: usize,
    /// Target distortion `C >= 1`.
    pub c: f64,
    /// Judged neighbors per query (grade 1).
    pub qrels_k: usize,
    pub seed: u64,
    #[serde(default)]
    pub distortion: Distortion,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n: 10_000,
            n_queries: 100,
            dim: 8,
            c: 3.0,
            qrels_k: 10,
            seed: 0,
            distortion: Distortion::Diagonal,
        }
    }
}

/// Seed of the `index`-th synthetic instance under root seed `root`.
pub fn instance_seed(root: u64, index: u64) -> u64 {
    seed::derive(root, &format!("synth-instance-{index}"))
}

fn ball_point(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let dir = unit_vector(rng, dim);
    let radius = rng.random::<f64>().powf(1.0 / dim as f64);
    dir.into_iter().map(|v| v * radius).collect()
}

/// Per-coordinate proxy factors. With `dim >= 2` the two extremes are always
/// present so the full distortion range is realized.
pub fn diagonal_factors(dim: usize, c: f64, seed_root: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed_root, "synth-diagonal");
    let lo = (1.0 / c) * (1.0 + END_MARGIN);
    let hi = 1.0 - END_MARGIN;
    if c <= 1.0 + 2.0 * END_MARGIN {
        return vec![1.0; dim];
    }
    (0..dim)
        .map(|j| match j {
            0 => lo,
            1 => hi,
            _ => (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp(),
        })
        .collect()
}

pub fn generate(params: &SynthParams) -> Result<BiMetricDataset> {
    if params.dim == 0 || params.n == 0 {
        return Err(Error::Parameter("synthetic set needs n >= 1 and dim >= 1".into()));
    }
    if !(params.c >= 1.0) {
        return Err(Error::Parameter(format!("C must be >= 1, got {}", params.c)));
    }
    let dim = params.dim;
    let mut rng = seed::rng(params.seed, "synth-points");
    let total = params.n + params.n_queries;
    let mut truth = Vec::with_capacity(total * dim);
    for _ in 0..total {
        truth.extend(ball_point(&mut rng, dim).into_iter().map(|v| v as f32));
    }
    let proxy = match params.distortion {
        Distortion::Diagonal => {
            let a = diagonal_factors(dim, params.c, params.seed);
            truth
                .iter()
                .enumerate()
                .map(|(i, &v)| (a[i % dim] * v as f64) as f32)
                .collect::<Vec<f32>>()
        }
        Distortion::FineNoise => fine_noise_proxy(&truth, dim, params.c, params.seed),
    };
    let proxy_dim = proxy.len() / total;
    let split = |v: &[f32], d: usize| -> (EmbeddingSet, EmbeddingSet) {
        (
            EmbeddingSet::new(d, v[..params.n * d].to_vec()).expect("finite"),
            EmbeddingSet::new(d, v[params.n * d..].to_vec()).expect("finite"),
        )
    };
    let (corpus_truth, queries_truth) = split(&truth, dim);
    let (corpus_proxy, queries_proxy) = split(&proxy, proxy_dim);
    let qrels = GroundTruth::compute(&corpus_truth, &queries_truth, params.qrels_k.min(params.n))
        .to_qrels(params.qrels_k);
    BiMetricDataset::new(corpus_proxy, corpus_truth, queries_proxy, queries_truth, qrels)
}

/// Proxy rows of width `2·dim`: the shrunk point followed by its noise vector.
fn fine_noise_proxy(truth: &[f32], dim: usize, c: f64, seed_root: u64) -> Vec<f32> {
    let rows: Vec<&[f32]> = truth.chunks_exact(dim).collect();
    let nn: Vec<f64> = rows
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            rows.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| euclidean(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let shrink = (1.0 + END_MARGIN) / c;
    let lipschitz = (1.0 - 1.0 / (c * c)).max(0.0).sqrt() * (1.0 - END_MARGIN);
    let mut rng = seed::rng(seed_root, "synth-fine-noise");
    let mut out = Vec::with_capacity(rows.len() * dim * 2);
    for (p, &radius) in rows.iter().zip(&nn) {
        out.extend(p.iter().map(|&v| (shrink * v as f64) as f32));
        let radius = if radius.is_finite() { radius } else { 0.0 };
        let dir = unit_vector(&mut rng, dim);
        out.extend(dir.into_iter().map(|u| (u * lipschitz * radius / 2.0) as f32));
    }
    out
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return g.into_iter().map(|v| v / norm).collect();
        }
    }
}
