//! Budget sweep comparing the three retrieval methods, plus the quality
//! metrics used to score them.
//!
//! - `bimetric-ours`: proxy search seeds a budgeted ground-truth graph search
//!   on the proxy-built graph.
//! - `bimetric-baseline`: exact proxy top-`Q`, re-ranked under `D`.
//! - `single-metric`: budgeted ground-truth search on a graph built with `D`
//!   (build-time `D` calls are not counted).

mod synth;
mod truth;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use synth::{diagonal_factors, generate, instance_seed, Distortion, SynthParams};
pub use truth::{cache_path, dataset_hash, load_or_compute, top_k_by, GroundTruth};

use crate::anngraph::{
    build_alpha_graph, default_stage1_beam, stage_one, stage_two, ReachabilityGraph, StartMode,
    DEFAULT_ALPHA, DEFAULT_MAX_OUTDEGREE,
};
use crate::dataset::{BiMetricDataset, Dedup, Qrels};
use crate::metric::{euclidean, CountingOracle, DistanceOracle, OracleKind, PointRef};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "dataset",
    "method",
    "Q",
    "ndcg_at_10",
    "recall_at_10",
    "mean_calls_D",
    "mean_calls_d",
    "wall_seconds",
];

pub const ABLATION_CSV_HEADER: [&str; 9] = [
    "dataset",
    "method",
    "start_mode",
    "Q",
    "ndcg_at_10",
    "recall_at_10",
    "mean_calls_D",
    "mean_calls_d",
    "wall_seconds",
];

/// Scores are always reported at this cutoff.
pub const EVAL_K: usize = 10;

/// `|result[..k] ∩ truth[..k]| / k`.
pub fn recall_at_k(result: &[u32], truth: &[u32], k: usize) -> Result<f64> {
    if k == 0 || k > truth.len() {
        return Err(Error::Parameter(format!(
            "recall@{k} needs 1 <= k <= |truth| = {}",
            truth.len()
        )));
    }
    let truth = &truth[..k];
    let mut hits: Vec<u32> = result.iter().take(k).copied().filter(|r| truth.contains(r)).collect();
    hits.sort_unstable();
    hits.dedup();
    Ok(hits.len() as f64 / k as f64)
}

/// NDCG@k with gain `2^g - 1` and discount `log2(i + 1)` for 1-based rank `i`.
/// Returns 0 when no judged document has a positive grade.
pub fn ndcg_at_k(result: &[u32], grades: &BTreeMap<u32, u32>, k: usize) -> f64 {
    let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
    let discount = |rank: usize| ((rank + 1) as f64).log2();
    let dcg: f64 = result
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| gain(grades.get(id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "bimetric-ours")]
    Ours,
    #[serde(rename = "bimetric-baseline")]
    Baseline,
    #[serde(rename = "single-metric")]
    SingleMetric,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ours, Method::Baseline, Method::SingleMetric];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "bimetric-ours",
            Method::Baseline => "bimetric-baseline",
            Method::SingleMetric => "single-metric",
        }
    }

    /// Oracle the method's index is built with.
    pub fn index_oracle(self) -> OracleKind {
        match self {
            Method::SingleMetric => OracleKind::Truth,
            _ => OracleKind::Proxy,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodSpec {
    pub method: Method,
    /// Only used by [`Method::Ours`].
    pub start_mode: StartMode,
    pub k: usize,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            start_mode: StartMode::HalfBudget,
            k: EVAL_K,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub alpha: f64,
    /// `None` builds the uncapped graph.
    pub cap: Option<usize>,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            cap: Some(DEFAULT_MAX_OUTDEGREE),
        }
    }
}

/// One query's answer in original corpus ids.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub ids: Vec<u32>,
    pub calls_truth: u64,
    pub calls_proxy: u64,
}

#[derive(Debug)]
struct StageOne {
    /// Expanded nodes in proxy order.
    ranking: Vec<u32>,
    proxy_calls: u64,
}

/// Everything needed to run the methods on one dataset: the deduplicated
/// corpus, its indices, ground truth, and per-query proxy results shared
/// across methods and budgets.
pub struct Bench {
    pub tag: String,
    original: BiMetricDataset,
    reduced: BiMetricDataset,
    dedup: Dedup,
    proxy_graph: ReachabilityGraph,
    truth_graph: Option<ReachabilityGraph>,
    truth: GroundTruth,
    qrels: Qrels,
    stage1_beam: usize,
    stage2_beam: Option<usize>,
    stage1_cache: Mutex<HashMap<(u32, usize), Arc<StageOne>>>,
    proxy_rank_cache: Mutex<HashMap<u32, Arc<Vec<u32>>>>,
}

impl Bench {
    /// `proxy_graph` (and `truth_graph`, if any) must index the deduplicated
    /// corpus of `dataset`. `truth` is computed when absent. Missing qrels
    /// are replaced by the top-10 ground truth with grade 1.
    pub fn new(
        tag: impl Into<String>,
        dataset: BiMetricDataset,
        proxy_graph: ReachabilityGraph,
        truth_graph: Option<ReachabilityGraph>,
        truth: Option<GroundTruth>,
    ) -> Result<Self> {
        let (reduced, dedup) = dataset.dedup();
        let n = reduced.corpus_len();
        for (name, g) in [("proxy", Some(&proxy_graph)), ("truth", truth_graph.as_ref())] {
            if let Some(g) = g {
                if g.len() != n {
                    return Err(Error::Config(format!(
                        "{name} graph has {} nodes but the deduplicated corpus has {n} points",
                        g.len()
                    )));
                }
            }
        }
        let k = EVAL_K.min(dataset.corpus_len());
        let truth = match truth {
            Some(t) if t.rows.len() == dataset.query_len() && t.k >= k => t,
            Some(t) => {
                return Err(Error::Config(format!(
                    "ground truth covers {} queries at k = {}, dataset has {} queries (k = {k} needed)",
                    t.rows.len(),
                    t.k,
                    dataset.query_len()
                )))
            }
            None => GroundTruth::of_dataset(&dataset, k),
        };
        let qrels = if dataset.qrels.is_empty() {
            truth.to_qrels(EVAL_K)
        } else {
            dataset.qrels.clone()
        };
        Ok(Self {
            tag: tag.into(),
            stage1_beam: default_stage1_beam(dataset.corpus_len()),
            stage2_beam: None,
            original: dataset,
            reduced,
            dedup,
            proxy_graph,
            truth_graph,
            truth,
            qrels,
            stage1_cache: Mutex::new(HashMap::new()),
            proxy_rank_cache: Mutex::new(HashMap::new()),
        })
    }

    /// Builds the proxy graph, and the ground-truth graph when
    /// `with_truth_graph` is set, then assembles the bench.
    pub fn build(
        tag: impl Into<String>,
        dataset: BiMetricDataset,
        params: BuildParams,
        with_truth_graph: bool,
    ) -> Result<Self> {
        let (reduced, _) = dataset.dedup();
        let proxy_graph = build_alpha_graph(
            &DistanceOracle::new(OracleKind::Proxy, &reduced.corpus_proxy),
            params.alpha,
            params.cap,
        )?;
        let truth_graph = if with_truth_graph {
            Some(build_alpha_graph(
                &DistanceOracle::new(OracleKind::Truth, &reduced.corpus_truth),
                params.alpha,
                params.cap,
            )?)
        } else {
            None
        };
        Self::new(tag, dataset, proxy_graph, truth_graph, None)
    }

    pub fn with_stage1_beam(mut self, beam: usize) -> Self {
        self.stage1_beam = beam.max(1);
        self.stage1_cache.get_mut().unwrap().clear();
        self
    }

    pub fn with_stage2_beam(mut self, beam: Option<usize>) -> Self {
        self.stage2_beam = beam;
        self
    }

    pub fn dataset(&self) -> &BiMetricDataset {
        &self.original
    }

    pub fn reduced(&self) -> &BiMetricDataset {
        &self.reduced
    }

    pub fn dedup_map(&self) -> &Dedup {
        &self.dedup
    }

    pub fn proxy_graph(&self) -> &ReachabilityGraph {
        &self.proxy_graph
    }

    pub fn truth_graph(&self) -> Option<&ReachabilityGraph> {
        self.truth_graph.as_ref()
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn qrels(&self) -> &Qrels {
        &self.qrels
    }

    fn proxy_oracle(&self) -> DistanceOracle<'_> {
        DistanceOracle::new(OracleKind::Proxy, &self.reduced.corpus_proxy).with_queries(&self.reduced.queries_proxy)
    }

    fn truth_oracle(&self) -> DistanceOracle<'_> {
        DistanceOracle::new(OracleKind::Truth, &self.reduced.corpus_truth).with_queries(&self.reduced.queries_truth)
    }

    fn stage1(&self, query: u32, beam: usize) -> Result<Arc<StageOne>> {
        if let Some(hit) = self.stage1_cache.lock().unwrap().get(&(query, beam)) {
            return Ok(Arc::clone(hit));
        }
        let proxy = CountingOracle::proxy(self.proxy_oracle());
        let trace = stage_one(&self.proxy_graph, &proxy, PointRef::Query(query), beam)?;
        let entry = Arc::new(StageOne {
            ranking: trace.visited.iter().map(|&(id, _)| id).collect(),
            proxy_calls: trace.proxy_calls,
        });
        self.stage1_cache
            .lock()
            .unwrap()
            .insert((query, beam), Arc::clone(&entry));
        Ok(entry)
    }

    /// Exact proxy ranking of the whole (deduplicated) corpus.
    fn proxy_ranking(&self, query: u32) -> Arc<Vec<u32>> {
        if let Some(hit) = self.proxy_rank_cache.lock().unwrap().get(&query) {
            return Arc::clone(hit);
        }
        let qv = self.reduced.queries_proxy.get(query as usize);
        let dists: Vec<f64> = self.reduced.corpus_proxy.iter().map(|p| euclidean(qv, p)).collect();
        let ranking = Arc::new(top_k_by(&dists, dists.len()).into_iter().map(|(id, _)| id).collect());
        self.proxy_rank_cache
            .lock()
            .unwrap()
            .insert(query, Arc::clone(&ranking));
        ranking
    }

    /// Runs one method on one query with ground-truth budget `budget`.
    pub fn run_query(&self, spec: &MethodSpec, budget: u64, query: u32) -> Result<QueryOutcome> {
        if (budget as usize) < spec.k {
            return Err(Error::Parameter(format!("budget {budget} smaller than k = {}", spec.k)));
        }
        if query as usize >= self.reduced.query_len() {
            return Err(Error::Parameter(format!("query {query} out of range")));
        }
        let truth = CountingOracle::truth(self.truth_oracle(), Some(budget));
        let q = PointRef::Query(query);
        let beam = self.stage2_beam.unwrap_or(budget as usize).max(spec.k);
        let (ranked, calls_proxy): (Vec<u32>, u64) = match spec.method {
            Method::Ours => {
                let (starts, calls_proxy) = match spec.start_mode.start_count(budget) {
                    None => (vec![self.proxy_graph.start_node()], 0),
                    Some(count) => {
                        let s1 = self.stage1(query, self.stage1_beam.max(count))?;
                        (s1.ranking.iter().take(count).copied().collect(), s1.proxy_calls)
                    }
                };
                let trace = stage_two(&self.proxy_graph, &truth, q, &starts, beam)?;
                (trace.top(spec.k), calls_proxy)
            }
            Method::Baseline => {
                let ranking = self.proxy_ranking(query);
                let mut scored = Vec::new();
                for &id in ranking.iter().take(budget as usize) {
                    scored.push((id, truth.distance(q, id)?));
                }
                scored.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                (
                    scored.into_iter().take(spec.k).map(|(id, _)| id).collect(),
                    ranking.len() as u64,
                )
            }
            Method::SingleMetric => {
                let graph = self.truth_graph.as_ref().ok_or_else(|| {
                    Error::Config("single-metric needs a graph built with the ground-truth metric".into())
                })?;
                let trace = stage_two(graph, &truth, q, &[graph.start_node()], beam)?;
                (trace.top(spec.k), 0)
            }
        };
        Ok(QueryOutcome {
            ids: self.dedup.expand(&ranked, spec.k),
            calls_truth: truth.calls(),
            calls_proxy,
        })
    }

    /// Runs one method on every query, in parallel.
    pub fn run_method(&self, spec: &MethodSpec, budget: u64) -> Result<Vec<QueryOutcome>> {
        (0..self.reduced.query_len() as u32)
            .into_par_iter()
            .map(|q| self.run_query(spec, budget, q))
            .collect()
    }

    /// Mean Recall@10 and NDCG@10 of `outcomes` (one per query).
    pub fn score(&self, outcomes: &[QueryOutcome]) -> Result<(f64, f64)> {
        let empty = BTreeMap::new();
        let k = EVAL_K.min(self.truth.k);
        let mut recall = 0.0;
        let mut ndcg = 0.0;
        for (q, out) in outcomes.iter().enumerate() {
            recall += recall_at_k(&out.ids, &self.truth.ids(q), k)?;
            ndcg += ndcg_at_k(&out.ids, self.qrels.get(&(q as u32)).unwrap_or(&empty), EVAL_K);
        }
        let m = outcomes.len().max(1) as f64;
        Ok((ndcg / m, recall / m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub method: Method,
    pub start_mode: StartMode,
    #[serde(rename = "Q")]
    pub q: u64,
    pub ndcg_at_10: f64,
    pub recall_at_10: f64,
    #[serde(rename = "mean_calls_D")]
    pub mean_calls_truth: f64,
    #[serde(rename = "mean_calls_d")]
    pub mean_calls_proxy: f64,
    pub wall_seconds: f64,
    /// Largest per-query ground-truth call count in the cell.
    #[serde(rename = "max_calls_D")]
    pub max_calls_truth: u64,
}

impl SweepRow {
    fn fields(&self) -> [String; 7] {
        [
            self.q.to_string(),
            self.ndcg_at_10.to_string(),
            self.recall_at_10.to_string(),
            self.mean_calls_truth.to_string(),
            self.mean_calls_proxy.to_string(),
            self.wall_seconds.to_string(),
            self.start_mode.label(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepOptions {
    /// Record wall-clock time per cell. Off by default so repeated runs give
    /// identical CSV bytes.
    pub timing: bool,
}

/// Runs every `(method, Q)` cell; cells run one after another, queries within
/// a cell in parallel.
pub fn sweep(bench: &Bench, methods: &[MethodSpec], budgets: &[u64], opts: SweepOptions) -> Result<Vec<SweepRow>> {
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(format!("budgets must be ascending, got {budgets:?}")));
    }
    let mut rows = Vec::with_capacity(methods.len() * budgets.len());
    for spec in methods {
        for &q in budgets {
            let t0 = Instant::now();
            let outcomes = bench.run_method(spec, q)?;
            let elapsed = t0.elapsed().as_secs_f64();
            let (ndcg, recall) = bench.score(&outcomes)?;
            let m = outcomes.len().max(1) as f64;
            let row = SweepRow {
                dataset: bench.tag.clone(),
                method: spec.method,
                start_mode: spec.start_mode,
                q,
                ndcg_at_10: ndcg,
                recall_at_10: recall,
                mean_calls_truth: outcomes.iter().map(|o| o.calls_truth as f64).sum::<f64>() / m,
                mean_calls_proxy: outcomes.iter().map(|o| o.calls_proxy as f64).sum::<f64>() / m,
                wall_seconds: if opts.timing { elapsed } else { 0.0 },
                max_calls_truth: outcomes.iter().map(|o| o.calls_truth).max().unwrap_or(0),
            };
            log::info!(
                "{} {} Q={} ndcg@10={:.4} recall@10={:.4} calls_D={:.1}",
                row.dataset,
                row.method,
                q,
                row.ndcg_at_10,
                row.recall_at_10,
                row.mean_calls_truth
            );
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Errors if any cell spent more ground-truth calls on a query than its budget.
pub fn check_budget(rows: &[SweepRow]) -> Result<()> {
    match rows.iter().find(|r| r.max_calls_truth > r.q || r.mean_calls_truth > r.q as f64) {
        Some(r) => Err(Error::Stats(format!(
            "{} {} Q={}: a query used {} ground-truth calls",
            r.dataset, r.method, r.q, r.max_calls_truth
        ))),
        None => Ok(()),
    }
}

/// Writes the sweep CSV with the fixed header.
pub fn write_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        let [q, ndcg, recall, cd, cp, wall, _] = r.fields();
        out.write_record([r.dataset.as_str(), r.method.name(), &q, &ndcg, &recall, &cd, &cp, &wall])?;
    }
    out.flush()?;
    Ok(())
}

/// Same as [`write_csv`] with an extra `start_mode` column.
pub fn write_ablation_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ABLATION_CSV_HEADER)?;
    for r in rows {
        let [q, ndcg, recall, cd, cp, wall, mode] = r.fields();
        out.write_record([r.dataset.as_str(), r.method.name(), &mode, &q, &ndcg, &recall, &cd, &cp, &wall])?;
    }
    out.flush()?;
    Ok(())
}

/// Start modes compared in the initialization ablation.
pub fn ablation_modes() -> [StartMode; 4] {
    [
        StartMode::HalfBudget,
        StartMode::FixedK(100),
        StartMode::FixedK(1),
        StartMode::DefaultEntry,
    ]
}
