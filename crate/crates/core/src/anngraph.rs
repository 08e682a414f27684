//! Alpha-shortcut reachability graphs and greedy search over them.
//!
//! [`build_alpha_graph`] is the slow-preprocessing DiskANN builder: each node
//! scans every other node in ascending distance and keeps a candidate unless
//! an already kept neighbor is `alpha` times closer to it. Uncapped, the
//! result is alpha-shortcut reachable from every node; capped, it is the
//! practical degree-bounded index used by the benchmark.
//!
//! [`greedy_search`] generalizes the single-candidate greedy walk to a beam;
//! `beam = 1` is the textbook procedure. [`two_stage_search`] is the
//! bi-metric query: a free proxy search picks the starting points, then a
//! budgeted ground-truth search walks the same graph.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metric::{CountingOracle, Metric, OracleError, OracleKind, PointRef};
use crate::{Error, Result};

/// Practical builder defaults.
pub const DEFAULT_ALPHA: f64 = 1.2;
pub const DEFAULT_MAX_OUTDEGREE: usize = 64;
/// First-stage query length for corpora above [`LARGE_CORPUS`] points.
pub const STAGE1_BEAM_LARGE: usize = 30_000;
pub const STAGE1_BEAM_DEFAULT: usize = 5_000;
pub const LARGE_CORPUS: usize = 1_000_000;

const MAGIC: &[u8; 4] = b"BMAG";
const VERSION: u32 = 1;

pub fn default_stage1_beam(corpus_len: usize) -> usize {
    if corpus_len > LARGE_CORPUS {
        STAGE1_BEAM_LARGE
    } else {
        STAGE1_BEAM_DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityGraph {
    alpha: f64,
    cap: Option<usize>,
    start: u32,
    adjacency: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub max_outdegree: usize,
    pub mean_outdegree: f64,
    pub start_node: u32,
}

impl ReachabilityGraph {
    /// Wraps an explicit adjacency; lists are sorted and deduplicated.
    pub fn from_adjacency(
        alpha: f64,
        cap: Option<usize>,
        start: u32,
        mut adjacency: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let n = adjacency.len();
        if n > 0 && start as usize >= n {
            return Err(Error::Parameter(format!("start node {start} >= {n}")));
        }
        for (p, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.binary_search(&(p as u32)).is_ok() {
                return Err(Error::Parameter(format!("self-loop on node {p}")));
            }
            if list.last().is_some_and(|&q| q as usize >= n) {
                return Err(Error::Parameter(format!("node {p} has an out-of-range neighbor")));
            }
        }
        Ok(Self {
            alpha,
            cap,
            start,
            adjacency,
        })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub fn start_node(&self) -> u32 {
        self.start
    }

    pub fn neighbors(&self, p: u32) -> &[u32] {
        &self.adjacency[p as usize]
    }

    pub fn has_edge(&self, p: u32, q: u32) -> bool {
        self.adjacency[p as usize].binary_search(&q).is_ok()
    }

    /// Removes `p → q`; returns whether it existed. Used to craft broken graphs.
    pub fn remove_edge(&mut self, p: u32, q: u32) -> bool {
        let list = &mut self.adjacency[p as usize];
        match list.binary_search(&q) {
            Ok(i) => {
                list.remove(i);
                true
            }
            Err(_) => false,
        }
    }

    pub fn stats(&self) -> GraphStats {
        let edges: usize = self.adjacency.iter().map(Vec::len).sum();
        GraphStats {
            nodes: self.len(),
            edges,
            max_outdegree: self.adjacency.iter().map(Vec::len).max().unwrap_or(0),
            mean_outdegree: if self.is_empty() {
                0.0
            } else {
                edges as f64 / self.len() as f64
            },
            start_node: self.start,
        }
    }

    /// `BMAG` layout, all little-endian: magic, version u32, n u32, alpha f64,
    /// cap u32 (0 = uncapped), start u32, then per node degree u32 + ids u32.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&(self.cap.unwrap_or(0) as u32).to_le_bytes())?;
        w.write_all(&self.start.to_le_bytes())?;
        for list in &self.adjacency {
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for id in list {
                w.write_all(&id.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "missing BMAG magic".into(),
            });
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported graph version {version}"),
            });
        }
        let n = cur.u32()? as usize;
        let alpha = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let cap = match cur.u32()? {
            0 => None,
            c => Some(c as usize),
        };
        let start = cur.u32()?;
        let mut adjacency = Vec::with_capacity(n);
        for _ in 0..n {
            let deg = cur.u32()? as usize;
            let mut list = Vec::with_capacity(deg);
            for _ in 0..deg {
                list.push(cur.u32()?);
            }
            adjacency.push(list);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format {
                offset: cur.pos as u64,
                message: "trailing bytes after adjacency".into(),
            });
        }
        Self::from_adjacency(alpha, cap, start, adjacency)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, len: usize) -> Result<&'b [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: "truncated graph file".into(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Total order on `(distance, id)`.
#[inline]
fn by_dist_then_id(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Yields `(distance, id)` in ascending order, sorting lazily in chunks so a
/// capped build does not pay for a full sort of every row.
struct AscendingScan {
    items: Vec<(f64, u32)>,
    sorted_upto: usize,
    next: usize,
    chunk: usize,
}

impl AscendingScan {
    fn new(items: Vec<(f64, u32)>, chunk: usize) -> Self {
        Self {
            items,
            sorted_upto: 0,
            next: 0,
            chunk: chunk.max(16),
        }
    }
}

impl Iterator for AscendingScan {
    type Item = (f64, u32);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next == self.items.len() {
            return None;
        }
        if self.next == self.sorted_upto {
            let rest = &mut self.items[self.sorted_upto..];
            let take = self.chunk.min(rest.len());
            if take < rest.len() {
                rest.select_nth_unstable_by(take, by_dist_then_id);
            }
            rest[..take].sort_unstable_by(by_dist_then_id);
            self.sorted_upto += take;
            self.chunk *= 2;
        }
        let item = self.items[self.next];
        self.next += 1;
        Some(item)
    }
}

/// Builds the pruned neighbor list of every node under `metric`.
///
/// Ties in the scan break by node id, so the output is deterministic. The
/// start node is the medoid (minimum total distance to all other points).
pub fn build_alpha_graph<M: Metric + ?Sized>(
    metric: &M,
    alpha: f64,
    cap: Option<usize>,
) -> Result<ReachabilityGraph> {
    if !(alpha > 1.0) {
        return Err(Error::Parameter(format!("alpha must be > 1, got {alpha}")));
    }
    if cap == Some(0) {
        return Err(Error::Parameter("max outdegree must be positive".into()));
    }
    let n = metric.len();
    if n == 0 {
        return ReachabilityGraph::from_adjacency(alpha, cap, 0, Vec::new());
    }
    let rows: Vec<(Vec<u32>, f64)> = (0..n as u32)
        .into_par_iter()
        .map(|p| prune_row(metric, p, alpha, cap))
        .collect();
    let start = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i as u32)
        .unwrap_or(0);
    let adjacency = rows.into_iter().map(|(list, _)| list).collect();
    ReachabilityGraph::from_adjacency(alpha, cap, start, adjacency)
}

fn prune_row<M: Metric + ?Sized>(
    metric: &M,
    p: u32,
    alpha: f64,
    cap: Option<usize>,
) -> (Vec<u32>, f64) {
    let n = metric.len() as u32;
    let mut total = 0.0;
    let candidates: Vec<(f64, u32)> = (0..n)
        .filter(|&q| q != p)
        .map(|q| {
            let dist = metric.distance(p, q);
            total += dist;
            (dist, q)
        })
        .collect();
    let chunk = cap.map_or(candidates.len(), |c| 8 * c);
    let mut kept: Vec<u32> = Vec::new();
    for (d_pq, q) in AscendingScan::new(candidates, chunk) {
        if cap.is_some_and(|c| kept.len() >= c) {
            break;
        }
        let shortcut = kept
            .iter()
            .any(|&kept_p| alpha * metric.distance(kept_p, q) <= d_pq);
        if !shortcut {
            kept.push(q);
        }
    }
    kept.sort_unstable();
    (kept, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub p: u32,
    pub q: u32,
}

/// Exhaustively checks alpha-shortcut reachability; returns the
/// lexicographically first failing ordered pair, if any.
pub fn verify_shortcut_reachability<M: Metric + ?Sized>(
    graph: &ReachabilityGraph,
    metric: &M,
    alpha: f64,
) -> Option<Counterexample> {
    let n = graph.len() as u32;
    (0..n)
        .into_par_iter()
        .filter_map(|p| {
            let nbrs = graph.neighbors(p);
            (0..n)
                .filter(|&q| q != p && nbrs.binary_search(&q).is_err())
                .find(|&q| {
                    let d_pq = metric.distance(p, q);
                    !nbrs
                        .iter()
                        .any(|&p2| metric.distance(p2, q) * alpha <= d_pq)
                })
                .map(|q| Counterexample { p, q })
        })
        .min_by_key(|c| (c.p, c.q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    FrontierExhausted,
    Budget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    /// Expanded nodes, ascending by `(distance, id)`.
    pub visited: Vec<(u32, f64)>,
    /// Every node whose distance was evaluated, ascending by `(distance, id)`.
    pub seen: Vec<(u32, f64)>,
    pub proxy_calls: u64,
    pub truth_calls: u64,
    pub terminated_by: Termination,
}

impl SearchTrace {
    pub fn top(&self, k: usize) -> Vec<u32> {
        self.seen.iter().take(k).map(|&(id, _)| id).collect()
    }
}

/// Sorted candidate list `A` of at most `beam` entries.
struct Frontier {
    items: Vec<(f64, u32)>,
    beam: usize,
}

impl Frontier {
    fn offer(&mut self, item: (f64, u32)) -> Option<usize> {
        if self.items.len() == self.beam
            && by_dist_then_id(&item, self.items.last().unwrap()) != Ordering::Less
        {
            return None;
        }
        let pos = self
            .items
            .binary_search_by(|probe| by_dist_then_id(probe, &item))
            .unwrap_or_else(|e| e);
        self.items.insert(pos, item);
        self.items.truncate(self.beam);
        Some(pos)
    }
}

/// Greedy best-first search under `oracle` starting from `starts`.
///
/// Keeps the `beam` closest evaluated nodes; repeatedly expands the closest
/// unexpanded one until none is left or the oracle's budget runs out. On
/// budget exhaustion the neighbors evaluated so far are kept.
pub fn greedy_search(
    graph: &ReachabilityGraph,
    oracle: &CountingOracle<'_>,
    query: PointRef,
    starts: &[u32],
    beam: usize,
) -> Result<SearchTrace> {
    if starts.is_empty() {
        return Err(Error::Parameter("greedy search needs at least one start".into()));
    }
    if beam == 0 {
        return Err(Error::Parameter("beam must be positive".into()));
    }
    let n = graph.len();
    if let Some(&bad) = starts.iter().find(|&&s| s as usize >= n) {
        return Err(Error::Parameter(format!("start node {bad} >= {n}")));
    }
    let calls_before = oracle.calls();
    // 0 = unseen, 1 = evaluated, 2 = expanded
    let mut state = vec![0u8; n];
    let mut seen: Vec<(u32, f64)> = Vec::new();
    let mut visited: Vec<(u32, f64)> = Vec::new();
    let mut frontier = Frontier {
        items: Vec::with_capacity(beam.min(n) + 1),
        beam,
    };
    let mut terminated_by = Termination::FrontierExhausted;

    let eval = |node: u32,
                    state: &mut [u8],
                    seen: &mut Vec<(u32, f64)>|
     -> Result<Option<f64>> {
        if state[node as usize] != 0 {
            return Ok(None);
        }
        match oracle.distance(query, node) {
            Ok(dist) => {
                state[node as usize] = 1;
                seen.push((node, dist));
                Ok(Some(dist))
            }
            Err(OracleError::BudgetExhausted { .. }) => Err(Error::Oracle(
                OracleError::BudgetExhausted { calls: 0 },
            )),
            Err(e) => Err(e.into()),
        }
    };

    let mut cursor = 0usize;
    'outer: {
        for &s in starts {
            match eval(s, &mut state, &mut seen) {
                Ok(Some(dist)) => {
                    frontier.offer((dist, s));
                }
                Ok(None) => {}
                Err(Error::Oracle(OracleError::BudgetExhausted { .. })) => {
                    terminated_by = Termination::Budget;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        loop {
            while cursor < frontier.items.len() && state[frontier.items[cursor].1 as usize] == 2 {
                cursor += 1;
            }
            let Some(&(dist, v)) = frontier.items.get(cursor) else {
                break;
            };
            state[v as usize] = 2;
            visited.push((v, dist));
            for &nb in graph.neighbors(v) {
                match eval(nb, &mut state, &mut seen) {
                    Ok(Some(d)) => {
                        if let Some(pos) = frontier.offer((d, nb)) {
                            cursor = cursor.min(pos);
                        }
                    }
                    Ok(None) => {}
                    Err(Error::Oracle(OracleError::BudgetExhausted { .. })) => {
                        terminated_by = Termination::Budget;
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let order = |a: &(u32, f64), b: &(u32, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    visited.sort_unstable_by(order);
    seen.sort_unstable_by(order);
    let calls = oracle.calls() - calls_before;
    let (proxy_calls, truth_calls) = match oracle.kind() {
        OracleKind::Proxy => (calls, 0),
        OracleKind::Truth => (0, calls),
    };
    Ok(SearchTrace {
        visited,
        seen,
        proxy_calls,
        truth_calls,
        terminated_by,
    })
}

/// How the second stage of [`two_stage_search`] is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StartMode {
    /// The top `max(100, Q/2)` proxy results.
    HalfBudget,
    /// The top `K` proxy results.
    FixedK(usize),
    /// The graph's entry node; no proxy search at all.
    DefaultEntry,
}

impl StartMode {
    /// Number of first-stage results used as starts for budget `q`, or `None`
    /// when the first stage is skipped.
    pub fn start_count(self, budget: u64) -> Option<usize> {
        match self {
            StartMode::HalfBudget => Some(100.max((budget / 2) as usize)),
            StartMode::FixedK(k) => Some(k.max(1)),
            StartMode::DefaultEntry => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            StartMode::HalfBudget => "top-half".into(),
            StartMode::FixedK(k) => format!("top-{k}"),
            StartMode::DefaultEntry => "default".into(),
        }
    }
}

impl std::str::FromStr for StartMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top-half" | "half-budget" => Ok(StartMode::HalfBudget),
            "default" | "default-entry" => Ok(StartMode::DefaultEntry),
            other => other
                .strip_prefix("top-")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k > 0)
                .map(StartMode::FixedK)
                .ok_or_else(|| {
                    Error::Parameter(format!(
                        "unknown start mode {other:?} (expected top-half, top-<K> or default)"
                    ))
                }),
        }
    }
}

impl std::fmt::Display for StartMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStageParams {
    /// Hard cap on ground-truth evaluations.
    pub budget: u64,
    pub k: usize,
    pub start_mode: StartMode,
    pub stage1_beam: usize,
    /// Beam of the ground-truth stage; `None` means `budget`, i.e. the search
    /// is bounded by the budget rather than by the beam.
    pub stage2_beam: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageOutcome {
    /// The `k` closest points seen under the ground-truth oracle.
    pub top: Vec<(u32, f64)>,
    pub stage1: Option<SearchTrace>,
    pub stage2: SearchTrace,
}

/// First stage: an unbudgeted proxy search with a wide beam. Its visited list
/// is the approximate proxy ranking used by both bi-metric methods.
pub fn stage_one(
    graph: &ReachabilityGraph,
    proxy: &CountingOracle<'_>,
    query: PointRef,
    beam: usize,
) -> Result<SearchTrace> {
    greedy_search(graph, proxy, query, &[graph.start_node()], beam)
}

/// Second stage: budgeted ground-truth search from `starts`. Evaluating the
/// starts themselves counts against the budget.
pub fn stage_two(
    graph: &ReachabilityGraph,
    truth: &CountingOracle<'_>,
    query: PointRef,
    starts: &[u32],
    beam: usize,
) -> Result<SearchTrace> {
    greedy_search(graph, truth, query, starts, beam)
}

pub fn two_stage_search(
    graph: &ReachabilityGraph,
    proxy: &CountingOracle<'_>,
    truth: &CountingOracle<'_>,
    query: PointRef,
    params: TwoStageParams,
) -> Result<TwoStageOutcome> {
    if (params.budget as usize) < params.k {
        return Err(Error::Parameter(format!(
            "budget {} smaller than k = {}",
            params.budget, params.k
        )));
    }
    if graph.is_empty() {
        return Err(Error::Parameter("empty graph".into()));
    }
    let (starts, stage1) = match params.start_mode.start_count(params.budget) {
        None => (vec![graph.start_node()], None),
        Some(count) => {
            let trace = stage_one(graph, proxy, query, params.stage1_beam.max(count))?;
            let starts: Vec<u32> = trace.visited.iter().take(count).map(|&(id, _)| id).collect();
            (starts, Some(trace))
        }
    };
    let beam = params
        .stage2_beam
        .unwrap_or(params.budget as usize)
        .max(params.k)
        .max(1);
    let stage2 = stage_two(graph, truth, query, &starts, beam)?;
    let top = stage2.seen.iter().take(params.k).copied().collect();
    Ok(TwoStageOutcome {
        top,
        stage1,
        stage2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EmbeddingSet;
    use crate::metric::{DistanceMatrix, DistanceOracle};
    use rand::{Rng, SeedableRng};

    fn line(xs: &[f32]) -> EmbeddingSet {
        EmbeddingSet::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    fn random_set(n: usize, dim: usize, seed: u64) -> EmbeddingSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0f32)).collect())
            .collect();
        EmbeddingSet::from_rows(&rows).unwrap()
    }

    #[test]
    fn two_points_link_each_other() {
        let s = line(&[0.0, 5.0]);
        let g = build_alpha_graph(&DistanceOracle::new(OracleKind::Proxy, &s), 3.0, None).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn three_point_line_hand_trace() {
        let s = line(&[0.0, 1.0, 2.0]);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        let g = build_alpha_graph(&d, 2.0, None).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1]);
        assert_eq!(g.start_node(), 1);
        assert_eq!(verify_shortcut_reachability(&g, &d, 2.0), None);
    }

    #[test]
    fn bad_parameters() {
        let s = line(&[0.0, 1.0]);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        assert!(build_alpha_graph(&d, 1.0, None).is_err());
        assert!(build_alpha_graph(&d, 1.2, Some(0)).is_err());
        let empty = EmbeddingSet::default();
        let g = build_alpha_graph(&DistanceOracle::new(OracleKind::Proxy, &empty), 1.2, None).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn complete_graph_always_reachable() {
        let s = random_set(15, 2, 1);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        let adj = (0..15u32)
            .map(|p| (0..15u32).filter(|&q| q != p).collect())
            .collect();
        let g = ReachabilityGraph::from_adjacency(1.5, None, 0, adj).unwrap();
        for alpha in [1.01, 2.0, 100.0] {
            assert_eq!(verify_shortcut_reachability(&g, &d, alpha), None);
        }
    }

    #[test]
    fn uncapped_build_is_reachable_and_deterministic() {
        for seed in 0..5 {
            let s = random_set(120, 3, seed);
            let d = DistanceOracle::new(OracleKind::Proxy, &s);
            let g = build_alpha_graph(&d, 1.5, None).unwrap();
            assert_eq!(verify_shortcut_reachability(&g, &d, 1.5), None);
            assert_eq!(g, build_alpha_graph(&d, 1.5, None).unwrap());
        }
    }

    #[test]
    fn deleted_edge_is_reported() {
        let s = random_set(60, 2, 7);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        let mut g = build_alpha_graph(&d, 2.0, None).unwrap();
        // the nearest neighbor of 0 is always kept and nothing can shortcut it
        let nearest = (1..60u32)
            .min_by(|&a, &b| d.distance(0, a).total_cmp(&d.distance(0, b)))
            .unwrap();
        assert!(g.remove_edge(0, nearest));
        assert_eq!(
            verify_shortcut_reachability(&g, &d, 2.0),
            Some(Counterexample { p: 0, q: nearest })
        );
    }

    #[test]
    fn capped_build_respects_cap() {
        let s = random_set(300, 8, 3);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        let g = build_alpha_graph(&d, 1.2, Some(5)).unwrap();
        assert!(g.stats().max_outdegree <= 5);
        let uncapped = build_alpha_graph(&d, 1.2, None).unwrap();
        // capping keeps a prefix of the uncapped scan
        for p in 0..300u32 {
            for q in g.neighbors(p) {
                assert!(uncapped.has_edge(p, *q));
            }
        }
    }

    #[test]
    fn ascending_scan_matches_full_sort() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let items: Vec<(f64, u32)> = (0..1000)
            .map(|i| ((rng.random_range(0..50u32)) as f64, i))
            .collect();
        let mut sorted = items.clone();
        sorted.sort_by(by_dist_then_id);
        let scanned: Vec<_> = AscendingScan::new(items, 16).collect();
        assert_eq!(scanned, sorted);
    }

    #[test]
    fn bmag_round_trip_and_layout() {
        let s = line(&[0.0, 1.0, 2.0]);
        let g = build_alpha_graph(&DistanceOracle::new(OracleKind::Proxy, &s), 2.0, None).unwrap();
        let mut bytes = Vec::new();
        g.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"BMAG");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 4 + 4 + (4 + 4) + (4 + 8) + (4 + 4));
        assert_eq!(ReachabilityGraph::read_from(&bytes[..]).unwrap(), g);
        assert!(ReachabilityGraph::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(ReachabilityGraph::read_from(&wrong[..]).is_err());
    }

    #[test]
    fn search_from_the_query_point_itself() {
        let s = random_set(50, 2, 2);
        let g = build_alpha_graph(&DistanceOracle::new(OracleKind::Proxy, &s), 1.5, None).unwrap();
        let o = CountingOracle::proxy(DistanceOracle::new(OracleKind::Proxy, &s));
        let t = greedy_search(&g, &o, PointRef::Corpus(17), &[17], 1).unwrap();
        assert_eq!(t.visited[0], (17, 0.0));
    }

    #[test]
    fn line_greedy_descent_order() {
        let s = line(&[0.0, 1.0, 2.0]);
        let q = line(&[2.1]);
        let g = build_alpha_graph(&DistanceOracle::new(OracleKind::Proxy, &s), 2.0, None).unwrap();
        let o = CountingOracle::proxy(DistanceOracle::new(OracleKind::Proxy, &s).with_queries(&q));
        let t = greedy_search(&g, &o, PointRef::Query(0), &[0], 1).unwrap();
        // expansion order was 0, 1, 2; the sorted list starts at the closest
        let mut ids: Vec<u32> = t.visited.iter().map(|v| v.0).collect();
        assert_eq!(ids[0], 2);
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(t.terminated_by, Termination::FrontierExhausted);
        assert!(greedy_search(&g, &o, PointRef::Query(0), &[], 1).is_err());
    }

    #[test]
    fn calls_match_evaluated_nodes() {
        let s = random_set(200, 4, 5);
        let q = random_set(5, 4, 6);
        let g = build_alpha_graph(&DistanceOracle::new(OracleKind::Proxy, &s), 1.2, Some(12)).unwrap();
        for qi in 0..5 {
            let o = CountingOracle::new(DistanceOracle::new(OracleKind::Truth, &s).with_queries(&q), None, false);
            let t = greedy_search(&g, &o, PointRef::Query(qi), &[0, 3, 0], 8).unwrap();
            assert_eq!(t.truth_calls as usize, t.seen.len());
            assert_eq!(o.calls() as usize, t.seen.len());
            for &(id, dist) in &t.seen {
                assert_eq!(dist, o.inner().between(PointRef::Query(qi), id).unwrap());
            }
        }
    }

    #[test]
    fn budget_truncates_gracefully() {
        let s = random_set(200, 4, 5);
        let q = random_set(3, 4, 9);
        let g = build_alpha_graph(&DistanceOracle::new(OracleKind::Proxy, &s), 1.2, Some(16)).unwrap();
        for budget in [1u64, 7, 30] {
            let o = CountingOracle::truth(DistanceOracle::new(OracleKind::Truth, &s).with_queries(&q), Some(budget));
            let t = greedy_search(&g, &o, PointRef::Query(1), &[g.start_node()], 200).unwrap();
            assert!(t.truth_calls <= budget);
            assert_eq!(t.terminated_by, Termination::Budget);
            assert_eq!(t.seen.len() as u64, t.truth_calls);
        }
    }

    #[test]
    fn theory_beam_one_is_one_plus_eps_approximate() {
        // alpha = 1 + 2/eps gives a (1 + eps)-approximate nearest neighbor
        let eps = 0.5;
        let alpha = 1.0 + 2.0 / eps;
        let s = random_set(500, 3, 77);
        let q = random_set(100, 3, 78);
        let d = DistanceOracle::new(OracleKind::Proxy, &s).with_queries(&q);
        let g = build_alpha_graph(&d, alpha, None).unwrap();
        for qi in 0..100u32 {
            let o = CountingOracle::proxy(d);
            let t = greedy_search(&g, &o, PointRef::Query(qi), &[g.start_node()], 1).unwrap();
            let best = (0..500u32)
                .map(|p| d.between(PointRef::Query(qi), p).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(t.visited[0].1 <= (1.0 + eps) * best * (1.0 + 1e-12), "query {qi}");
        }
    }

    #[test]
    fn two_stage_with_full_budget_is_exact() {
        let p = random_set(150, 4, 31);
        let t = random_set(150, 4, 32);
        let qp = random_set(10, 4, 33);
        let qt = random_set(10, 4, 34);
        let dp = DistanceOracle::new(OracleKind::Proxy, &p).with_queries(&qp);
        let dt = DistanceOracle::new(OracleKind::Truth, &t).with_queries(&qt);
        let g = build_alpha_graph(&dp, 1.2, Some(64)).unwrap();
        for qi in 0..10u32 {
            let proxy = CountingOracle::proxy(dp);
            let truth = CountingOracle::truth(dt, Some(150));
            let params = TwoStageParams {
                budget: 150,
                k: 10,
                start_mode: StartMode::HalfBudget,
                stage1_beam: 5000,
                stage2_beam: None,
            };
            let out = two_stage_search(&g, &proxy, &truth, PointRef::Query(qi), params).unwrap();
            let mut brute: Vec<(u32, f64)> = (0..150u32)
                .map(|x| (x, dt.between(PointRef::Query(qi), x).unwrap()))
                .collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(out.top, brute[..10].to_vec());
            assert!(out.stage2.truth_calls <= 150);
        }
    }

    #[test]
    fn two_stage_rejects_budget_below_k() {
        let p = random_set(20, 2, 1);
        let dp = DistanceOracle::new(OracleKind::Proxy, &p);
        let g = build_alpha_graph(&dp, 1.2, None).unwrap();
        let params = TwoStageParams {
            budget: 5,
            k: 10,
            start_mode: StartMode::DefaultEntry,
            stage1_beam: 10,
            stage2_beam: None,
        };
        let o = CountingOracle::proxy(dp);
        let t = CountingOracle::truth(dp, Some(5));
        assert!(two_stage_search(&g, &o, &t, PointRef::Corpus(0), params).is_err());
    }

    #[test]
    fn start_mode_parsing() {
        assert_eq!("top-half".parse::<StartMode>().unwrap(), StartMode::HalfBudget);
        assert_eq!("top-100".parse::<StartMode>().unwrap(), StartMode::FixedK(100));
        assert_eq!("default".parse::<StartMode>().unwrap(), StartMode::DefaultEntry);
        assert!("top-0".parse::<StartMode>().is_err());
        assert_eq!(StartMode::HalfBudget.start_count(1001), Some(500));
        assert_eq!(StartMode::HalfBudget.start_count(50), Some(100));
    }

    #[test]
    fn matrix_metric_build() {
        // explicit metric, not embeddable: star with a far leaf
        let m = DistanceMatrix::from_fn(4, |a, b| if a == 0 || b == 0 { 1.0 } else { 2.0 });
        let g = build_alpha_graph(&m, 1.5, None).unwrap();
        assert_eq!(verify_shortcut_reachability(&g, &m, 1.5), None);
        assert_eq!(g.start_node(), 0);
    }
}
