//! Cover tree with slack `T`, built under the proxy metric and searched under
//! the ground-truth metric.
//!
//! Levels run from the singleton root level `t` down to `-1`. Level `i > 0`
//! holds a `2^i / T`-cover of level `i - 1`; levels `0` and `-1` hold every
//! point. Distances are measured in *scaled* units in which the closest pair
//! sits just above 1.
//!
//! The tree is stored explicitly: a point's chain of self-children is cut
//! only where the point acquires other children, so there are at most
//! `2n - 1` nodes.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::EXACT_STATS_LIMIT;
use crate::metric::{CountingOracle, Metric, OracleError, PointRef, Scaled};
use crate::{Error, Result};

/// Pairs sampled to estimate the closest pair when `n > EXACT_STATS_LIMIT`.
const SCALE_SAMPLE_PAIRS: usize = 200_000;
/// Applied to the sampled closest pair, which overestimates the true one.
const SAMPLED_SCALE_SAFETY: f64 = 0.5;
const SCALE_EPS: f64 = 1e-9;

/// Greedy `radius`-cover of `points`, scanned in the given order.
///
/// Every input point ends within `radius` of some center, and centers are
/// pairwise more than `radius` apart.
pub fn build_cover<M: Metric + ?Sized>(metric: &M, points: &[u32], radius: f64) -> Vec<u32> {
    let mut removed = vec![false; points.len()];
    let mut centers = Vec::new();
    for i in 0..points.len() {
        if removed[i] {
            continue;
        }
        let x = points[i];
        centers.push(x);
        for j in i + 1..points.len() {
            if !removed[j] && metric.distance(x, points[j]) <= radius {
                removed[j] = true;
            }
        }
    }
    centers
}

#[inline]
fn level_radius(level: i32, slack: f64) -> f64 {
    2f64.powi(level) / slack
}

/// One explicit node: `point` present at every level in `lo..=hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverNode {
    pub point: u32,
    pub lo: i32,
    pub hi: i32,
    pub parent: Option<usize>,
    /// Nodes at level `lo - 1`: the self-continuation and the other children.
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverTreeHeader {
    #[serde(rename = "T")]
    pub slack: f64,
    /// Multiply raw proxy distances by this to get scaled units.
    pub scale: f64,
    /// True when `scale` comes from the exact closest pair.
    pub scale_exact: bool,
    #[serde(rename = "t")]
    pub top: i32,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverTree {
    pub header: CoverTreeHeader,
    pub nodes: Vec<CoverNode>,
    pub root: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverExit {
    /// Descended to the bottom level.
    Bottom,
    /// The exit test fired.
    EarlyExit,
    /// The budget ran out; the result is the best point seen.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSearchResult {
    pub point: u32,
    /// Raw (unscaled) ground-truth distance.
    pub distance: f64,
    pub calls: u64,
    pub exit: CoverExit,
}

/// Closest nonzero pair distance and whether it was computed exactly.
fn closest_pair<M: Metric + ?Sized>(metric: &M, seed: u64) -> Option<(f64, bool)> {
    let n = metric.len();
    let mut best = f64::INFINITY;
    let exact = n <= EXACT_STATS_LIMIT;
    if exact {
        for a in 0..n as u32 {
            for b in a + 1..n as u32 {
                let v = metric.distance(a, b);
                if v > 0.0 && v < best {
                    best = v;
                }
            }
        }
    } else {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed, "cover-scale");
        for _ in 0..SCALE_SAMPLE_PAIRS {
            let a = rng.random_range(0..n as u32);
            let b = rng.random_range(0..n as u32);
            let v = metric.distance(a, b);
            if v > 0.0 && v < best {
                best = v;
            }
        }
        best *= SAMPLED_SCALE_SAFETY;
    }
    best.is_finite().then_some((best, exact))
}

impl CoverTree {
    /// Builds the tree over `metric` (expected duplicate-free) with slack
    /// `slack >= 1`. The bi-metric setting uses `slack = C`.
    pub fn build<M: Metric + ?Sized>(metric: &M, slack: f64) -> Result<Self> {
        if !(slack >= 1.0) {
            return Err(Error::Parameter(format!("T must be >= 1, got {slack}")));
        }
        let n = metric.len();
        let (min_d, scale_exact) = match closest_pair(metric, 0) {
            Some(v) => v,
            None => {
                // n <= 1 or every point identical
                let header = CoverTreeHeader {
                    slack,
                    scale: 1.0,
                    scale_exact: true,
                    top: 0,
                    n,
                };
                if n == 0 {
                    return Ok(Self { header, nodes: Vec::new(), root: None });
                }
                let node = CoverNode { point: 0, lo: -1, hi: 0, parent: None, children: Vec::new() };
                return Ok(Self { header, nodes: vec![node], root: Some(0) });
            }
        };
        let scale = (1.0 + SCALE_EPS) / min_d;
        let scaled = Scaled { inner: metric, factor: scale };

        // top[p]: highest level holding p; attach[(level, p)]: children of p
        // that enter at level - 1.
        let mut top_level = vec![0i32; n];
        let mut parent_of: Vec<Option<u32>> = vec![None; n];
        let mut current: Vec<u32> = (0..n as u32).collect();
        let mut level = 0i32;
        while current.len() > 1 {
            level += 1;
            let radius = level_radius(level, slack);
            let cover = build_cover(&scaled, &current, radius);
            for &p in &cover {
                top_level[p as usize] = level;
            }
            let mut is_center = vec![false; n];
            for &c in &cover {
                is_center[c as usize] = true;
            }
            for &p in current.iter().filter(|&&p| !is_center[p as usize]) {
                let parent = cover
                    .iter()
                    .map(|&c| (scaled.distance(p, c), c))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .map(|(_, c)| c)
                    .expect("cover is non-empty");
                parent_of[p as usize] = Some(parent);
            }
            current = cover;
        }
        let top = level;
        let root_point = current[0];

        // Levels at which each point gains non-self children, highest first.
        let mut child_levels: HashMap<u32, Vec<(i32, u32)>> = HashMap::new();
        for p in 0..n as u32 {
            if let Some(parent) = parent_of[p as usize] {
                child_levels
                    .entry(parent)
                    .or_default()
                    .push((top_level[p as usize] + 1, p));
            }
        }

        // Segments per point: split its span [-1, top] right below every
        // level where it has non-self children.
        let mut nodes: Vec<CoverNode> = Vec::new();
        // (point, level) -> node index for the segment whose lo is `level`
        let mut segment_at_lo: HashMap<(u32, i32), usize> = HashMap::new();
        let mut first_segment = vec![0usize; n];
        for p in 0..n as u32 {
            let mut cuts: Vec<i32> = child_levels
                .get(&p)
                .map(|v| v.iter().map(|&(l, _)| l).collect())
                .unwrap_or_default();
            cuts.sort_unstable_by(|a, b| b.cmp(a));
            cuts.dedup();
            let mut hi = top_level[p as usize];
            let mut prev: Option<usize> = None;
            for lo in cuts.into_iter().chain(std::iter::once(-1)) {
                let idx = nodes.len();
                nodes.push(CoverNode { point: p, lo, hi, parent: prev, children: Vec::new() });
                if let Some(prev) = prev {
                    nodes[prev].children.push(idx);
                } else {
                    first_segment[p as usize] = idx;
                }
                segment_at_lo.insert((p, lo), idx);
                prev = Some(idx);
                hi = lo - 1;
            }
        }
        for (&parent, kids) in &child_levels {
            for &(lvl, child) in kids {
                let parent_node = segment_at_lo[&(parent, lvl)];
                let child_node = first_segment[child as usize];
                nodes[child_node].parent = Some(parent_node);
                nodes[parent_node].children.push(child_node);
            }
        }
        for i in 0..nodes.len() {
            let mut kids = std::mem::take(&mut nodes[i].children);
            kids.sort_by_key(|&c| nodes[c].point);
            nodes[i].children = kids;
        }

        Ok(Self {
            header: CoverTreeHeader { slack, scale, scale_exact, top, n },
            root: Some(first_segment[root_point as usize]),
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.header.n
    }

    pub fn is_empty(&self) -> bool {
        self.header.n == 0
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn top_level(&self) -> i32 {
        self.header.top
    }

    /// Points of level `i`, ascending.
    pub fn level_points(&self, level: i32) -> Vec<u32> {
        let mut pts: Vec<u32> = self
            .nodes
            .iter()
            .filter(|n| n.lo <= level && level <= n.hi)
            .map(|n| n.point)
            .collect();
        pts.sort_unstable();
        pts.dedup();
        pts
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// `(1 + eps)`-approximate nearest neighbor of `query` under `truth`.
    ///
    /// `truth` is evaluated in raw units; the tree's scale is applied before
    /// comparing against level radii.
    pub fn search(
        &self,
        truth: &CountingOracle<'_>,
        query: PointRef,
        eps: f64,
    ) -> Result<CoverSearchResult> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Parameter(format!("eps must be in (0, 1), got {eps}")));
        }
        let Some(root) = self.root else {
            return Err(Error::Parameter("search on an empty cover tree".into()));
        };
        let scale = self.header.scale;
        let calls_before = truth.calls();
        let mut cache: HashMap<u32, f64> = HashMap::new();
        let mut best: Option<(f64, u32)> = None;
        let closer = |a: (f64, u32), b: Option<(f64, u32)>| match b {
            None => true,
            Some(b) => a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).is_lt(),
        };

        let mut current = vec![root];
        let mut level = self.header.top;
        let mut exit = CoverExit::Bottom;
        'descend: while level != -1 {
            let mut children: Vec<usize> = Vec::new();
            for &node in &current {
                let nd = &self.nodes[node];
                if nd.lo < level {
                    children.push(node);
                } else {
                    children.extend_from_slice(&nd.children);
                }
            }
            let mut scored: Vec<(f64, usize)> = Vec::with_capacity(children.len());
            for node in children {
                let p = self.nodes[node].point;
                let dist = match cache.get(&p) {
                    Some(&v) => v,
                    None => match truth.distance(query, p) {
                        Ok(raw) => {
                            let v = raw * scale;
                            cache.insert(p, v);
                            v
                        }
                        Err(OracleError::BudgetExhausted { .. }) => {
                            exit = CoverExit::Truncated;
                            break 'descend;
                        }
                        Err(e) => return Err(e.into()),
                    },
                };
                if closer((dist, p), best) {
                    best = Some((dist, p));
                }
                scored.push((dist, node));
            }
            // D(q, ∅) = +inf; the covering invariant keeps this from happening
            let nearest = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
            let radius = 2f64.powi(level);
            current = scored
                .into_iter()
                .filter(|&(dist, _)| dist <= nearest + radius)
                .map(|(_, node)| node)
                .collect();
            if nearest >= radius * (1.0 + 1.0 / eps) {
                exit = CoverExit::EarlyExit;
                break;
            }
            level -= 1;
        }

        let (scaled, point) = if exit == CoverExit::Truncated {
            match best {
                Some(b) => b,
                None => {
                    return Err(Error::Oracle(OracleError::BudgetExhausted {
                        calls: truth.calls(),
                    }))
                }
            }
        } else {
            current
                .iter()
                .map(|&node| {
                    let p = self.nodes[node].point;
                    (cache[&p], p)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .expect("kept set is never empty")
        };
        Ok(CoverSearchResult {
            point,
            distance: scaled / scale,
            calls: truth.calls() - calls_before,
            exit,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub nesting: bool,
    pub covering: bool,
    pub separation: bool,
    pub node_bound: bool,
    pub structure: bool,
    /// Scaled proxy distance from every node to every descendant within
    /// `2^(level + 1) / T`.
    pub descendant_bound: bool,
    pub node_count: usize,
    pub first_failure: Option<String>,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.nesting
            && self.covering
            && self.separation
            && self.node_bound
            && self.structure
            && self.descendant_bound
    }
}

/// Re-derives every level from the node array and checks the cover tree
/// invariants against `metric` (the proxy the tree was built with).
pub fn check_invariants<M: Metric + ?Sized>(tree: &CoverTree, metric: &M) -> InvariantReport {
    let mut report = InvariantReport {
        nesting: true,
        covering: true,
        separation: true,
        node_bound: true,
        structure: true,
        descendant_bound: true,
        node_count: tree.nodes.len(),
        first_failure: None,
    };
    let fail = |flag: &mut bool, msg: String, first: &mut Option<String>| {
        *flag = false;
        if first.is_none() {
            *first = Some(msg);
        }
    };
    let n = tree.len();
    let slack = tree.header.slack;
    let scale = tree.header.scale;
    let sd = |a: u32, b: u32| metric.distance(a, b) * scale;
    if n == 0 {
        return report;
    }
    if tree.nodes.len() > 2 * n - 1 {
        fail(&mut report.node_bound, format!("{} nodes for {n} points", tree.nodes.len()), &mut report.first_failure);
    }

    // Per point: levels covered by its segments must be exactly [-1, top].
    let mut spans: Vec<Vec<(i32, i32)>> = vec![Vec::new(); n];
    for node in &tree.nodes {
        spans[node.point as usize].push((node.lo, node.hi));
    }
    let mut point_top = vec![-1i32; n];
    for (p, s) in spans.iter_mut().enumerate() {
        s.sort_unstable();
        let contiguous = !s.is_empty()
            && s[0].0 == -1
            && s.windows(2).all(|w| w[1].0 == w[0].1 + 1)
            && s.iter().all(|&(lo, hi)| lo <= hi);
        if !contiguous {
            fail(&mut report.nesting, format!("point {p} does not span down to level -1 contiguously"), &mut report.first_failure);
        }
        point_top[p] = s.last().map_or(-1, |&(_, hi)| hi);
    }
    if point_top.iter().any(|&t| t < 0) {
        fail(&mut report.nesting, "some point is missing from level 0".into(), &mut report.first_failure);
    }

    // Parent links: every non-root segment's parent spans the level above it.
    for (i, node) in tree.nodes.iter().enumerate() {
        match node.parent {
            None => {
                if Some(i) != tree.root {
                    fail(&mut report.structure, format!("node {i} has no parent"), &mut report.first_failure);
                }
            }
            Some(par) => {
                let pn = &tree.nodes[par];
                if pn.lo != node.hi + 1 || !pn.children.contains(&i) {
                    fail(&mut report.structure, format!("node {i} is not linked right below its parent {par}"), &mut report.first_failure);
                }
                if pn.point != node.point {
                    // covering: a point leaving level i has a parent within 2^i / T
                    let level = pn.lo;
                    let dist = sd(node.point, pn.point);
                    if dist > level_radius(level, slack) {
                        fail(&mut report.covering, format!("point {} is {dist} from parent {} at level {level}", node.point, pn.point), &mut report.first_failure);
                    }
                    if node.hi + 1 > point_top[pn.point as usize] {
                        fail(&mut report.nesting, format!("parent {} absent from level {}", pn.point, node.hi + 1), &mut report.first_failure);
                    }
                }
            }
        }
        let non_self = node.children.iter().filter(|&&c| tree.nodes[c].point != node.point).count();
        if !node.children.is_empty() && non_self == 0 {
            fail(&mut report.node_bound, format!("node {i} should have been coalesced"), &mut report.first_failure);
        }
    }

    // Separation on every level above -1 (level -1 repeats level 0).
    for level in 0..=tree.header.top {
        let pts: Vec<u32> = (0..n as u32).filter(|&p| point_top[p as usize] >= level).collect();
        let radius = level_radius(level, slack);
        'sep: for (a, &x) in pts.iter().enumerate() {
            for &y in &pts[a + 1..] {
                if sd(x, y) <= radius {
                    fail(&mut report.separation, format!("points {x} and {y} at level {level} are within {radius}"), &mut report.first_failure);
                    break 'sep;
                }
            }
        }
    }
    if (0..n).filter(|&p| point_top[p] >= tree.header.top).count() != 1 {
        fail(&mut report.structure, "top level is not a singleton".into(), &mut report.first_failure);
    }

    for (a, q, level) in ancestor_pairs(tree) {
        let bound = level_radius(level + 1, slack) * (1.0 + 1e-12);
        if sd(a, q) > bound {
            fail(&mut report.descendant_bound, format!("descendant {q} of {a} at level {level} is beyond {bound}"), &mut report.first_failure);
            break;
        }
    }
    report
}

/// `(ancestor point, descendant point, lowest level at which the ancestor is
/// above the descendant)` for every ancestor of every point.
pub fn ancestor_pairs(tree: &CoverTree) -> Vec<(u32, u32, i32)> {
    let mut out = Vec::new();
    let mut first_segment: HashMap<u32, usize> = HashMap::new();
    for (i, node) in tree.nodes.iter().enumerate() {
        let entry = first_segment.entry(node.point).or_insert(i);
        if tree.nodes[*entry].hi < node.hi {
            *entry = i;
        }
    }
    for (&q, &seg) in &first_segment {
        let mut node = seg;
        while let Some(par) = tree.nodes[node].parent {
            let pn = &tree.nodes[par];
            if pn.point != q {
                out.push((pn.point, q, pn.lo));
            }
            node = par;
        }
    }
    out.sort_unstable();
    out
}

/// Checks the ground-truth descendant bound `D(p, p') <= 2^(level+1)` in
/// scaled units; holds whenever the proxy is a `T`-approximation.
pub fn check_truth_descendant_bound<T: Metric + ?Sized>(tree: &CoverTree, truth: &T) -> Option<(u32, u32, i32)> {
    let scale = tree.header.scale;
    ancestor_pairs(tree)
        .into_iter()
        .find(|&(a, q, level)| truth.distance(a, q) * scale > 2f64.powi(level + 1) * (1.0 + 1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EmbeddingSet;
    use crate::metric::{DistanceOracle, OracleKind};
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

    /// Independent check of both cover properties.
    fn is_cover<M: Metric>(m: &M, points: &[u32], cover: &[u32], r: f64) -> bool {
        let covering = points.iter().all(|&p| cover.iter().any(|&c| m.distance(p, c) <= r));
        let separated = cover.iter().enumerate().all(|(i, &a)| cover[i + 1..].iter().all(|&b| m.distance(a, b) > r));
        covering && separated && cover.iter().all(|c| points.contains(c))
    }

    #[test]
    fn cover_hand_trace() {
        let s = line(&[0.0, 1.0, 2.0, 4.0]);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        assert_eq!(build_cover(&d, &[0, 1, 2, 3], 1.0), vec![0, 2, 3]);
        assert_eq!(build_cover(&d, &[0, 1, 2, 3], 0.5), vec![0, 1, 2, 3]);
    }

    #[test]
    fn random_covers_verified() {
        for seed in 0..20 {
            let s = random_set(80, 2, seed);
            let d = DistanceOracle::new(OracleKind::Proxy, &s);
            let pts: Vec<u32> = (0..80).collect();
            for r in [0.05, 0.2, 0.7, 3.0] {
                let c = build_cover(&d, &pts, r);
                assert!(is_cover(&d, &pts, &c, r), "seed {seed} r {r}");
            }
        }
    }

    #[test]
    fn single_point_tree() {
        let s = line(&[3.0]);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        let t = CoverTree::build(&d, 1.0).unwrap();
        assert_eq!(t.node_count(), 1);
        assert!(check_invariants(&t, &d).holds());
        let q = line(&[10.0]);
        let truth = CountingOracle::truth(DistanceOracle::new(OracleKind::Truth, &s).with_queries(&q), None);
        let r = t.search(&truth, PointRef::Query(0), 0.1).unwrap();
        assert_eq!(r.point, 0);
        assert_eq!(r.distance, 7.0);
        let empty = EmbeddingSet::default();
        let t = CoverTree::build(&DistanceOracle::new(OracleKind::Proxy, &empty), 1.0).unwrap();
        assert!(t.is_empty() && t.root.is_none());
    }

    #[test]
    fn four_point_line_tree() {
        let s = line(&[0.0, 1.0, 2.0, 4.0]);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        let t = CoverTree::build(&d, 1.0).unwrap();
        let rep = check_invariants(&t, &d);
        assert!(rep.holds(), "{rep:?}");
        assert_eq!(t.level_points(t.top_level()).len(), 1);
        assert_eq!(t.level_points(0), vec![0, 1, 2, 3]);
        assert!(t.node_count() <= 7);
        assert!(t.top_level() <= ((1.0f64 * 4.0).log2().ceil() as i32) + 1);
    }

    #[test]
    fn invariants_on_random_trees() {
        for seed in 0..10 {
            let s = random_set(150, 3, 100 + seed);
            let d = DistanceOracle::new(OracleKind::Proxy, &s);
            for slack in [1.0, 2.0, 3.0] {
                let t = CoverTree::build(&d, slack).unwrap();
                let rep = check_invariants(&t, &d);
                assert!(rep.holds(), "seed {seed} T {slack}: {rep:?}");
            }
        }
    }

    #[test]
    fn broken_tree_is_detected() {
        let s = random_set(60, 2, 5);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        let mut t = CoverTree::build(&d, 1.0).unwrap();
        t.header.slack = 64.0;
        assert!(!check_invariants(&t, &d).holds());
    }

    #[test]
    fn json_round_trip() {
        let s = random_set(30, 2, 8);
        let t = CoverTree::build(&DistanceOracle::new(OracleKind::Proxy, &s), 2.0).unwrap();
        let back = CoverTree::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        let v: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        for key in ["T", "scale", "t", "n"] {
            assert!(v["header"].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn query_at_corpus_point_is_exact() {
        let s = random_set(100, 3, 9);
        let d = DistanceOracle::new(OracleKind::Proxy, &s);
        let t = CoverTree::build(&d, 1.0).unwrap();
        for p in [0u32, 13, 99] {
            let truth = CountingOracle::truth(DistanceOracle::new(OracleKind::Truth, &s), None);
            let r = t.search(&truth, PointRef::Corpus(p), 0.1).unwrap();
            assert_eq!((r.point, r.distance), (p, 0.0));
            assert_eq!(r.exit, CoverExit::Bottom);
        }
    }

    #[test]
    fn same_metric_search_is_approximate() {
        let s = random_set(200, 5, 11);
        let q = random_set(50, 5, 12);
        let d = DistanceOracle::new(OracleKind::Proxy, &s).with_queries(&q);
        let t = CoverTree::build(&d, 1.0).unwrap();
        for qi in 0..50u32 {
            let truth = CountingOracle::truth(d, None);
            let r = t.search(&truth, PointRef::Query(qi), 0.1).unwrap();
            let best = (0..200u32).map(|p| d.between(PointRef::Query(qi), p).unwrap()).fold(f64::INFINITY, f64::min);
            assert!(r.distance <= 1.1 * best * (1.0 + 1e-12));
            assert_eq!(r.distance, d.between(PointRef::Query(qi), r.point).unwrap());
        }
    }

    #[test]
    fn truncated_search_returns_best_so_far() {
        let s = random_set(200, 3, 13);
        let q = random_set(1, 3, 14);
        let d = DistanceOracle::new(OracleKind::Proxy, &s).with_queries(&q);
        let t = CoverTree::build(&d, 1.0).unwrap();
        let truth = CountingOracle::truth(d, Some(3));
        let r = t.search(&truth, PointRef::Query(0), 0.1).unwrap();
        assert_eq!(r.exit, CoverExit::Truncated);
        assert!(r.calls <= 3);
        assert!(t.search(&truth, PointRef::Query(0), 1.5).is_err());
    }
}
