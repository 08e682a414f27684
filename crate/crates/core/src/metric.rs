//! Distance oracles and the cost model.
//!
//! [`DistanceOracle`] is a plain Euclidean distance over a corpus (and
//! optionally a query set). [`CountingOracle`] wraps one, counts every
//! evaluation and refuses to go past its budget. Query cost is measured in
//! evaluations of the ground-truth oracle only.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::{Error, Result};

/// Euclidean distance, accumulated in `f64`.
#[inline]
pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let diff = x as f64 - y as f64;
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

/// A symmetric distance between corpus points `0..len()`.
pub trait Metric: Sync {
    fn len(&self) -> usize;

    fn distance(&self, a: u32, b: u32) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Proxy,
    Truth,
}

/// Either side of a distance evaluation that is not necessarily a corpus point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointRef {
    Corpus(u32),
    Query(u32),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("distance budget exhausted after {calls} calls")]
    BudgetExhausted { calls: u64 },
    #[error("{what} id {id} out of range (len {len})")]
    OutOfRange { what: &'static str, id: u32, len: usize },
}

/// Euclidean distance over one embedding space, optionally multiplied by a
/// constant `scale`.
#[derive(Debug, Clone, Copy)]
pub struct DistanceOracle<'a> {
    kind: OracleKind,
    corpus: &'a EmbeddingSet,
    queries: Option<&'a EmbeddingSet>,
    scale: f64,
}

impl<'a> DistanceOracle<'a> {
    pub fn new(kind: OracleKind, corpus: &'a EmbeddingSet) -> Self {
        Self {
            kind,
            corpus,
            queries: None,
            scale: 1.0,
        }
    }

    pub fn with_queries(mut self, queries: &'a EmbeddingSet) -> Self {
        self.queries = Some(queries);
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn corpus(&self) -> &'a EmbeddingSet {
        self.corpus
    }

    pub fn query_len(&self) -> usize {
        self.queries.map_or(0, |q| q.len())
    }

    fn vector(&self, p: PointRef) -> std::result::Result<&'a [f32], OracleError> {
        match p {
            PointRef::Corpus(id) => {
                if (id as usize) < self.corpus.len() {
                    Ok(self.corpus.get(id as usize))
                } else {
                    Err(OracleError::OutOfRange {
                        what: "corpus",
                        id,
                        len: self.corpus.len(),
                    })
                }
            }
            PointRef::Query(id) => match self.queries {
                Some(q) if (id as usize) < q.len() => Ok(q.get(id as usize)),
                q => Err(OracleError::OutOfRange {
                    what: "query",
                    id,
                    len: q.map_or(0, |q| q.len()),
                }),
            },
        }
    }

    pub fn between(&self, a: PointRef, b: u32) -> std::result::Result<f64, OracleError> {
        let va = self.vector(a)?;
        let vb = self.vector(PointRef::Corpus(b))?;
        Ok(euclidean(va, vb) * self.scale)
    }
}

impl Metric for DistanceOracle<'_> {
    fn len(&self) -> usize {
        self.corpus.len()
    }

    #[inline]
    fn distance(&self, a: u32, b: u32) -> f64 {
        euclidean(self.corpus.get(a as usize), self.corpus.get(b as usize)) * self.scale
    }
}

/// Any metric multiplied by a constant.
#[derive(Debug, Clone, Copy)]
pub struct Scaled<'m, M: ?Sized> {
    pub inner: &'m M,
    pub factor: f64,
}

impl<M: Metric + ?Sized> Metric for Scaled<'_, M> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn distance(&self, a: u32, b: u32) -> f64 {
        self.inner.distance(a, b) * self.factor
    }
}

/// Dense symmetric matrix, handy for hand-built metrics in tests and tools.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(u32, u32) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i as u32, j as u32);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Self { n, values }
    }

    pub fn from_metric<M: Metric + ?Sized>(m: &M) -> Self {
        Self::from_fn(m.len(), |a, b| m.distance(a, b))
    }
}

impl Metric for DistanceMatrix {
    fn len(&self) -> usize {
        self.n
    }

    fn distance(&self, a: u32, b: u32) -> f64 {
        self.values[a as usize * self.n + b as usize]
    }
}

#[derive(Debug, Default)]
struct CounterState {
    calls: u64,
    memo: Option<HashMap<(PointRef, u32), f64>>,
}

/// Counts evaluations of an inner oracle and enforces an optional budget.
///
/// The budget check and the increment happen under one lock, so a shared
/// oracle never overshoots its budget under concurrent queries. With
/// memoization on, a pair already evaluated is returned for free.
#[derive(Debug)]
pub struct CountingOracle<'a> {
    inner: DistanceOracle<'a>,
    budget: Option<u64>,
    state: Mutex<CounterState>,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: DistanceOracle<'a>, budget: Option<u64>, memoize: bool) -> Self {
        Self {
            inner,
            budget,
            state: Mutex::new(CounterState {
                calls: 0,
                memo: memoize.then(HashMap::new),
            }),
        }
    }

    /// Ground-truth default: memo on.
    pub fn truth(inner: DistanceOracle<'a>, budget: Option<u64>) -> Self {
        Self::new(inner, budget, true)
    }

    /// Proxy default: memo off, no budget.
    pub fn proxy(inner: DistanceOracle<'a>) -> Self {
        Self::new(inner, None, false)
    }

    pub fn inner(&self) -> &DistanceOracle<'a> {
        &self.inner
    }

    pub fn kind(&self) -> OracleKind {
        self.inner.kind()
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn calls(&self) -> u64 {
        self.state.lock().unwrap().calls
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.calls()))
    }

    pub fn distance(&self, a: PointRef, b: u32) -> std::result::Result<f64, OracleError> {
        let key = match a {
            PointRef::Corpus(x) if x > b => (PointRef::Corpus(b), x),
            _ => (a, b),
        };
        let mut state = self.state.lock().unwrap();
        if let Some(v) = state.memo.as_ref().and_then(|m| m.get(&key)) {
            return Ok(*v);
        }
        #[cfg(not(feature = "mutant-skip-budget-check"))]
        if let Some(budget) = self.budget {
            if state.calls >= budget {
                return Err(OracleError::BudgetExhausted { calls: state.calls });
            }
        }
        let v = self.inner.between(a, b)?;
        state.calls += 1;
        if let Some(memo) = state.memo.as_mut() {
            memo.insert(key, v);
        }
        Ok(v)
    }
}

/// Which pairs a validation looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSample {
    Exhaustive,
    Random { count: usize, seed: u64 },
}

impl PairSample {
    fn pairs(self, n: usize) -> Vec<(u32, u32)> {
        match self {
            PairSample::Exhaustive => (0..n as u32)
                .flat_map(|i| (i + 1..n as u32).map(move |j| (i, j)))
                .collect(),
            PairSample::Random { count, seed } => {
                use rand::Rng;
                if n < 2 {
                    return Vec::new();
                }
                let mut rng = crate::seed::rng(seed, "pair-sample");
                (0..count)
                    .map(|_| {
                        let i = rng.random_range(0..n as u32);
                        let mut j = rng.random_range(0..n as u32 - 1);
                        if j >= i {
                            j += 1;
                        }
                        (i.min(j), i.max(j))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub x: u32,
    pub y: u32,
    pub d_value: f64,
    #[serde(rename = "D_value")]
    pub big_d_value: f64,
}

/// Outcome of checking `d <= D <= C·d` on a set of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub c_tested: f64,
    /// Smallest factor that would satisfy the upper side; when the lower side
    /// fails somewhere, the factor needed after rescaling `d` by the minimum
    /// ratio. Infinite if some pair has `d = 0 < D`.
    pub c_required: f64,
    pub pairs_checked: usize,
    pub violation_count: usize,
    /// First violations in pair order, at most [`ApproxReport::MAX_LISTED`].
    pub violations: Vec<Violation>,
}

impl ApproxReport {
    pub const MAX_LISTED: usize = 1000;

    pub fn holds(&self) -> bool {
        self.violation_count == 0
    }
}

/// Checks whether `d` is a `c`-approximation of `big_d` on the selected pairs.
pub fn validate_c_approx<P: Metric + ?Sized, T: Metric + ?Sized>(
    d: &P,
    big_d: &T,
    c: f64,
    pairs: PairSample,
) -> Result<ApproxReport> {
    if !(c >= 1.0) {
        return Err(Error::Parameter(format!("C must be >= 1, got {c}")));
    }
    if d.len() != big_d.len() {
        return Err(Error::Parameter(format!(
            "point counts differ: {} vs {}",
            d.len(),
            big_d.len()
        )));
    }
    let pairs = pairs.pairs(d.len());
    let mut lo = f64::INFINITY;
    let mut hi = 1.0f64;
    let mut violations = Vec::new();
    let mut violation_count = 0;
    for &(x, y) in &pairs {
        let dv = d.distance(x, y);
        let bv = big_d.distance(x, y);
        if dv == 0.0 {
            if bv > 0.0 {
                hi = f64::INFINITY;
            }
        } else {
            let ratio = bv / dv;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if dv > bv || bv > c * dv {
            violation_count += 1;
            if violations.len() < ApproxReport::MAX_LISTED {
                violations.push(Violation {
                    x,
                    y,
                    d_value: dv,
                    big_d_value: bv,
                });
            }
        }
    }
    let c_required = if lo < 1.0 { hi / lo } else { hi };
    Ok(ApproxReport {
        c_tested: c,
        c_required,
        pairs_checked: pairs.len(),
        violation_count,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    /// Multiply `d` by this to make `s·d <= D` on the sample.
    pub scale: f64,
    /// `(max D/d) / (min D/d)`.
    pub c_hat: f64,
}

/// Rescale factor from explicit `(d, D)` value pairs; zero-`d` pairs are skipped.
pub fn rescale_from_values(values: impl IntoIterator<Item = (f64, f64)>) -> Result<Rescale> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (dv, bv) in values {
        if dv > 0.0 {
            lo = lo.min(bv / dv);
            hi = hi.max(bv / dv);
        }
    }
    if !lo.is_finite() {
        return Err(Error::Parameter(
            "no sampled pair with nonzero proxy distance".into(),
        ));
    }
    if lo <= 0.0 {
        return Err(Error::Parameter(
            "ground-truth distance is zero on a pair with nonzero proxy distance".into(),
        ));
    }
    Ok(Rescale {
        scale: lo,
        c_hat: hi / lo,
    })
}

pub fn rescale_proxy<P: Metric + ?Sized, T: Metric + ?Sized>(
    d: &P,
    big_d: &T,
    pairs: PairSample,
) -> Result<Rescale> {
    if d.len() != big_d.len() {
        return Err(Error::Parameter(format!(
            "point counts differ: {} vs {}",
            d.len(),
            big_d.len()
        )));
    }
    rescale_from_values(
        pairs
            .pairs(d.len())
            .into_iter()
            .map(|(x, y)| (d.distance(x, y), big_d.distance(x, y))),
    )
}
