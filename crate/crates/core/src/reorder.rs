//! Locality-sensitive-hashing row reordering and shared neighbor set mining.
//!
//! Each adjacency row is hashed with sign random projections; nodes are then
//! laid out by signature so that rows with similar neighbor sets end up close
//! together in the execution order. Consecutive position pairs of that order
//! are checked for common neighbors whose partial aggregation can be reused.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NodeId};

#[derive(Debug, Error)]
pub enum ReorderError {
    #[error("invalid LSH parameters: {0}")]
    Params(String),
    #[error("invalid permutation: {0}")]
    Permutation(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshParams {
    pub num_hashes: usize,
    pub seed: u64,
    /// Largest execution-order span searched for shared sets. Pairing itself
    /// always works on spans of two.
    pub window_limit: usize,
}

impl Default for LshParams {
    fn default() -> Self {
        Self {
            num_hashes: 8,
            seed: 0,
            window_limit: 2,
        }
    }
}

impl LshParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ReorderError> {
        if self.num_hashes == 0 {
            return Err(ReorderError::Params("num_hashes must be >= 1".into()));
        }
        if self.window_limit < 2 {
            return Err(ReorderError::Params("window_limit must be >= 2".into()));
        }
        Ok(())
    }
}

/// Execution order of the nodes and its inverse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<NodeId>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n as NodeId).collect(),
            inverse: (0..n).collect(),
        }
    }

    pub fn from_order(order: Vec<NodeId>) -> Result<Self, ReorderError> {
        let n = order.len();
        let mut inverse = vec![usize::MAX; n];
        for (pos, &v) in order.iter().enumerate() {
            let slot = inverse.get_mut(v as usize).ok_or_else(|| {
                ReorderError::Permutation(format!("node {v} out of range for {n} nodes"))
            })?;
            if *slot != usize::MAX {
                return Err(ReorderError::Permutation(format!("node {v} repeated")));
            }
            *slot = pos;
        }
        Ok(Self { order, inverse })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Execution position to node id.
    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    /// Node id to execution position.
    pub fn position(&self, v: NodeId) -> usize {
        self.inverse[v as usize]
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &v)| v as usize == i)
    }

    /// One original node label per line, in execution order.
    pub fn to_text(&self, graph: &Graph) -> String {
        let mut s = String::new();
        for &v in &self.order {
            s.push_str(&graph.original_id(v).to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, graph: &Graph) -> Result<Self, ReorderError> {
        let mut order = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let label: u64 = line.parse().map_err(|_| ReorderError::Parse {
                line: i + 1,
                msg: format!("invalid node id {line:?}"),
            })?;
            let v = graph.dense_id(label).ok_or_else(|| ReorderError::Parse {
                line: i + 1,
                msg: format!("unknown node {label}"),
            })?;
            order.push(v);
        }
        if order.len() != graph.num_nodes() {
            return Err(ReorderError::Permutation(format!(
                "expected {} entries, got {}",
                graph.num_nodes(),
                order.len()
            )));
        }
        Self::from_order(order)
    }
}

/// Two execution-adjacent nodes and the neighbors they have in common.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedPair {
    /// (earlier, later) in execution order.
    pub consumers: (NodeId, NodeId),
    pub shared_set: Vec<NodeId>,
}

impl SharedPair {
    /// Canonical (min, max) consumer pair, used as the G-C tag.
    pub fn tag(&self) -> (NodeId, NodeId) {
        let (a, b) = self.consumers;
        (a.min(b), a.max(b))
    }
}

/// `a b : n1 n2 ...` per pair, using original labels.
pub fn shared_pairs_to_text(pairs: &[SharedPair], graph: &Graph) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&format!(
            "{} {} :",
            graph.original_id(p.consumers.0),
            graph.original_id(p.consumers.1)
        ));
        for &u in &p.shared_set {
            s.push_str(&format!(" {}", graph.original_id(u)));
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    IndexOrder,
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "LR_CR")]
    LrCr,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::IndexOrder, Strategy::Lr, Strategy::LrCr];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::IndexOrder => "index",
            Strategy::Lr => "lr",
            Strategy::LrCr => "lrcr",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = ReorderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_', '&'], "").as_str() {
            "index" | "indexorder" => Ok(Strategy::IndexOrder),
            "lr" => Ok(Strategy::Lr),
            "lrcr" => Ok(Strategy::LrCr),
            _ => Err(ReorderError::Params(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionPlan {
    pub permutation: Permutation,
    pub shared_pairs: Vec<SharedPair>,
    pub strategy: Strategy,
}

impl ExecutionPlan {
    pub fn build(graph: &Graph, strategy: Strategy, lsh: &LshParams) -> Result<Self, ReorderError> {
        let permutation = match strategy {
            Strategy::IndexOrder => Permutation::identity(graph.num_nodes()),
            Strategy::Lr | Strategy::LrCr => reorder_lsh(graph, lsh)?,
        };
        Ok(Self::with_permutation(graph, strategy, permutation))
    }

    /// Plan over a caller supplied order; pairs are mined only for `LrCr`.
    pub fn with_permutation(graph: &Graph, strategy: Strategy, permutation: Permutation) -> Self {
        let shared_pairs = match strategy {
            Strategy::LrCr => find_shared_pairs(graph, &permutation),
            _ => Vec::new(),
        };
        Self {
            permutation,
            shared_pairs,
            strategy,
        }
    }
}

/// `num_hashes` random hyperplanes of dimension `n`, standard normal entries.
#[derive(Clone, Debug)]
pub struct Hyperplanes {
    dim: usize,
    /// Row-major `num_hashes x dim`.
    coeffs: Vec<f64>,
    num_hashes: usize,
}

impl Hyperplanes {
    pub fn generate(dim: usize, num_hashes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..dim * num_hashes)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            dim,
            coeffs,
            num_hashes,
        }
    }

    pub fn num_hashes(&self) -> usize {
        self.num_hashes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn plane(&self, h: usize) -> &[f64] {
        &self.coeffs[h * self.dim..(h + 1) * self.dim]
    }
}

/// Packed signature bits, bit 0 most significant so derived `Ord` is the
/// lexicographic order over bits.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature {
    words: Vec<u64>,
    len: usize,
}

impl Signature {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (63 - i % 64) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.bit(i)).collect()
    }
}

/// Hashes one adjacency row given as the sorted list of its nonzero columns.
/// A bit is set only for a strictly positive projection.
pub fn lsh_signature(row: &[NodeId], planes: &Hyperplanes) -> Signature {
    let mut words = vec![0u64; planes.num_hashes.div_ceil(64)];
    for h in 0..planes.num_hashes {
        let plane = planes.plane(h);
        let dot: f64 = row.iter().map(|&u| plane[u as usize]).sum();
        if dot > 0.0 {
            words[h / 64] |= 1 << (63 - h % 64);
        }
    }
    Signature {
        words,
        len: planes.num_hashes,
    }
}

/// Orders nodes by adjacency-row signature, ties broken by node id.
pub fn reorder_lsh(graph: &Graph, params: &LshParams) -> Result<Permutation, ReorderError> {
    params.validate()?;
    let n = graph.num_nodes();
    let planes = Hyperplanes::generate(n, params.num_hashes, params.seed);
    let signatures: Vec<Signature> = (0..n as NodeId)
        .into_par_iter()
        .map(|v| lsh_signature(graph.neighbors(v), &planes))
        .collect();
    let mut order: Vec<NodeId> = (0..n as NodeId).collect();
    order.sort_by(|&a, &b| {
        signatures[a as usize]
            .cmp(&signatures[b as usize])
            .then(a.cmp(&b))
    });
    Permutation::from_order(order)
}

/// Intersection of two sorted id slices.
pub fn intersect_sorted(a: &[NodeId], b: &[NodeId]) -> Vec<NodeId> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Pairs positions (2i, 2i+1) and keeps those sharing at least two neighbors.
pub fn find_shared_pairs(graph: &Graph, perm: &Permutation) -> Vec<SharedPair> {
    perm.order()
        .chunks_exact(2)
        .filter_map(|c| {
            let (a, b) = (c[0], c[1]);
            let shared_set = intersect_sorted(graph.neighbors(a), graph.neighbors(b));
            (shared_set.len() >= 2).then_some(SharedPair {
                consumers: (a, b),
                shared_set,
            })
        })
        .collect()
}

/// Power-of-two histogram of LRU stack distances.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReuseHistogram {
    /// `buckets[0]` holds distances 0 and 1, `buckets[k]` holds `[2^k, 2^(k+1))`.
    pub buckets: Vec<u64>,
    /// First touches.
    pub cold: u64,
    /// Sum of all finite distances.
    pub finite_sum: u64,
}

impl ReuseHistogram {
    pub fn finite_count(&self) -> u64 {
        self.buckets.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cold == 0 && self.finite_count() == 0
    }

    pub fn mean_finite(&self) -> Option<f64> {
        let c = self.finite_count();
        (c > 0).then(|| self.finite_sum as f64 / c as f64)
    }

    fn record(&mut self, d: Option<usize>) {
        match d {
            None => self.cold += 1,
            Some(d) => {
                let b = if d <= 1 { 0 } else { d.ilog2() as usize };
                if self.buckets.len() <= b {
                    self.buckets.resize(b + 1, 0);
                }
                self.buckets[b] += 1;
                self.finite_sum += d as u64;
            }
        }
    }
}

/// The neighbor-feature access stream of a traversal in `perm` order.
pub fn access_sequence(graph: &Graph, perm: &Permutation) -> Vec<NodeId> {
    perm.order()
        .iter()
        .flat_map(|&v| graph.neighbors(v).iter().copied())
        .collect()
}

/// Stack distance of every access: the number of distinct other items
/// touched since the previous access to the same item (`None` on first use).
pub fn stack_distances(seq: &[NodeId]) -> Vec<Option<usize>> {
    // Fenwick tree over access times marking each item's latest access.
    let len = seq.len();
    let mut tree = vec![0i64; len + 1];
    let add = |tree: &mut Vec<i64>, mut i: usize, delta: i64| {
        i += 1;
        while i <= len {
            tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    };
    let prefix = |tree: &Vec<i64>, mut i: usize| {
        let mut s = 0;
        while i > 0 {
            s += tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    };
    let mut last = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(len);
    for (t, &x) in seq.iter().enumerate() {
        match last.insert(x, t) {
            Some(prev) => {
                let between = prefix(&tree, t) - prefix(&tree, prev + 1);
                out.push(Some(between as usize));
                add(&mut tree, prev, -1);
            }
            None => out.push(None),
        }
        add(&mut tree, t, 1);
    }
    out
}

pub fn reuse_distance_profile(graph: &Graph, perm: &Permutation) -> ReuseHistogram {
    let mut h = ReuseHistogram::default();
    for d in stack_distances(&access_sequence(graph, perm)) {
        h.record(d);
    }
    h
}
