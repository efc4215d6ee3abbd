//! Compressed sparse-row graphs, edge-list ingestion, the binary cache format
//! and synthetic generators.
//!
//! A [`Graph`] is immutable once built. Neighbor slices are kept in canonical
//! form (sorted, duplicate-free), and undirected graphs store both directions
//! so `neighbors(v)` is always a single slice.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense node index after ingestion.
pub type NodeId = u32;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: node id {id} is below base index {base}")]
    Range { line: usize, id: u64, base: u64 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Immutable CSR graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    row_offsets: Vec<usize>,
    neighbor_ids: Vec<NodeId>,
    feature_dim: usize,
    directed: bool,
    /// Original label of each dense node id; `None` means the identity map.
    labels: Option<Vec<u64>>,
}

impl Graph {
    /// Builds a canonical graph from an edge iterator over dense ids.
    ///
    /// Duplicate edges collapse; self-loops are kept. For undirected graphs
    /// every edge is materialized in both adjacency slices.
    pub fn from_edges<I>(num_nodes: usize, edges: I, directed: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
        for (s, d) in edges {
            if s as usize >= num_nodes || d as usize >= num_nodes {
                return Err(GraphError::Argument(format!(
                    "edge ({s}, {d}) out of range for {num_nodes} nodes"
                )));
            }
            pairs.push((s, d));
            if !directed && s != d {
                pairs.push((d, s));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(s, _) in &pairs {
            row_offsets[s as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let neighbor_ids = pairs.into_iter().map(|(_, d)| d).collect();
        Ok(Self {
            row_offsets,
            neighbor_ids,
            feature_dim: 0,
            directed,
            labels: None,
        })
    }

    /// Validates raw CSR arrays against the canonical-form invariants.
    pub fn from_csr(
        row_offsets: Vec<usize>,
        neighbor_ids: Vec<NodeId>,
        feature_dim: usize,
        directed: bool,
    ) -> Result<Self> {
        if row_offsets.is_empty() || row_offsets[0] != 0 {
            return Err(GraphError::Malformed("row_offsets must start at 0".into()));
        }
        let n = row_offsets.len() - 1;
        if *row_offsets.last().unwrap() != neighbor_ids.len() {
            return Err(GraphError::Malformed(
                "row_offsets must end at num_edges".into(),
            ));
        }
        for v in 0..n {
            let (lo, hi) = (row_offsets[v], row_offsets[v + 1]);
            if lo > hi {
                return Err(GraphError::Malformed(format!(
                    "row_offsets decreases at node {v}"
                )));
            }
            let slice = &neighbor_ids[lo..hi];
            if slice.iter().any(|&u| u as usize >= n) {
                return Err(GraphError::Malformed(format!(
                    "neighbor of node {v} out of range"
                )));
            }
            if slice.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GraphError::Malformed(format!(
                    "neighbors of node {v} are not strictly increasing"
                )));
            }
        }
        Ok(Self {
            row_offsets,
            neighbor_ids,
            feature_dim,
            directed,
            labels: None,
        })
    }

    pub fn with_feature_dim(mut self, feature_dim: usize) -> Self {
        self.feature_dim = feature_dim;
        self
    }

    fn with_labels(mut self, labels: Vec<u64>) -> Self {
        let identity = labels.iter().enumerate().all(|(i, &l)| l == i as u64);
        self.labels = if identity { None } else { Some(labels) };
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.row_offsets.len() - 1
    }

    /// Number of stored adjacency slots (each undirected edge counts twice).
    pub fn num_edges(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        let v = v as usize;
        &self.neighbor_ids[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        let v = v as usize;
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn neighbor_ids(&self) -> &[NodeId] {
        &self.neighbor_ids
    }

    /// Label the node carried in its source file.
    pub fn original_id(&self, v: NodeId) -> u64 {
        match &self.labels {
            Some(l) => l[v as usize],
            None => v as u64,
        }
    }

    /// Inverse of [`Graph::original_id`].
    pub fn dense_id(&self, label: u64) -> Option<NodeId> {
        match &self.labels {
            Some(l) => l.binary_search(&label).ok().map(|i| i as NodeId),
            None => (label < self.num_nodes() as u64).then_some(label as NodeId),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.num_nodes() as NodeId
    }

    pub fn stats(&self) -> GraphStats {
        stats(self)
    }

    /// Writes the graph as an edge list using original labels. Undirected
    /// graphs emit each edge once.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# nodes={} slots={} directed={}\n",
            self.num_nodes(),
            self.num_edges(),
            self.directed
        ));
        for v in self.nodes() {
            for &u in self.neighbors(v) {
                if self.directed || v <= u {
                    out.push_str(&format!(
                        "{} {}\n",
                        self.original_id(v),
                        self.original_id(u)
                    ));
                }
            }
        }
        out
    }

    /// Serializes to the `RBKG` binary cache format.
    ///
    /// Layout (little endian): magic, version u32, num_nodes u64,
    /// num_edges u64, feature_dim u32, flags u32, then row_offsets as u64,
    /// neighbor_ids as u32 and, when flag bit 1 is set, one u64 label per
    /// node.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut flags = 0u32;
        if self.directed {
            flags |= FLAG_DIRECTED;
        }
        if self.labels.is_some() {
            flags |= FLAG_LABELS;
        }
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.num_nodes() as u64).to_le_bytes())?;
        w.write_all(&(self.num_edges() as u64).to_le_bytes())?;
        w.write_all(&(self.feature_dim as u32).to_le_bytes())?;
        w.write_all(&flags.to_le_bytes())?;
        for &o in &self.row_offsets {
            w.write_all(&(o as u64).to_le_bytes())?;
        }
        for &u in &self.neighbor_ids {
            w.write_all(&u.to_le_bytes())?;
        }
        if let Some(labels) = &self.labels {
            for &l in labels {
                w.write_all(&l.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(GraphError::Malformed("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != BINARY_VERSION {
            return Err(GraphError::Malformed(format!(
                "unsupported version {version}"
            )));
        }
        let n = read_u64(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        let feature_dim = read_u32(&mut r)? as usize;
        let flags = read_u32(&mut r)?;
        let mut row_offsets = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            row_offsets.push(read_u64(&mut r)? as usize);
        }
        let mut neighbor_ids = Vec::with_capacity(m);
        for _ in 0..m {
            neighbor_ids.push(read_u32(&mut r)?);
        }
        let mut g = Graph::from_csr(
            row_offsets,
            neighbor_ids,
            feature_dim,
            flags & FLAG_DIRECTED != 0,
        )?;
        if flags & FLAG_LABELS != 0 {
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                labels.push(read_u64(&mut r)?);
            }
            if labels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GraphError::Malformed("labels not increasing".into()));
            }
            g.labels = Some(labels);
        }
        Ok(g)
    }
}

const BINARY_MAGIC: &[u8; 4] = b"RBKG";
const BINARY_VERSION: u32 = 1;
const FLAG_DIRECTED: u32 = 1;
const FLAG_LABELS: u32 = 2;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Options for [`load_edge_list`].
#[derive(Clone, Copy, Debug)]
pub struct EdgeListOptions {
    pub directed: bool,
    pub feature_dim: usize,
    /// Smallest legal id in the file, 0 or 1.
    pub base_index: u64,
}

impl Default for EdgeListOptions {
    fn default() -> Self {
        Self {
            directed: false,
            feature_dim: 16,
            base_index: 0,
        }
    }
}

/// Parses a whitespace separated `src dst` edge list.
///
/// Ids are compacted to dense 0-based indices in ascending label order; the
/// original labels stay available through [`Graph::original_id`].
pub fn load_edge_list(text: &str, opts: EdgeListOptions) -> Result<Graph> {
    if opts.base_index > 1 {
        return Err(GraphError::Argument(format!(
            "base_index must be 0 or 1, got {}",
            opts.base_index
        )));
    }
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let (Some(a), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(GraphError::Parse {
                line: lineno,
                msg: "expected exactly two tokens".into(),
            });
        };
        let parse = |t: &str| {
            t.parse::<u64>().map_err(|_| GraphError::Parse {
                line: lineno,
                msg: format!("invalid node id {t:?}"),
            })
        };
        let (s, d) = (parse(a)?, parse(b)?);
        for id in [s, d] {
            if id < opts.base_index {
                return Err(GraphError::Range {
                    line: lineno,
                    id,
                    base: opts.base_index,
                });
            }
        }
        raw.push((s, d));
    }

    let labels: Vec<u64> = raw
        .iter()
        .flat_map(|&(s, d)| [s, d])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dense = |l: u64| labels.binary_search(&l).unwrap() as NodeId;
    let edges: Vec<_> = raw.iter().map(|&(s, d)| (dense(s), dense(d))).collect();
    let g = Graph::from_edges(labels.len(), edges, opts.directed)?
        .with_feature_dim(opts.feature_dim)
        .with_labels(labels);
    Ok(g)
}

/// Dense row-major `f32` node features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    num_nodes: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(num_nodes: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != num_nodes * dim {
            return Err(GraphError::Argument(format!(
                "expected {} values, got {}",
                num_nodes * dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GraphError::Argument(format!("non-finite value at {i}")));
        }
        Ok(Self {
            num_nodes,
            dim,
            values,
        })
    }

    pub fn zeros(num_nodes: usize, dim: usize) -> Self {
        Self {
            num_nodes,
            dim,
            values: vec![0.0; num_nodes * dim],
        }
    }

    /// Uniform(-1, 1) features from a seeded generator.
    pub fn random(num_nodes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..num_nodes * dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        Self {
            num_nodes,
            dim,
            values,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, v: NodeId) -> &[f32] {
        let v = v as usize;
        &self.values[v * self.dim..(v + 1) * self.dim]
    }

    pub fn row_mut(&mut self, v: NodeId) -> &mut [f32] {
        let v = v as usize;
        &mut self.values[v * self.dim..(v + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub avg_degree: f64,
    pub max_degree: usize,
}

pub fn stats(g: &Graph) -> GraphStats {
    let n = g.num_nodes();
    let m = g.num_edges();
    GraphStats {
        num_nodes: n,
        num_edges: m,
        avg_degree: if n == 0 { 0.0 } else { m as f64 / n as f64 },
        max_degree: g.nodes().map(|v| g.degree(v)).max().unwrap_or(0),
    }
}

/// Stochastic block model graph plus the block of every node.
#[derive(Clone, Debug)]
pub struct SbmGraph {
    pub graph: Graph,
    pub blocks: Vec<usize>,
}

/// Undirected stochastic block model graph.
///
/// Block membership is assigned to a seeded random relabeling of the nodes,
/// so communities are not aligned with the id order.
pub fn generate_sbm(
    num_blocks: usize,
    block_size: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<Graph> {
    generate_sbm_labeled(num_blocks, block_size, p_in, p_out, seed).map(|s| s.graph)
}

pub fn generate_sbm_labeled(
    num_blocks: usize,
    block_size: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<SbmGraph> {
    if block_size == 0 {
        return Err(GraphError::Argument("block_size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=p_in).contains(&p_out) {
        return Err(GraphError::Argument(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={p_in} p_out={p_out}"
        )));
    }
    let n = num_blocks * block_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut relabel: Vec<NodeId> = (0..n as NodeId).collect();
    relabel.shuffle(&mut rng);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if i / block_size == j / block_size {
                p_in
            } else {
                p_out
            };
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((relabel[i], relabel[j]));
            }
        }
    }
    let mut blocks = vec![0; n];
    for i in 0..n {
        blocks[relabel[i] as usize] = i / block_size;
    }
    let graph = Graph::from_edges(n, edges, false)?;
    Ok(SbmGraph { graph, blocks })
}

/// Undirected graph with a power-law degree profile.
///
/// Exactly `round(num_nodes * avg_degree_target / 2)` distinct edges are
/// drawn; endpoints are picked with probability proportional to
/// `(i + 1)^(-1 / (exponent - 1))`.
pub fn generate_powerlaw(
    num_nodes: usize,
    avg_degree_target: f64,
    exponent: f64,
    seed: u64,
) -> Result<Graph> {
    if exponent <= 1.0 {
        return Err(GraphError::Argument(format!(
            "exponent must exceed 1, got {exponent}"
        )));
    }
    if avg_degree_target < 0.0 || avg_degree_target > num_nodes.saturating_sub(1) as f64 {
        return Err(GraphError::Argument(format!(
            "average degree {avg_degree_target} infeasible for {num_nodes} nodes"
        )));
    }
    let n = num_nodes;
    let target = ((n as f64 * avg_degree_target) / 2.0).round() as usize;
    let max_pairs = n * n.saturating_sub(1) / 2;
    let target = target.min(max_pairs);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = 1.0 / (exponent - 1.0);
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for i in 0..n {
        acc += ((i + 1) as f64).powf(-gamma);
        cumulative.push(acc);
    }
    let pick = |rng: &mut ChaCha8Rng| {
        let x = rng.random::<f64>() * acc;
        cumulative.partition_point(|&c| c <= x).min(n - 1) as NodeId
    };

    let mut chosen = BTreeSet::new();
    let mut attempts = 0usize;
    let budget = 64 * target + 1024;
    while chosen.len() < target && attempts < budget {
        attempts += 1;
        let (a, b) = (pick(&mut rng), pick(&mut rng));
        if a != b {
            chosen.insert((a.min(b), a.max(b)));
        }
    }
    if chosen.len() < target {
        // Dense targets: fill from the remaining pairs uniformly.
        let mut rest: Vec<(NodeId, NodeId)> = (0..n as NodeId)
            .flat_map(|a| (a + 1..n as NodeId).map(move |b| (a, b)))
            .filter(|p| !chosen.contains(p))
            .collect();
        rest.shuffle(&mut rng);
        let missing = target - chosen.len();
        chosen.extend(rest.into_iter().take(missing));
    }
    Graph::from_edges(n, chosen, false)
}
