//! Untimed reference executor for layer-synchronous GCN forward propagation.
//!
//! Accumulation happens in `f64` and results are rounded to `f32` once per
//! layer. The aggregation accumulator and the tiled matvec kernel are shared
//! with the simulator's trace replay so that both paths perform the same
//! arithmetic in the same order.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{FeatureMatrix, Graph, NodeId};
use crate::reorder::Permutation;

#[derive(Debug, Error, PartialEq)]
pub enum GcnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    /// `act(W · [h ; a] + b)`
    SageConcat,
    /// `act(W2 · act(W1 · ((1 + eps) h + a) + b1) + b2)`
    GinMlp,
    /// `act(W · h + b)`; the aggregate is ignored.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::None => x,
        }
    }
}

/// One weight matrix (`rows x cols`, row-major) and its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseLayer {
    pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let weights = (0..rows * cols)
            .map(|_| rng.random_range(-0.1f32..0.1))
            .collect();
        let bias = (0..rows).map(|_| rng.random_range(-0.1f32..0.1)).collect();
        Self {
            rows,
            cols,
            weights,
            bias,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            rows: dim,
            cols: dim,
            weights,
            bias: vec![0.0; dim],
        }
    }

    /// Parameter count including bias.
    pub fn num_params(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    /// Accumulates `W[rows, cols] · x[cols]` into `acc[rows]`, iterating
    /// columns in ascending order for every output.
    pub fn matvec_tile(&self, rows: Range<usize>, cols: Range<usize>, x: &[f64], acc: &mut [f64]) {
        for r in rows {
            let w = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut s = acc[r];
            for c in cols.clone() {
                s += w[c] as f64 * x[c];
            }
            acc[r] = s;
        }
    }

    /// Adds the bias and applies `act` to a completed accumulator.
    pub fn finish(&self, mut acc: Vec<f64>, act: Activation) -> Vec<f64> {
        for (a, &b) in acc.iter_mut().zip(&self.bias) {
            *a = act.apply(*a + b as f64);
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub aggregator: Aggregator,
    pub update: UpdateKind,
    pub activation: Activation,
    pub epsilon: f64,
    pub seed: u64,
    /// One matrix for SageConcat/Linear, two for GinMlp.
    pub matrices: Vec<DenseLayer>,
}

impl LayerSpec {
    /// Builds a layer with weights drawn from uniform(-0.1, 0.1).
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        aggregator: Aggregator,
        update: UpdateKind,
        activation: Activation,
        epsilon: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrices = match update {
            UpdateKind::SageConcat => vec![DenseLayer::random(out_dim, 2 * in_dim, &mut rng)],
            UpdateKind::GinMlp => vec![
                DenseLayer::random(out_dim, in_dim, &mut rng),
                DenseLayer::random(out_dim, out_dim, &mut rng),
            ],
            UpdateKind::Linear => vec![DenseLayer::random(out_dim, in_dim, &mut rng)],
        };
        Self {
            in_dim,
            out_dim,
            aggregator,
            update,
            activation,
            epsilon,
            seed,
            matrices,
        }
    }

    pub fn aggregates(&self) -> bool {
        self.update != UpdateKind::Linear
    }

    pub fn validate(&self) -> Result<(), GcnError> {
        let expected: Vec<(usize, usize)> = match self.update {
            UpdateKind::SageConcat => vec![(self.out_dim, 2 * self.in_dim)],
            UpdateKind::GinMlp => vec![(self.out_dim, self.in_dim), (self.out_dim, self.out_dim)],
            UpdateKind::Linear => vec![(self.out_dim, self.in_dim)],
        };
        let actual: Vec<_> = self.matrices.iter().map(|m| (m.rows, m.cols)).collect();
        if actual != expected {
            return Err(GcnError::Shape(format!(
                "{:?} layer {}->{} expects matrices {expected:?}, has {actual:?}",
                self.update, self.in_dim, self.out_dim
            )));
        }
        if self
            .matrices
            .iter()
            .any(|m| m.weights.len() != m.rows * m.cols || m.bias.len() != m.rows)
        {
            return Err(GcnError::Shape("weight buffer length mismatch".into()));
        }
        if !self.epsilon.is_finite() {
            return Err(GcnError::Shape("epsilon must be finite".into()));
        }
        Ok(())
    }

    /// Input vector of matvec stage 0.
    pub fn stage0_input(&self, h_v: &[f32], a_v: &[f64]) -> Vec<f64> {
        match self.update {
            UpdateKind::SageConcat => h_v
                .iter()
                .map(|&x| x as f64)
                .chain(a_v.iter().copied())
                .collect(),
            UpdateKind::GinMlp => h_v
                .iter()
                .zip(a_v)
                .map(|(&h, &a)| (1.0 + self.epsilon) * h as f64 + a)
                .collect(),
            UpdateKind::Linear => h_v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Activation applied after matvec `stage`.
    pub fn stage_activation(&self, stage: usize) -> Activation {
        match (self.update, stage) {
            (UpdateKind::GinMlp, 0) => Activation::Relu,
            _ => self.activation,
        }
    }

    pub fn num_params(&self) -> usize {
        self.matrices.iter().map(DenseLayer::num_params).sum()
    }
}

/// Serialized form of a layer; weights are regenerated from `seed`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub in_dim: usize,
    pub out_dim: usize,
    pub aggregator: Aggregator,
    pub update: UpdateKind,
    pub activation: Activation,
    #[serde(default)]
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub layers: Vec<LayerDescriptor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelDescriptor", try_from = "ModelDescriptor")]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl From<ModelSpec> for ModelDescriptor {
    fn from(m: ModelSpec) -> Self {
        ModelDescriptor {
            name: m.name,
            layers: m
                .layers
                .into_iter()
                .map(|l| LayerDescriptor {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    aggregator: l.aggregator,
                    update: l.update,
                    activation: l.activation,
                    epsilon: l.epsilon,
                    seed: l.seed,
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelDescriptor> for ModelSpec {
    type Error = GcnError;

    fn try_from(d: ModelDescriptor) -> Result<Self, GcnError> {
        let layers = d
            .layers
            .into_iter()
            .map(|l| {
                LayerSpec::new(
                    l.in_dim,
                    l.out_dim,
                    l.aggregator,
                    l.update,
                    l.activation,
                    l.epsilon,
                    l.seed,
                )
            })
            .collect();
        let m = ModelSpec {
            name: d.name,
            layers,
        };
        m.validate()?;
        Ok(m)
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), GcnError> {
        if self.layers.is_empty() {
            return Err(GcnError::Shape("model has no layers".into()));
        }
        for l in &self.layers {
            l.validate()?;
        }
        for (k, w) in self.layers.windows(2).enumerate() {
            if w[0].out_dim != w[1].in_dim {
                return Err(GcnError::Shape(format!(
                    "layer {k} out_dim {} != layer {} in_dim {}",
                    w[0].out_dim,
                    k + 1,
                    w[1].in_dim
                )));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// One aggregating layer; handy for traffic experiments.
    pub fn single_layer(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        aggregator: Aggregator,
        update: UpdateKind,
        seed: u64,
    ) -> Self {
        Self {
            name: name.to_string(),
            layers: vec![LayerSpec::new(
                in_dim,
                out_dim,
                aggregator,
                update,
                Activation::None,
                0.0,
                seed,
            )],
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuiltinModels {
    pub graphsage: ModelSpec,
    pub gin: ModelSpec,
}

pub const GRAPHSAGE_HIDDEN: usize = 256;
pub const GIN_HIDDEN: usize = 128;

fn layer_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64 + 1)
}

/// GraphSage: two SageConcat layers with mean aggregation. GIN: five GinMlp
/// layers with sum aggregation followed by two Linear layers.
pub fn builtin_models(in_dim: usize, hidden_override: Option<usize>, seed: u64) -> BuiltinModels {
    BuiltinModels {
        graphsage: graphsage(in_dim, hidden_override.unwrap_or(GRAPHSAGE_HIDDEN), seed),
        gin: gin(in_dim, hidden_override.unwrap_or(GIN_HIDDEN), seed),
    }
}

pub fn graphsage(in_dim: usize, hidden: usize, seed: u64) -> ModelSpec {
    let layers = (0..2)
        .map(|k| {
            LayerSpec::new(
                if k == 0 { in_dim } else { hidden },
                hidden,
                Aggregator::Mean,
                UpdateKind::SageConcat,
                if k == 0 { Activation::Relu } else { Activation::None },
                0.0,
                layer_seed(seed, k),
            )
        })
        .collect();
    ModelSpec {
        name: "graphsage".into(),
        layers,
    }
}

pub fn gin(in_dim: usize, hidden: usize, seed: u64) -> ModelSpec {
    let mut layers: Vec<LayerSpec> = (0..5)
        .map(|k| {
            LayerSpec::new(
                if k == 0 { in_dim } else { hidden },
                hidden,
                Aggregator::Sum,
                UpdateKind::GinMlp,
                Activation::Relu,
                0.0,
                layer_seed(seed, k),
            )
        })
        .collect();
    for k in 5..7 {
        layers.push(LayerSpec::new(
            hidden,
            hidden,
            Aggregator::Sum,
            UpdateKind::Linear,
            if k == 6 { Activation::None } else { Activation::Relu },
            0.0,
            layer_seed(seed, k),
        ));
    }
    ModelSpec {
        name: "gin".into(),
        layers,
    }
}

/// Result of aggregating a subset of neighbors, as held in the G-C cache.
#[derive(Clone, Debug, PartialEq)]
pub struct Partial {
    pub values: Vec<f64>,
    pub count: usize,
}

/// Running neighbor reduction.
#[derive(Clone, Debug)]
pub struct AggAccumulator {
    aggregator: Aggregator,
    values: Vec<f64>,
    count: usize,
}

impl AggAccumulator {
    pub fn new(aggregator: Aggregator, dim: usize) -> Self {
        let init = match aggregator {
            Aggregator::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        Self {
            aggregator,
            values: vec![init; dim],
            count: 0,
        }
    }

    pub fn add_row(&mut self, row: &[f32]) {
        self.fold(row.iter().map(|&x| x as f64));
        self.count += 1;
    }

    pub fn add_partial(&mut self, p: &Partial) {
        if p.count == 0 {
            return;
        }
        self.fold(p.values.iter().copied());
        self.count += p.count;
    }

    fn fold(&mut self, xs: impl Iterator<Item = f64>) {
        match self.aggregator {
            Aggregator::Max => {
                for (a, x) in self.values.iter_mut().zip(xs) {
                    *a = a.max(x);
                }
            }
            _ => {
                for (a, x) in self.values.iter_mut().zip(xs) {
                    *a += x;
                }
            }
        }
    }

    pub fn snapshot(&self) -> Partial {
        Partial {
            values: self.values.clone(),
            count: self.count,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Final aggregate; an empty neighborhood yields zeros.
    pub fn finish(self) -> Vec<f64> {
        let n = self.count;
        if n == 0 {
            return vec![0.0; self.values.len()];
        }
        match self.aggregator {
            Aggregator::Mean => self.values.into_iter().map(|x| x / n as f64).collect(),
            _ => self.values,
        }
    }
}

/// Aggregates `h_u` over `N(v)` in ascending neighbor order.
pub fn aggregate(graph: &Graph, features: &FeatureMatrix, v: NodeId, aggregator: Aggregator) -> Vec<f64> {
    let mut acc = AggAccumulator::new(aggregator, features.dim());
    for &u in graph.neighbors(v) {
        acc.add_row(features.row(u));
    }
    acc.finish()
}

/// Aggregates `shared` first, then `rest`.
pub fn aggregate_split(
    features: &FeatureMatrix,
    shared: &[NodeId],
    rest: &[NodeId],
    aggregator: Aggregator,
) -> Vec<f64> {
    let mut first = AggAccumulator::new(aggregator, features.dim());
    for &u in shared {
        first.add_row(features.row(u));
    }
    let mut acc = AggAccumulator::new(aggregator, features.dim());
    acc.add_partial(&first.snapshot());
    for &u in rest {
        acc.add_row(features.row(u));
    }
    acc.finish()
}

/// Applies the layer's update function to one node.
pub fn update(h_v: &[f32], a_v: &[f64], layer: &LayerSpec) -> Result<Vec<f32>, GcnError> {
    if h_v.len() != layer.in_dim || (layer.aggregates() && a_v.len() != layer.in_dim) {
        return Err(GcnError::Shape(format!(
            "layer expects {} inputs, got h={} a={}",
            layer.in_dim,
            h_v.len(),
            a_v.len()
        )));
    }
    layer.validate()?;
    Ok(update_unchecked(h_v, a_v, layer))
}

pub(crate) fn update_unchecked(h_v: &[f32], a_v: &[f64], layer: &LayerSpec) -> Vec<f32> {
    let mut x = layer.stage0_input(h_v, a_v);
    for (stage, m) in layer.matrices.iter().enumerate() {
        let mut acc = vec![0.0; m.rows];
        m.matvec_tile(0..m.rows, 0..m.cols, &x, &mut acc);
        x = m.finish(acc, layer.stage_activation(stage));
    }
    x.into_iter().map(|v| v as f32).collect()
}

/// Layer-synchronous forward pass visiting nodes in `order`.
pub fn forward(
    graph: &Graph,
    features: &FeatureMatrix,
    model: &ModelSpec,
    order: &Permutation,
) -> Result<FeatureMatrix, GcnError> {
    model.validate()?;
    if features.num_nodes() != graph.num_nodes() || order.len() != graph.num_nodes() {
        return Err(GcnError::Shape(format!(
            "graph has {} nodes, features {}, order {}",
            graph.num_nodes(),
            features.num_nodes(),
            order.len()
        )));
    }
    if features.dim() != model.in_dim() {
        return Err(GcnError::Shape(format!(
            "features have dim {}, model expects {}",
            features.dim(),
            model.in_dim()
        )));
    }
    let mut h = features.clone();
    for layer in &model.layers {
        let mut next = FeatureMatrix::zeros(graph.num_nodes(), layer.out_dim);
        for &v in order.order() {
            let a = if layer.aggregates() {
                aggregate(graph, &h, v, layer.aggregator)
            } else {
                Vec::new()
            };
            let out = update_unchecked(h.row(v), &a, layer);
            next.row_mut(v).copy_from_slice(&out);
        }
        h = next;
    }
    Ok(h)
}

/// Largest elementwise `|a - b| / max(|a|, |b|)`; equal values count as 0.
pub fn max_relative_error(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x as f64, y as f64);
            if x == y {
                0.0
            } else {
                (x - y).abs() / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Hex SHA-256 over the shape and the raw `f32` bits.
pub fn checksum(m: &FeatureMatrix) -> String {
    let mut h = Sha256::new();
    h.update((m.num_nodes() as u64).to_le_bytes());
    h.update((m.dim() as u64).to_le_bytes());
    for v in m.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
