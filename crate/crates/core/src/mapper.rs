//! Hierarchical task mapping.
//!
//! Graph level: the execution order is cut into windows of consecutive nodes
//! and windows are dealt to PEs round-robin, so shared-pair consumers always
//! land in the same PE. Node level: every vector-matrix product is tiled onto
//! the MAC array output-stationary.

use std::collections::HashMap;
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::gcn::{Aggregator, LayerSpec, ModelSpec};
use crate::graph::{Graph, NodeId};
use crate::reorder::{intersect_sorted, ExecutionPlan};
use crate::sim::HardwareConfig;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("num_pes must be positive")]
    NoPes,
    #[error("window size must be even and at least 2, got {0}")]
    WindowSize(usize),
    #[error("layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Window {
    pub pe: usize,
    pub nodes: Vec<NodeId>,
}

/// Static node-to-PE assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PeAssignment {
    pub window_size: usize,
    /// Windows in execution order.
    pub windows: Vec<Window>,
    /// Per-PE node lists, the concatenation of that PE's windows.
    pub per_pe: Vec<Vec<NodeId>>,
}

impl PeAssignment {
    pub fn num_pes(&self) -> usize {
        self.per_pe.len()
    }

    pub fn pe_nodes(&self, pe: usize) -> &[NodeId] {
        &self.per_pe[pe]
    }

    /// Map from node to owning PE.
    pub fn owners(&self) -> HashMap<NodeId, usize> {
        self.per_pe
            .iter()
            .enumerate()
            .flat_map(|(pe, nodes)| nodes.iter().map(move |&v| (v, pe)))
            .collect()
    }
}

/// One window per PE, rounded up to an even size.
pub fn default_window_size(num_nodes: usize, num_pes: usize) -> usize {
    let w = num_nodes.div_ceil(num_pes.max(1)).max(2);
    w + w % 2
}

pub fn assign_windows(
    plan: &ExecutionPlan,
    num_pes: usize,
    window_size: usize,
) -> Result<PeAssignment, MapError> {
    if num_pes == 0 {
        return Err(MapError::NoPes);
    }
    if window_size < 2 || !window_size.is_multiple_of(2) {
        return Err(MapError::WindowSize(window_size));
    }
    let mut per_pe = vec![Vec::new(); num_pes];
    let windows: Vec<Window> = plan
        .permutation
        .order()
        .chunks(window_size)
        .enumerate()
        .map(|(i, chunk)| {
            let pe = i % num_pes;
            per_pe[pe].extend_from_slice(chunk);
            Window {
                pe,
                nodes: chunk.to_vec(),
            }
        })
        .collect();
    Ok(PeAssignment {
        window_size,
        windows,
        per_pe,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Tile {
    pub out: Range<usize>,
    pub inp: Range<usize>,
}

/// Output-stationary tiling of an `out_dim x in_dim` matrix onto
/// `mac_rows x mac_cols` MACs; one tile per cycle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TilePlan {
    pub in_dim: usize,
    pub out_dim: usize,
    pub mac_rows: usize,
    pub mac_cols: usize,
    pub tiles: Vec<Tile>,
    pub cycles_per_tile: u64,
}

impl TilePlan {
    pub fn total_cycles(&self) -> u64 {
        self.tiles.len() as u64 * self.cycles_per_tile
    }

    pub fn mac_ops(&self) -> u64 {
        (self.in_dim * self.out_dim) as u64
    }
}

pub fn tile_matvec(in_dim: usize, out_dim: usize, mac_rows: usize, mac_cols: usize) -> TilePlan {
    assert!(mac_rows > 0 && mac_cols > 0, "MAC array must be non-empty");
    let mut tiles = Vec::new();
    for o in (0..out_dim).step_by(mac_rows) {
        for i in (0..in_dim).step_by(mac_cols) {
            tiles.push(Tile {
                out: o..(o + mac_rows).min(out_dim),
                inp: i..(i + mac_cols).min(in_dim),
            });
        }
    }
    TilePlan {
        in_dim,
        out_dim,
        mac_rows,
        mac_cols,
        tiles,
        cycles_per_tile: 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PartialRole {
    /// First consumer: aggregates the shared set and publishes it to G-C.
    Publish,
    /// Second consumer: reads the partial from G-C.
    Consume,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SharedWork {
    /// Canonical consumer pair.
    pub tag: (NodeId, NodeId),
    pub role: PartialRole,
    pub shared: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeWork {
    pub node: NodeId,
    /// Neighbors fetched individually, excluding any shared set.
    pub residual: Vec<NodeId>,
    pub shared: Option<SharedWork>,
    /// Element-wise aggregation adds.
    pub agg_adds: u64,
}

impl NodeWork {
    /// Number of individual neighbor feature loads.
    pub fn feature_fetches(&self) -> usize {
        let shared = match &self.shared {
            Some(s) if s.role == PartialRole::Publish => s.shared.len(),
            _ => 0,
        };
        self.residual.len() + shared
    }

    pub fn partial_fetches(&self) -> usize {
        matches!(&self.shared, Some(s) if s.role == PartialRole::Consume) as usize
    }

    /// Vectors folded into the accumulator.
    pub fn agg_vectors(&self) -> usize {
        self.feature_fetches() + self.partial_fetches()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PeWork {
    pub pe: usize,
    pub nodes: Vec<NodeWork>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerManifest {
    pub layer: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub aggregates: bool,
    pub aggregator: Aggregator,
    /// One plan per matvec stage of the update.
    pub update: Vec<TilePlan>,
    pub weight_bytes: usize,
    pub pes: Vec<PeWork>,
}

impl LayerManifest {
    pub fn agg_mac_ops(&self) -> u64 {
        self.nodes().map(|n| n.agg_adds).sum()
    }

    pub fn update_mac_ops_per_node(&self) -> u64 {
        self.update.iter().map(TilePlan::mac_ops).sum()
    }

    pub fn update_mac_ops(&self) -> u64 {
        self.update_mac_ops_per_node() * self.nodes().count() as u64
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeWork> {
        self.pes.iter().flat_map(|p| p.nodes.iter())
    }
}

/// Per-PE work lists of every layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub num_nodes: usize,
    pub element_bytes: usize,
    pub layers: Vec<LayerManifest>,
}

impl Manifest {
    pub fn mac_ops(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| l.agg_mac_ops() + l.update_mac_ops())
            .sum()
    }
}

fn update_tiles(layer: &LayerSpec, hw: &HardwareConfig) -> Vec<TilePlan> {
    layer
        .matrices
        .iter()
        .map(|m| tile_matvec(m.cols, m.rows, hw.mac_rows, hw.mac_cols))
        .collect()
}

/// Work manifest of one layer.
pub fn plan_layer(
    graph: &Graph,
    layer_index: usize,
    layer: &LayerSpec,
    plan: &ExecutionPlan,
    assignment: &PeAssignment,
    hw: &HardwareConfig,
) -> Result<LayerManifest, MapError> {
    layer.validate().map_err(|e| MapError::Shape {
        layer: layer_index,
        msg: e.to_string(),
    })?;
    let mut roles: HashMap<NodeId, SharedWork> = HashMap::new();
    for p in &plan.shared_pairs {
        let (a, b) = p.consumers;
        let (first, second) = if plan.permutation.position(a) <= plan.permutation.position(b) {
            (a, b)
        } else {
            (b, a)
        };
        for (v, role) in [(first, PartialRole::Publish), (second, PartialRole::Consume)] {
            roles.insert(
                v,
                SharedWork {
                    tag: p.tag(),
                    role,
                    shared: p.shared_set.clone(),
                },
            );
        }
    }

    let dim = layer.in_dim as u64;
    let pes = assignment
        .per_pe
        .iter()
        .enumerate()
        .map(|(pe, nodes)| PeWork {
            pe,
            nodes: nodes
                .iter()
                .map(|&v| node_work(graph, v, layer, roles.get(&v), dim))
                .collect(),
        })
        .collect();

    let weight_elems: usize = layer.matrices.iter().map(|m| m.num_params()).sum();
    Ok(LayerManifest {
        layer: layer_index,
        in_dim: layer.in_dim,
        out_dim: layer.out_dim,
        aggregates: layer.aggregates(),
        aggregator: layer.aggregator,
        update: update_tiles(layer, hw),
        weight_bytes: weight_elems * hw.element_bytes,
        pes,
    })
}

fn node_work(
    graph: &Graph,
    v: NodeId,
    layer: &LayerSpec,
    role: Option<&SharedWork>,
    dim: u64,
) -> NodeWork {
    if !layer.aggregates() {
        return NodeWork {
            node: v,
            residual: Vec::new(),
            shared: None,
            agg_adds: 0,
        };
    }
    let neighbors = graph.neighbors(v);
    let Some(role) = role else {
        return NodeWork {
            node: v,
            residual: neighbors.to_vec(),
            shared: None,
            agg_adds: neighbors.len() as u64 * dim,
        };
    };
    debug_assert_eq!(intersect_sorted(neighbors, &role.shared), role.shared);
    let residual: Vec<NodeId> = neighbors
        .iter()
        .copied()
        .filter(|u| role.shared.binary_search(u).is_err())
        .collect();
    let vectors = match role.role {
        PartialRole::Publish => neighbors.len(),
        PartialRole::Consume => 1 + residual.len(),
    };
    NodeWork {
        node: v,
        residual,
        shared: Some(role.clone()),
        agg_adds: vectors as u64 * dim,
    }
}

pub fn plan_model(
    graph: &Graph,
    model: &ModelSpec,
    plan: &ExecutionPlan,
    assignment: &PeAssignment,
    hw: &HardwareConfig,
) -> Result<Manifest, MapError> {
    let layers = model
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| plan_layer(graph, k, l, plan, assignment, hw))
        .collect::<Result<_, _>>()?;
    Ok(Manifest {
        num_nodes: graph.num_nodes(),
        element_bytes: hw.element_bytes,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::{Activation, LayerSpec, UpdateKind};
    use crate::graph::generate_sbm;
    use crate::reorder::{LshParams, Permutation, Strategy};

    fn plan_with_order(n: usize, order: Vec<NodeId>) -> ExecutionPlan {
        let g = Graph::from_edges(n, [], true).unwrap();
        ExecutionPlan::with_permutation(&g, Strategy::Lr, Permutation::from_order(order).unwrap())
    }

    #[test]
    fn single_pe_keeps_order() {
        let plan = plan_with_order(5, vec![3, 1, 4, 0, 2]);
        let a = assign_windows(&plan, 1, 2).unwrap();
        assert_eq!(a.per_pe, vec![vec![3, 1, 4, 0, 2]]);
        assert_eq!(a.windows.len(), 3);
    }

    #[test]
    fn argument_errors() {
        let plan = plan_with_order(4, vec![0, 1, 2, 3]);
        assert_eq!(assign_windows(&plan, 0, 2), Err(MapError::NoPes));
        assert_eq!(assign_windows(&plan, 2, 3), Err(MapError::WindowSize(3)));
        assert_eq!(assign_windows(&plan, 2, 0), Err(MapError::WindowSize(0)));
    }

    #[test]
    fn load_balance_by_brute_force() {
        let plan = plan_with_order(10, (0..10).collect());
        let a = assign_windows(&plan, 3, 4).unwrap();
        let loads: Vec<_> = a.per_pe.iter().map(Vec::len).collect();
        assert_eq!(loads, vec![4, 4, 2]);
        for n in 0..30usize {
            for pes in 1..6 {
                for w in [2, 4, 6] {
                    let plan = plan_with_order(n, (0..n as NodeId).collect());
                    let a = assign_windows(&plan, pes, w).unwrap();
                    let loads: Vec<_> = a.per_pe.iter().map(Vec::len).collect();
                    let spread = loads.iter().max().unwrap() - loads.iter().min().unwrap();
                    assert!(spread <= w, "n={n} pes={pes} w={w} loads={loads:?}");
                    let concat: Vec<_> = a.windows.iter().flat_map(|w| w.nodes.clone()).collect();
                    assert_eq!(concat, plan.permutation.order());
                }
            }
        }
    }

    #[test]
    fn default_window_is_even() {
        assert_eq!(default_window_size(8, 2), 4);
        assert_eq!(default_window_size(256, 64), 4);
        assert_eq!(default_window_size(10, 3), 4);
        assert_eq!(default_window_size(3, 64), 2);
        assert_eq!(default_window_size(0, 4), 2);
    }

    #[test]
    fn tiling_examples() {
        let t = tile_matvec(8, 4, 4, 8);
        assert_eq!(t.tiles.len(), 1);
        assert_eq!(t.total_cycles(), 1);
        let t = tile_matvec(128, 128, 4, 8);
        assert_eq!(t.tiles.len(), 512);
        assert_eq!(t.total_cycles(), 512);
        let t = tile_matvec(1, 1, 4, 8);
        assert_eq!(t.tiles, vec![Tile { out: 0..1, inp: 0..1 }]);
    }

    #[test]
    fn tiles_cover_matrix_exactly_once() {
        for (i, o) in [(13, 7), (8, 8), (33, 65), (1, 9)] {
            let t = tile_matvec(i, o, 4, 8);
            let mut hits = vec![0u8; i * o];
            for tile in &t.tiles {
                assert!(tile.out.len() <= 4 && tile.inp.len() <= 8);
                for r in tile.out.clone() {
                    for c in tile.inp.clone() {
                        hits[r * i + c] += 1;
                    }
                }
            }
            assert!(hits.iter().all(|&h| h == 1));
        }
    }

    #[test]
    fn index_order_fetches_every_edge_once() {
        let g = generate_sbm(4, 8, 0.5, 0.1, 3).unwrap();
        let hw = HardwareConfig::default();
        let plan = ExecutionPlan::build(&g, Strategy::IndexOrder, &LshParams::default()).unwrap();
        let a = assign_windows(&plan, 4, 8).unwrap();
        let layer = LayerSpec::new(4, 4, Aggregator::Sum, UpdateKind::GinMlp, Activation::Relu, 0.0, 1);
        let m = plan_layer(&g, 0, &layer, &plan, &a, &hw).unwrap();
        let fetches: usize = m.nodes().map(NodeWork::feature_fetches).sum();
        assert_eq!(fetches, g.num_edges());
        assert_eq!(m.agg_mac_ops(), (g.num_edges() * 4) as u64);
    }

    #[test]
    fn isolated_node_is_update_only() {
        let g = Graph::from_edges(2, [], false).unwrap();
        let plan = ExecutionPlan::build(&g, Strategy::LrCr, &LshParams::default()).unwrap();
        let a = assign_windows(&plan, 1, 2).unwrap();
        let layer = LayerSpec::new(3, 5, Aggregator::Mean, UpdateKind::SageConcat, Activation::Relu, 0.0, 1);
        let m = plan_layer(&g, 0, &layer, &plan, &a, &HardwareConfig::default()).unwrap();
        for n in m.nodes() {
            assert_eq!(n.feature_fetches(), 0);
            assert_eq!(n.agg_adds, 0);
        }
        assert_eq!(m.update.len(), 1);
        assert_eq!(m.update[0].in_dim, 6);
    }
}
