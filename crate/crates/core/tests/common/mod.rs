#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rubik_core::gcn::{graphsage, gin, ModelSpec};
use rubik_core::graph::{load_edge_list, EdgeListOptions, FeatureMatrix, Graph, NodeId};
use rubik_core::metrics::EnergyTable;
use rubik_core::pipeline::{run_pipeline, run_plan, PipelineOptions, PipelineRun, Workload};
use rubik_core::reorder::{ExecutionPlan, LshParams, Strategy};
use rubik_core::sim::HardwareConfig;

/// Directed, 1-based, self-loops included. Row i lists the inputs of node i.
pub const EIGHT_NODE_ROWS: [&[u64]; 8] = [
    &[1, 3, 7],
    &[2, 4, 5],
    &[1, 3, 7],
    &[2, 4, 5],
    &[5, 6],
    &[4, 5, 6, 8],
    &[7, 8],
    &[1, 6, 7, 8],
];

pub fn eight_node_graph(feature_dim: usize) -> Graph {
    let mut text = String::new();
    for (i, row) in EIGHT_NODE_ROWS.iter().enumerate() {
        for u in *row {
            text.push_str(&format!("{} {}\n", i + 1, u));
        }
    }
    load_edge_list(
        &text,
        EdgeListOptions {
            directed: true,
            feature_dim,
            base_index: 1,
        },
    )
    .unwrap()
}

/// Dense id of the 1-based label `v`.
pub fn v(g: &Graph, label: u64) -> NodeId {
    g.dense_id(label).unwrap()
}

/// Erdos-Renyi style graph with optional self-loops.
pub fn random_graph(n: usize, p: f64, directed: bool, dim: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for a in 0..n as NodeId {
        for b in 0..n as NodeId {
            if (directed || a <= b) && rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    Graph::from_edges(n, edges, directed).unwrap().with_feature_dim(dim)
}

pub fn gin_small(in_dim: usize, seed: u64) -> ModelSpec {
    gin(in_dim, 8, seed)
}

pub fn sage_small(in_dim: usize, seed: u64) -> ModelSpec {
    graphsage(in_dim, 8, seed)
}

pub fn run(
    graph: &Graph,
    model: &ModelSpec,
    features: &FeatureMatrix,
    hw: &HardwareConfig,
    strategy: Strategy,
    seed: u64,
    opts: &PipelineOptions,
) -> PipelineRun {
    let w = Workload {
        graph,
        model,
        features,
    };
    run_pipeline(&w, hw, strategy, &LshParams::with_seed(seed), &EnergyTable::default(), opts).unwrap()
}

pub fn run_with_plan(
    graph: &Graph,
    model: &ModelSpec,
    features: &FeatureMatrix,
    hw: &HardwareConfig,
    plan: ExecutionPlan,
    opts: &PipelineOptions,
) -> PipelineRun {
    let w = Workload {
        graph,
        model,
        features,
    };
    run_plan(&w, hw, plan, &EnergyTable::default(), opts).unwrap()
}

/// A 2x2 mesh keeps runs fast while still exercising both controllers.
pub fn small_hw() -> HardwareConfig {
    HardwareConfig {
        pe_rows: 2,
        pe_cols: 2,
        ..HardwareConfig::default()
    }
}
