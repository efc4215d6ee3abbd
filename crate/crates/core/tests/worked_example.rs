//! The eight-node example graph: ordering, window mapping, shared pairs and
//! the lowered instruction stream.

mod common;

use common::{eight_node_graph, v};
use rubik_core::codegen::{instruction_census, lower, Opcode};
use rubik_core::gcn::graphsage;
use rubik_core::graph::NodeId;
use rubik_core::mapper::{assign_windows, plan_model};
use rubik_core::reorder::{
    find_shared_pairs, lsh_signature, reorder_lsh, ExecutionPlan, Hyperplanes, LshParams, Permutation, Strategy,
};
use rubik_core::sim::HardwareConfig;

const ORDER: [u64; 8] = [2, 6, 4, 5, 8, 3, 1, 7];

fn labels(g: &rubik_core::graph::Graph, ids: &[NodeId]) -> Vec<u64> {
    ids.iter().map(|&u| g.original_id(u)).collect()
}

fn stated_plan(g: &rubik_core::graph::Graph) -> ExecutionPlan {
    let order = ORDER.iter().map(|&l| v(g, l)).collect();
    ExecutionPlan::with_permutation(g, Strategy::LrCr, Permutation::from_order(order).unwrap())
}

#[test]
fn adjacency_rows() {
    let g = eight_node_graph(4);
    assert_eq!(g.num_nodes(), 8);
    assert_eq!(labels(&g, g.neighbors(v(&g, 6))), vec![4, 5, 6, 8]);
    assert_eq!(g.neighbors(v(&g, 2)), g.neighbors(v(&g, 4)));
}

#[test]
fn windows_of_the_stated_order() {
    let g = eight_node_graph(4);
    let a = assign_windows(&stated_plan(&g), 2, 4).unwrap();
    assert_eq!(labels(&g, a.pe_nodes(0)), vec![2, 6, 4, 5]);
    assert_eq!(labels(&g, a.pe_nodes(1)), vec![8, 3, 1, 7]);
}

#[test]
fn shared_pairs_of_the_stated_order() {
    let g = eight_node_graph(4);
    let plan = stated_plan(&g);
    let found: Vec<((u64, u64), Vec<u64>)> = plan
        .shared_pairs
        .iter()
        .map(|p| {
            let (a, b) = p.tag();
            ((g.original_id(a), g.original_id(b)), labels(&g, &p.shared_set))
        })
        .collect();
    assert_eq!(found, vec![((2, 6), vec![4, 5]), ((3, 8), vec![1, 7])]);
}

#[test]
fn two_load_i_per_aggregating_layer() {
    let g = eight_node_graph(4);
    let plan = stated_plan(&g);
    let model = graphsage(4, 4, 1);
    let hw = HardwareConfig {
        pe_rows: 1,
        pe_cols: 2,
        ..HardwareConfig::default()
    };
    let a = assign_windows(&plan, 2, 4).unwrap();
    let manifest = plan_model(&g, &model, &plan, &a, &hw).unwrap();
    let stream = lower(&manifest, &plan).unwrap();
    let census = instruction_census(&stream);
    assert_eq!(census.layers.len(), 2);
    for layer in &census.layers {
        assert_eq!(layer.load_i, 2);
        assert_eq!(layer.store_i, 2);
        assert_eq!(layer.store, 8);
    }

    // V6 reads the (V2, V6) partial and fetches only V8 individually.
    let v6 = v(&g, 6);
    let ops: Vec<&Opcode> = stream
        .layer(0, 0)
        .iter()
        .filter(|i| i.owner == v6)
        .map(|i| &i.op)
        .collect();
    let loads: Vec<String> = ops
        .iter()
        .filter_map(|op| match op {
            Opcode::LoadF(u) => Some(format!("F{}", g.original_id(*u))),
            Opcode::LoadI { pair, .. } => Some(format!("I{}{}", g.original_id(pair.0), g.original_id(pair.1))),
            _ => None,
        })
        .collect();
    assert_eq!(loads, vec!["I26", "F6", "F8"]);
    assert!(matches!(ops.last(), Some(Opcode::Store { .. })));
}

#[test]
fn identical_rows_always_share_a_bucket() {
    let g = eight_node_graph(4);
    let (r2, r4) = (v(&g, 2), v(&g, 4));
    let mut adjacent = 0;
    for seed in 0..100 {
        let planes = Hyperplanes::generate(8, 8, seed);
        assert_eq!(
            lsh_signature(g.neighbors(r2), &planes),
            lsh_signature(g.neighbors(r4), &planes)
        );
        let perm = reorder_lsh(&g, &LshParams::with_seed(seed)).unwrap();
        if perm.position(r2).abs_diff(perm.position(r4)) == 1 {
            adjacent += 1;
        }
    }
    assert!(adjacent >= 80, "rows 2 and 4 adjacent in {adjacent}/100 orders");
}

#[test]
fn lsh_orders_find_pairs_only_where_rows_overlap() {
    let g = eight_node_graph(4);
    for seed in 0..20 {
        let perm = reorder_lsh(&g, &LshParams::with_seed(seed)).unwrap();
        for p in find_shared_pairs(&g, &perm) {
            assert!(p.shared_set.len() >= 2);
        }
    }
}
