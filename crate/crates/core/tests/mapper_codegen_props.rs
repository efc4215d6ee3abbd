mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::strategy::Strategy as Gen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rubik_core::codegen::{instruction_census, lower, CompKind, InstructionStream, Opcode};
use rubik_core::gcn::{Aggregator, ModelSpec, UpdateKind};
use rubik_core::graph::{Graph, NodeId};
use rubik_core::mapper::{assign_windows, plan_model, tile_matvec, Manifest};
use rubik_core::reorder::{ExecutionPlan, LshParams, Permutation, Strategy};
use rubik_core::sim::HardwareConfig;

fn hw(pes: usize) -> HardwareConfig {
    HardwareConfig {
        pe_rows: 1,
        pe_cols: pes,
        ..HardwareConfig::default()
    }
}

fn build(g: &Graph, m: &ModelSpec, plan: &ExecutionPlan, pes: usize, window: usize) -> (Manifest, InstructionStream) {
    let hw = hw(pes);
    let a = assign_windows(plan, pes, window).unwrap();
    let manifest = plan_model(g, m, plan, &a, &hw).unwrap();
    let stream = lower(&manifest, plan).unwrap();
    (manifest, stream)
}

fn graphs() -> impl Gen<Value = Graph> {
    (2usize..48, 0.05f64..0.5, any::<bool>(), any::<u64>())
        .prop_map(|(n, p, directed, seed)| common::random_graph(n, p, directed, 8, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tiles_partition_the_matrix(i in 1usize..70, o in 1usize..70, r in 1usize..9, c in 1usize..9) {
        let plan = tile_matvec(i, o, r, c);
        let mut seen = vec![0u8; i * o];
        for t in &plan.tiles {
            prop_assert!(t.out.len() <= r && t.inp.len() <= c);
            for a in t.out.clone() {
                for b in t.inp.clone() {
                    seen[a * i + b] += 1;
                }
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        prop_assert_eq!(plan.tiles.len(), o.div_ceil(r) * i.div_ceil(c));
    }

    #[test]
    fn windows_partition_and_keep_pairs_local(g in graphs(), seed in any::<u64>(), pes in 1usize..6, half in 1usize..8) {
        let plan = ExecutionPlan::build(&g, Strategy::LrCr, &LshParams::with_seed(seed)).unwrap();
        let a = assign_windows(&plan, pes, 2 * half).unwrap();
        let concat: Vec<NodeId> = a.windows.iter().flat_map(|w| w.nodes.clone()).collect();
        prop_assert_eq!(concat.as_slice(), plan.permutation.order());
        let owners = a.owners();
        prop_assert_eq!(owners.len(), g.num_nodes());
        for p in &plan.shared_pairs {
            prop_assert_eq!(owners[&p.consumers.0], owners[&p.consumers.1]);
        }
        let loads: Vec<usize> = a.per_pe.iter().map(Vec::len).collect();
        prop_assert!(loads.iter().max().unwrap() - loads.iter().min().unwrap() <= 2 * half);
    }

    #[test]
    fn mac_work_is_independent_of_mapping(g in graphs(), seed in any::<u64>(), pes in 1usize..5, half in 1usize..6) {
        let m = common::sage_small(8, seed);
        for s in Strategy::ALL {
            let plan = ExecutionPlan::build(&g, s, &LshParams::with_seed(seed)).unwrap();
            let (one, _) = build(&g, &m, &plan, 1, 2);
            let (many, _) = build(&g, &m, &plan, pes, 2 * half);
            prop_assert_eq!(one.mac_ops(), many.mac_ops());
        }
    }

    #[test]
    fn reuse_only_removes_work(g in graphs(), seed in any::<u64>()) {
        let m = common::gin_small(8, seed);
        let lr = ExecutionPlan::build(&g, Strategy::Lr, &LshParams::with_seed(seed)).unwrap();
        let lrcr = ExecutionPlan::build(&g, Strategy::LrCr, &LshParams::with_seed(seed)).unwrap();
        let (ml, sl) = build(&g, &m, &lr, 4, 4);
        let (mc, sc) = build(&g, &m, &lrcr, 4, 4);
        for (a, b) in ml.layers.iter().zip(&mc.layers) {
            prop_assert!(b.agg_mac_ops() <= a.agg_mac_ops());
            if a.aggregates {
                prop_assert_eq!(b.agg_mac_ops() == a.agg_mac_ops(), lrcr.shared_pairs.is_empty());
            }
        }
        let (cl, cc) = (instruction_census(&sl), instruction_census(&sc));
        for (a, b) in cl.layers.iter().zip(&cc.layers) {
            prop_assert!(b.load_f + 2 * b.load_i <= a.load_f);
        }
    }

    #[test]
    fn stream_well_formed(g in graphs(), seed in any::<u64>(), s in prop_oneof![Just(Strategy::IndexOrder), Just(Strategy::Lr), Just(Strategy::LrCr)]) {
        let m = common::gin_small(8, seed);
        let plan = ExecutionPlan::build(&g, s, &LshParams::with_seed(seed)).unwrap();
        let (_, stream) = build(&g, &m, &plan, 3, 4);
        let census = instruction_census(&stream);
        for (k, layer) in m.layers.iter().enumerate() {
            if layer.aggregates() && s == Strategy::IndexOrder {
                prop_assert_eq!(census.layers[k].load_f as usize, g.num_edges());
            }
            let mut stores = BTreeMap::new();
            for pe in 0..stream.num_pes() {
                // Per node block: loads, then tiles, then the store.
                let mut phase: BTreeMap<NodeId, u8> = BTreeMap::new();
                let mut published = BTreeSet::new();
                for ins in stream.layer(pe, k) {
                    let ph = phase.entry(ins.owner).or_insert(0);
                    match &ins.op {
                        Opcode::LoadF(_) | Opcode::LoadI { .. } => prop_assert_eq!(*ph, 0),
                        Opcode::Comp(CompKind::AggAdd { .. }) | Opcode::StoreI { .. } => prop_assert_eq!(*ph, 0),
                        Opcode::Comp(CompKind::UpdateTile { .. }) => { prop_assert!(*ph <= 1); *ph = 1; }
                        Opcode::Store { node, bytes } => {
                            prop_assert_eq!(*node, ins.owner);
                            prop_assert_eq!(*bytes as usize, layer.out_dim * 4);
                            *ph = 2;
                            *stores.entry(*node).or_insert(0) += 1;
                        }
                    }
                    if let Opcode::StoreI { pair, .. } = &ins.op {
                        published.insert(*pair);
                    }
                    if let Opcode::LoadI { pair, .. } = &ins.op {
                        prop_assert!(pair.0 < pair.1);
                        prop_assert!(published.contains(pair));
                    }
                }
            }
            prop_assert_eq!(stores.len(), g.num_nodes());
            prop_assert!(stores.values().all(|&c| c == 1));
        }
    }
}

/// `pairs` twins, each pair sharing `k_i` pool nodes plus private extras.
/// Directed, so rows are exactly as built. Returns the graph, the execution
/// order placing twins at even positions, and the closed-form saving in
/// vectors, `sum(k_i - 1)`.
fn twin_graph(seed: u64) -> (Graph, Permutation, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = rng.random_range(2..8usize);
    let ks: Vec<usize> = (0..pairs).map(|_| rng.random_range(2..7)).collect();
    let extras: Vec<(usize, usize)> = (0..pairs)
        .map(|_| (rng.random_range(0..3), rng.random_range(0..3)))
        .collect();
    let leaves: usize = ks.iter().sum::<usize>() + extras.iter().map(|(a, b)| a + b).sum::<usize>();
    let n = 2 * pairs + leaves;
    let mut next = 2 * pairs as NodeId;
    let mut fresh = || {
        next += 1;
        next - 1
    };
    let mut edges = Vec::new();
    for i in 0..pairs {
        let (a, b) = (2 * i as NodeId, 2 * i as NodeId + 1);
        for _ in 0..ks[i] {
            let u = fresh();
            edges.push((a, u));
            edges.push((b, u));
        }
        for _ in 0..extras[i].0 {
            edges.push((a, fresh()));
        }
        for _ in 0..extras[i].1 {
            edges.push((b, fresh()));
        }
    }
    let g = Graph::from_edges(n, edges, true).unwrap().with_feature_dim(8);
    let order = Permutation::identity(n);
    (g, order, ks.iter().map(|k| k - 1).sum())
}

#[test]
fn twin_pair_savings_match_closed_form() {
    let dim = 8u64;
    for seed in 0..10 {
        let (g, order, saved_vectors) = twin_graph(seed);
        let m = ModelSpec::single_layer("sum", 8, 8, Aggregator::Sum, UpdateKind::SageConcat, seed);
        let lr = ExecutionPlan::with_permutation(&g, Strategy::Lr, order.clone());
        let lrcr = ExecutionPlan::with_permutation(&g, Strategy::LrCr, order);
        let (ml, _) = build(&g, &m, &lr, 1, 2);
        let (mc, sc) = build(&g, &m, &lrcr, 1, 2);
        assert_eq!(
            ml.layers[0].agg_mac_ops() - mc.layers[0].agg_mac_ops(),
            saved_vectors as u64 * dim
        );
        let agg_elems: u64 = sc
            .iter()
            .filter_map(|(_, i)| match &i.op {
                Opcode::Comp(CompKind::AggAdd { vectors, dim }) => Some(*vectors as u64 * *dim as u64),
                _ => None,
            })
            .sum();
        assert_eq!(agg_elems, mc.layers[0].agg_mac_ops());
    }
}
