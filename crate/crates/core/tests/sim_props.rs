mod common;

use common::{run, run_with_plan, small_hw};
use proptest::prelude::*;
use proptest::strategy::Strategy as Gen;
use rubik_core::gcn::{checksum, forward, max_relative_error, Aggregator, ModelSpec, UpdateKind};
use rubik_core::graph::{generate_sbm, FeatureMatrix, Graph};
use rubik_core::mapper::tile_matvec;
use rubik_core::pipeline::PipelineOptions;
use rubik_core::reorder::{ExecutionPlan, Permutation, Strategy};
use rubik_core::sim::{lru_reference_oracle, phase_lower_bounds, HardwareConfig, SimOptions, SimReport};

fn strategies() -> impl Gen<Value = Strategy> {
    prop_oneof![Just(Strategy::IndexOrder), Just(Strategy::Lr), Just(Strategy::LrCr)]
}

fn workload() -> impl Gen<Value = (Graph, FeatureMatrix, u64)> {
    (2usize..40, 0.05f64..0.4, any::<bool>(), 1usize..12, any::<u64>()).prop_map(|(n, p, d, dim, seed)| {
        (
            common::random_graph(n, p, d, dim, seed),
            FeatureMatrix::random(n, dim, seed),
            seed,
        )
    })
}

/// DRAM reads predicted from cache misses and weight streaming alone.
fn closed_form_reads(r: &SimReport, m: &ModelSpec, hw: &HardwareConfig, nodes: u64) -> u64 {
    r.layers
        .iter()
        .zip(&m.layers)
        .map(|(l, spec)| {
            let w = l.weight_bytes;
            let gb = hw.global_buffer_bytes as u64;
            l.gd_misses * (spec.in_dim * hw.element_bytes) as u64 + w.min(gb) + nodes * w.saturating_sub(gb)
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn replay_matches_reference((g, x, seed) in workload(), s in strategies(), sage in any::<bool>()) {
        let dim = x.dim();
        let m = if sage { common::sage_small(dim, seed) } else { common::gin_small(dim, seed) };
        let r = run(&g, &m, &x, &small_hw(), s, seed, &PipelineOptions::default());
        let want = forward(&g, &x, &m, &Permutation::identity(g.num_nodes())).unwrap();
        prop_assert!(max_relative_error(r.sim.output.values(), want.values()) <= 1e-5);
        prop_assert_eq!(&r.sim.report.output_checksum, &checksum(&r.sim.output));
    }

    #[test]
    fn traffic_closed_form((g, x, seed) in workload(), s in strategies(), gb in prop_oneof![Just(64usize), Just(2usize << 20)]) {
        let m = common::gin_small(x.dim(), seed);
        let hw = HardwareConfig { global_buffer_bytes: gb, ..small_hw() };
        let r = run(&g, &m, &x, &hw, s, seed, &PipelineOptions::default()).sim.report;
        let n = g.num_nodes() as u64;
        prop_assert_eq!(r.dram_read_bytes, closed_form_reads(&r, &m, &hw, n));
        let writes: u64 = m.layers.iter().map(|l| n * (l.out_dim * 4) as u64).sum();
        prop_assert_eq!(r.dram_write_bytes, writes);
    }

    #[test]
    fn roofline_holds((g, x, seed) in workload(), s in strategies(), cols in 1usize..4) {
        let m = common::sage_small(x.dim(), seed);
        let hw = HardwareConfig { pe_rows: 1, pe_cols: cols, ..HardwareConfig::default() };
        let run = run(&g, &m, &x, &hw, s, seed, &PipelineOptions::default());
        let b = phase_lower_bounds(&run.manifest, &hw);
        let r = &run.sim.report;
        prop_assert!(r.total_cycles as f64 >= b.total.max());
        prop_assert!(r.phases.weight_prologue as f64 >= b.weight_prologue.max());
        prop_assert!(r.phases.aggregate as f64 >= b.aggregate.compute_lb_cycles);
        prop_assert!(r.phases.update as f64 >= b.update.compute_lb_cycles);
        prop_assert!(r.total_cycles >= r.phases.aggregate + r.phases.update);
    }

    #[test]
    fn more_bandwidth_never_slows((g, x, seed) in workload(), s in strategies()) {
        let m = common::gin_small(x.dim(), seed);
        let mut hw = small_hw();
        let mut last = u64::MAX;
        for gbps in [8u64, 16, 32, 64, 128] {
            hw.mem_bandwidth_bytes_per_s = gbps * 1_000_000_000;
            let t = run(&g, &m, &x, &hw, s, seed, &PipelineOptions::default()).sim.report.total_cycles;
            prop_assert!(t <= last, "{gbps} GB/s: {t} > {last}");
            last = t;
        }
    }

    #[test]
    fn cache_decisions_follow_the_oracle((g, x, seed) in workload(), s in strategies(), gd_vectors in 1usize..12, gc_vectors in 1usize..4) {
        let dim = x.dim();
        let m = ModelSpec::single_layer("t", dim, dim, Aggregator::Sum, UpdateKind::SageConcat, seed);
        let hw = HardwareConfig {
            gd_cache_bytes: gd_vectors * dim * 4,
            gc_cache_bytes: gc_vectors * dim * 4,
            ..small_hw()
        };
        let opts = PipelineOptions {
            sim: SimOptions { record_cache_traces: true, ..SimOptions::default() },
            ..PipelineOptions::default()
        };
        let run = run(&g, &m, &x, &hw, s, seed, &opts);
        let traces = run.sim.cache_traces.unwrap();
        for (trace, cap) in [(&traces.gd, gd_vectors), (&traces.gc, gc_vectors)] {
            for per_pe in trace {
                for t in per_pe {
                    let tags: Vec<u64> = t.iter().map(|(tag, _)| *tag).collect();
                    let hits: Vec<bool> = t.iter().map(|(_, h)| *h).collect();
                    prop_assert_eq!(lru_reference_oracle(&tags, cap), hits);
                }
            }
        }
        let r = &run.sim.report;
        let gd_lookups: usize = traces.gd.iter().flatten().map(Vec::len).sum();
        prop_assert_eq!(gd_lookups as u64, r.gd_hits + r.gd_misses);
    }

    #[test]
    fn runs_are_deterministic((g, x, seed) in workload(), s in strategies()) {
        let m = common::gin_small(x.dim(), seed);
        let a = run(&g, &m, &x, &small_hw(), s, seed, &PipelineOptions::default()).sim.report;
        let b = run(&g, &m, &x, &small_hw(), s, seed, &PipelineOptions::default()).sim.report;
        prop_assert_eq!(a, b);
    }
}

#[test]
fn reuse_never_adds_reads_on_communities() {
    for seed in 0..5 {
        let g = generate_sbm(8, 32, 0.5, 0.01, seed).unwrap().with_feature_dim(16);
        let x = FeatureMatrix::random(g.num_nodes(), 16, seed);
        let m = common::gin_small(16, seed);
        let opts = PipelineOptions::default();
        let hw = HardwareConfig::default();
        let lr = run(&g, &m, &x, &hw, Strategy::Lr, seed, &opts).sim.report;
        let lrcr = run(&g, &m, &x, &hw, Strategy::LrCr, seed, &opts).sim.report;
        assert!(lrcr.dram_read_bytes <= lr.dram_read_bytes);
        assert_eq!(lrcr.output_checksum, lr.output_checksum);
    }
}

#[test]
fn dense_matvec_update_cycles() {
    let n = 64;
    let g = Graph::from_edges(n, [], true).unwrap().with_feature_dim(128);
    let x = FeatureMatrix::random(n, 128, 1);
    let m = ModelSpec::single_layer("dense", 128, 128, Aggregator::Sum, UpdateKind::Linear, 1);
    let opts = PipelineOptions {
        sim: SimOptions {
            preresident_features: true,
            ..SimOptions::default()
        },
        ..PipelineOptions::default()
    };
    let hw = HardwareConfig::single_pe();
    let run = run(&g, &m, &x, &hw, Strategy::IndexOrder, 0, &opts);
    assert_eq!(tile_matvec(128, 128, 4, 8).total_cycles(), 512);
    assert_eq!(run.sim.report.phases.update, 64 * 512);
    assert_eq!(run.sim.report.phases.aggregate, 0);
    let b = phase_lower_bounds(&run.manifest, &hw);
    assert_eq!(b.update.compute_lb_cycles, 64.0 * 512.0);
}

#[test]
fn repeated_load_hits_gd() {
    // Nodes 0 and 1 both read node 2; one PE runs them back to back.
    let g = Graph::from_edges(3, [(0, 2), (1, 2)], true).unwrap().with_feature_dim(4);
    let x = FeatureMatrix::random(3, 4, 0);
    let m = ModelSpec::single_layer("t", 4, 4, Aggregator::Sum, UpdateKind::SageConcat, 0);
    let plan = ExecutionPlan::with_permutation(&g, Strategy::IndexOrder, Permutation::identity(3));
    let r = run_with_plan(&g, &m, &x, &HardwareConfig::single_pe(), plan, &PipelineOptions::default());
    assert!(r.sim.report.gd_hits >= 1);
    // Three self probes plus two neighbor loads touch three distinct vectors.
    assert_eq!(r.sim.report.gd_misses, 3);
}
