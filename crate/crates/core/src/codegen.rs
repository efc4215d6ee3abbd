//! Lowering of work manifests to the load-f / load-i / comp / store micro-ISA.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::graph::NodeId;
use crate::mapper::{Manifest, PartialRole};
use crate::reorder::ExecutionPlan;

pub type NodePair = (NodeId, NodeId);

#[derive(Debug, Error, PartialEq)]
pub enum CodegenError {
    #[error("shared pair ({0}, {1}) is split across PEs {2} and {3}")]
    SplitPair(NodeId, NodeId, usize, usize),
    #[error("node {0} of shared pair is not mapped to any PE")]
    Unmapped(NodeId),
    #[error("PE {pe}: partial {pair:?} consumed before it is published")]
    ConsumeBeforePublish { pe: usize, pair: NodePair },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum CompKind {
    /// Folds `vectors` operands of `dim` elements into the accumulator.
    AggAdd { vectors: u32, dim: u32 },
    /// One MAC-array tile of matvec `stage`.
    UpdateTile {
        stage: u8,
        out: Range<u32>,
        inp: Range<u32>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Opcode {
    LoadF(NodeId),
    /// Loads the partial aggregate tagged by the canonical consumer pair.
    /// `members` is the shared set, used on a G-C miss.
    LoadI { pair: NodePair, members: Box<[NodeId]> },
    Comp(CompKind),
    Store { node: NodeId, bytes: u32 },
    StoreI { pair: NodePair, bytes: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MicroInstruction {
    pub layer: u16,
    pub owner: NodeId,
    pub op: Opcode,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct InstructionStream {
    pes: Vec<Vec<MicroInstruction>>,
    /// Per PE, the start index of every layer plus a final end index.
    layer_bounds: Vec<Vec<usize>>,
    num_layers: usize,
}

impl InstructionStream {
    pub fn num_pes(&self) -> usize {
        self.pes.len()
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn pe(&self, pe: usize) -> &[MicroInstruction] {
        &self.pes[pe]
    }

    pub fn layer(&self, pe: usize, layer: usize) -> &[MicroInstruction] {
        let b = &self.layer_bounds[pe];
        &self.pes[pe][b[layer]..b[layer + 1]]
    }

    pub fn len(&self) -> usize {
        self.pes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &MicroInstruction)> {
        self.pes
            .iter()
            .enumerate()
            .flat_map(|(pe, ins)| ins.iter().map(move |i| (pe, i)))
    }
}

pub fn lower(manifest: &Manifest, plan: &ExecutionPlan) -> Result<InstructionStream, CodegenError> {
    let num_pes = manifest.layers.first().map_or(0, |l| l.pes.len());
    check_pairs(manifest, plan)?;

    let mut pes = vec![Vec::new(); num_pes];
    let mut layer_bounds = vec![Vec::new(); num_pes];
    for layer in &manifest.layers {
        let k = layer.layer as u16;
        let dim = layer.in_dim as u32;
        let store_bytes = (layer.out_dim * manifest.element_bytes) as u32;
        let partial_bytes = (layer.in_dim * manifest.element_bytes) as u32;
        for work in &layer.pes {
            let out = &mut pes[work.pe];
            layer_bounds[work.pe].push(out.len());
            for n in &work.nodes {
                let v = n.node;
                let mut emit = |op| {
                    out.push(MicroInstruction {
                        layer: k,
                        owner: v,
                        op,
                    })
                };
                let mut pending = 0u32;
                if layer.aggregates {
                    match &n.shared {
                        Some(s) if s.role == PartialRole::Publish => {
                            for &u in &s.shared {
                                emit(Opcode::LoadF(u));
                            }
                            emit(Opcode::Comp(CompKind::AggAdd {
                                vectors: s.shared.len() as u32,
                                dim,
                            }));
                            emit(Opcode::StoreI {
                                pair: s.tag,
                                bytes: partial_bytes,
                            });
                        }
                        Some(s) => {
                            emit(Opcode::LoadI {
                                pair: s.tag,
                                members: s.shared.clone().into_boxed_slice(),
                            });
                            pending += 1;
                        }
                        None => {}
                    }
                    for &u in &n.residual {
                        emit(Opcode::LoadF(u));
                    }
                    pending += n.residual.len() as u32;
                    if pending > 0 {
                        emit(Opcode::Comp(CompKind::AggAdd {
                            vectors: pending,
                            dim,
                        }));
                    }
                }
                for (stage, tp) in layer.update.iter().enumerate() {
                    for t in &tp.tiles {
                        emit(Opcode::Comp(CompKind::UpdateTile {
                            stage: stage as u8,
                            out: t.out.start as u32..t.out.end as u32,
                            inp: t.inp.start as u32..t.inp.end as u32,
                        }));
                    }
                }
                emit(Opcode::Store {
                    node: v,
                    bytes: store_bytes,
                });
            }
        }
    }
    for (pe, b) in layer_bounds.iter_mut().enumerate() {
        b.push(pes[pe].len());
    }
    Ok(InstructionStream {
        pes,
        layer_bounds,
        num_layers: manifest.layers.len(),
    })
}

fn check_pairs(manifest: &Manifest, plan: &ExecutionPlan) -> Result<(), CodegenError> {
    let Some(layer) = manifest.layers.first() else {
        return Ok(());
    };
    let owner: HashMap<NodeId, usize> = layer
        .pes
        .iter()
        .flat_map(|p| p.nodes.iter().map(move |n| (n.node, p.pe)))
        .collect();
    for p in &plan.shared_pairs {
        let (a, b) = p.consumers;
        let pa = *owner.get(&a).ok_or(CodegenError::Unmapped(a))?;
        let pb = *owner.get(&b).ok_or(CodegenError::Unmapped(b))?;
        if pa != pb {
            return Err(CodegenError::SplitPair(a, b, pa, pb));
        }
    }
    for layer in manifest.layers.iter().filter(|l| l.aggregates) {
        for work in &layer.pes {
            let mut published = HashSet::new();
            for n in &work.nodes {
                match &n.shared {
                    Some(s) if s.role == PartialRole::Publish => {
                        published.insert(s.tag);
                    }
                    Some(s) if !published.contains(&s.tag) => {
                        return Err(CodegenError::ConsumeBeforePublish {
                            pe: work.pe,
                            pair: s.tag,
                        });
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub load_f: u64,
    pub load_i: u64,
    pub comp_agg: u64,
    pub comp_update: u64,
    pub store: u64,
    pub store_i: u64,
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.load_f += o.load_f;
        self.load_i += o.load_i;
        self.comp_agg += o.comp_agg;
        self.comp_update += o.comp_update;
        self.store += o.store;
        self.store_i += o.store_i;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Census {
    pub layers: Vec<OpCounts>,
}

impl Census {
    pub fn total(&self) -> OpCounts {
        let mut t = OpCounts::default();
        for l in &self.layers {
            t += *l;
        }
        t
    }
}

pub fn instruction_census(stream: &InstructionStream) -> Census {
    let mut layers = vec![OpCounts::default(); stream.num_layers()];
    for (_, ins) in stream.iter() {
        let c = &mut layers[ins.layer as usize];
        match &ins.op {
            Opcode::LoadF(_) => c.load_f += 1,
            Opcode::LoadI { .. } => c.load_i += 1,
            Opcode::Comp(CompKind::AggAdd { .. }) => c.comp_agg += 1,
            Opcode::Comp(CompKind::UpdateTile { .. }) => c.comp_update += 1,
            Opcode::Store { .. } => c.store += 1,
            Opcode::StoreI { .. } => c.store_i += 1,
        }
    }
    Census { layers }
}

/// One line per instruction: `PE<k> L<layer> <OPCODE> <args>`.
pub fn trace_dump(stream: &InstructionStream) -> String {
    let mut s = String::new();
    for (pe, ins) in stream.iter() {
        let _ = write!(s, "PE{pe} L{} ", ins.layer);
        let _ = match &ins.op {
            Opcode::LoadF(u) => writeln!(s, "LOADF {u}"),
            Opcode::LoadI { pair, members } => {
                let m: Vec<String> = members.iter().map(|u| u.to_string()).collect();
                writeln!(s, "LOADI {} {} : {}", pair.0, pair.1, m.join(" "))
            }
            Opcode::Comp(CompKind::AggAdd { vectors, dim }) => {
                writeln!(s, "COMP AGG {} {vectors} {dim}", ins.owner)
            }
            Opcode::Comp(CompKind::UpdateTile { stage, out, inp }) => writeln!(
                s,
                "COMP UPD {} {stage} {}:{} {}:{}",
                ins.owner, out.start, out.end, inp.start, inp.end
            ),
            Opcode::Store { node, bytes } => writeln!(s, "STORE {node} {bytes}"),
            Opcode::StoreI { pair, bytes } => writeln!(s, "STOREI {} {} {bytes}", pair.0, pair.1),
        };
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::{Activation, Aggregator, LayerSpec, UpdateKind};
    use crate::graph::Graph;
    use crate::mapper::{assign_windows, plan_layer, Manifest};
    use crate::reorder::{LshParams, Permutation, SharedPair, Strategy};
    use crate::sim::HardwareConfig;

    fn lower_graph(g: &Graph, plan: &ExecutionPlan, pes: usize, window: usize) -> Result<InstructionStream, CodegenError> {
        let hw = HardwareConfig::default();
        let a = assign_windows(plan, pes, window).unwrap();
        let layer = LayerSpec::new(g.feature_dim(), 4, Aggregator::Sum, UpdateKind::SageConcat, Activation::Relu, 0.0, 2);
        let m = Manifest {
            num_nodes: g.num_nodes(),
            element_bytes: 4,
            layers: vec![plan_layer(g, 0, &layer, plan, &a, &hw).unwrap()],
        };
        lower(&m, plan)
    }

    #[test]
    fn empty_stream_census_is_zero() {
        let s = InstructionStream::default();
        assert_eq!(instruction_census(&s).total(), OpCounts::default());
        assert!(trace_dump(&s).is_empty());
    }

    #[test]
    fn isolated_node_emits_update_and_store_only() {
        let g = Graph::from_edges(2, [], false).unwrap().with_feature_dim(8);
        for strategy in Strategy::ALL {
            let plan = ExecutionPlan::build(&g, strategy, &LshParams::default()).unwrap();
            let s = lower_graph(&g, &plan, 1, 2).unwrap();
            let ops: Vec<_> = s.pe(0).iter().filter(|i| i.owner == 0).map(|i| &i.op).collect();
            assert!(matches!(ops.last(), Some(Opcode::Store { node: 0, bytes: 16 })));
            assert!(ops[..ops.len() - 1]
                .iter()
                .all(|o| matches!(o, Opcode::Comp(CompKind::UpdateTile { .. }))));
            // SageConcat 16 -> 4 on 4x8 MACs: two tiles.
            assert_eq!(ops.len(), 3);
        }
    }

    #[test]
    fn index_order_load_count_equals_edges() {
        let g = crate::graph::generate_sbm(3, 6, 0.6, 0.1, 8).unwrap().with_feature_dim(4);
        let plan = ExecutionPlan::build(&g, Strategy::IndexOrder, &LshParams::default()).unwrap();
        let s = lower_graph(&g, &plan, 4, 2).unwrap();
        let c = instruction_census(&s);
        assert_eq!(c.layers[0].load_f as usize, g.num_edges());
        assert_eq!(c.layers[0].store as usize, g.num_nodes());
        assert_eq!(c.layers[0].load_i, 0);
    }

    #[test]
    fn split_pair_is_rejected() {
        // 0 and 1 share {2, 3}; windows of 2 over 4 PEs would keep them
        // together, so force a pair straddling two windows.
        let g = Graph::from_edges(4, [(0, 2), (0, 3), (1, 2), (1, 3)], true)
            .unwrap()
            .with_feature_dim(2);
        let perm = Permutation::from_order(vec![2, 0, 1, 3]).unwrap();
        let mut plan = ExecutionPlan::with_permutation(&g, Strategy::LrCr, perm);
        plan.shared_pairs = vec![SharedPair {
            consumers: (0, 1),
            shared_set: vec![2, 3],
        }];
        let err = lower_graph(&g, &plan, 2, 2).unwrap_err();
        assert!(matches!(err, CodegenError::SplitPair(0, 1, 0, 1)));
    }

    #[test]
    fn trace_format() {
        let g = Graph::from_edges(2, [(0, 1)], true).unwrap().with_feature_dim(2);
        let plan = ExecutionPlan::build(&g, Strategy::IndexOrder, &LshParams::default()).unwrap();
        let s = lower_graph(&g, &plan, 1, 2).unwrap();
        let t = trace_dump(&s);
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines[0], "PE0 L0 LOADF 1");
        assert_eq!(lines[1], "PE0 L0 COMP AGG 0 1 2");
        assert_eq!(lines[2], "PE0 L0 COMP UPD 0 0 0:4 0:4");
        assert_eq!(lines[3], "PE0 L0 STORE 0 16");
    }
}
