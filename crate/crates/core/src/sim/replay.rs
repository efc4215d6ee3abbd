//! Functional replay of an instruction stream using the reference kernels.

use std::collections::HashMap;

use super::SimError;
use crate::codegen::{CompKind, InstructionStream, NodePair, Opcode};
use crate::gcn::{AggAccumulator, LayerSpec, ModelSpec, Partial};
use crate::graph::{FeatureMatrix, Graph, NodeId};

enum Operand {
    Row(NodeId),
    Partial(NodePair),
}

struct NodeState {
    node: NodeId,
    acc: AggAccumulator,
    buffered: Vec<Operand>,
    stage: Option<usize>,
    stage_input: Vec<f64>,
    stage_acc: Vec<f64>,
}

impl NodeState {
    fn new(node: NodeId, layer: &LayerSpec) -> Self {
        Self {
            node,
            acc: AggAccumulator::new(layer.aggregator, layer.in_dim),
            buffered: Vec::new(),
            stage: None,
            stage_input: Vec::new(),
            stage_acc: Vec::new(),
        }
    }

    /// Moves the update pipeline to `stage`, completing earlier stages.
    fn enter_stage(&mut self, stage: usize, layer: &LayerSpec, h_v: &[f32]) -> Result<(), SimError> {
        match self.stage {
            Some(s) if s == stage => return Ok(()),
            Some(s) if s + 1 == stage => {
                let done = std::mem::take(&mut self.stage_acc);
                self.stage_input = layer.matrices[s].finish(done, layer.stage_activation(s));
            }
            None if stage == 0 => {
                let acc = std::mem::replace(&mut self.acc, AggAccumulator::new(layer.aggregator, 0));
                let a = if layer.aggregates() { acc.finish() } else { Vec::new() };
                self.stage_input = layer.stage0_input(h_v, &a);
            }
            _ => {
                return Err(SimError::Replay(format!(
                    "node {}: update stage {stage} out of sequence",
                    self.node
                )))
            }
        }
        self.stage = Some(stage);
        self.stage_acc = vec![0.0; layer.matrices[stage].rows];
        Ok(())
    }
}

/// Re-executes `stream` functionally and returns the final node features.
pub fn replay(
    stream: &InstructionStream,
    graph: &Graph,
    features: &FeatureMatrix,
    model: &ModelSpec,
) -> Result<FeatureMatrix, SimError> {
    if stream.num_layers() != model.layers.len() {
        return Err(SimError::Replay(format!(
            "stream has {} layers, model {}",
            stream.num_layers(),
            model.layers.len()
        )));
    }
    let n = graph.num_nodes();
    let mut h = features.clone();
    for (k, layer) in model.layers.iter().enumerate() {
        let mut next = FeatureMatrix::zeros(n, layer.out_dim);
        let mut written = vec![false; n];
        for pe in 0..stream.num_pes() {
            let mut gc: HashMap<NodePair, Partial> = HashMap::new();
            let mut cur: Option<NodeState> = None;
            for ins in stream.layer(pe, k) {
                if cur.as_ref().map(|c| c.node) != Some(ins.owner) {
                    if let Some(c) = &cur {
                        return Err(SimError::Replay(format!(
                            "PE {pe} layer {k}: node {} left without a store",
                            c.node
                        )));
                    }
                    cur = Some(NodeState::new(ins.owner, layer));
                }
                let st = cur.as_mut().unwrap();
                match &ins.op {
                    Opcode::LoadF(u) => st.buffered.push(Operand::Row(*u)),
                    Opcode::LoadI { pair, .. } => st.buffered.push(Operand::Partial(*pair)),
                    Opcode::Comp(CompKind::AggAdd { vectors, .. }) => {
                        if *vectors as usize != st.buffered.len() {
                            return Err(SimError::Replay(format!(
                                "node {}: AggAdd of {vectors} with {} loaded operands",
                                st.node,
                                st.buffered.len()
                            )));
                        }
                        for op in st.buffered.drain(..) {
                            match op {
                                Operand::Row(u) => st.acc.add_row(h.row(u)),
                                Operand::Partial(p) => {
                                    let partial = gc.get(&p).ok_or_else(|| {
                                        SimError::Replay(format!("partial {p:?} read before written"))
                                    })?;
                                    st.acc.add_partial(partial);
                                }
                            }
                        }
                    }
                    Opcode::StoreI { pair, .. } => {
                        gc.insert(*pair, st.acc.snapshot());
                    }
                    Opcode::Comp(CompKind::UpdateTile { stage, out, inp }) => {
                        let stage = *stage as usize;
                        st.enter_stage(stage, layer, h.row(st.node))?;
                        layer.matrices[stage].matvec_tile(
                            out.start as usize..out.end as usize,
                            inp.start as usize..inp.end as usize,
                            &st.stage_input,
                            &mut st.stage_acc,
                        );
                    }
                    Opcode::Store { node, .. } => {
                        if *node != st.node {
                            return Err(SimError::Replay(format!(
                                "node {} stores into {node}",
                                st.node
                            )));
                        }
                        let last = layer.matrices.len() - 1;
                        st.enter_stage(last, layer, h.row(st.node))?;
                        let st = cur.take().unwrap();
                        let out = layer.matrices[last].finish(st.stage_acc, layer.stage_activation(last));
                        if std::mem::replace(&mut written[*node as usize], true) {
                            return Err(SimError::Replay(format!("node {node} stored twice in layer {k}")));
                        }
                        for (dst, v) in next.row_mut(*node).iter_mut().zip(out) {
                            *dst = v as f32;
                        }
                    }
                }
            }
            if let Some(c) = cur {
                return Err(SimError::Replay(format!(
                    "PE {pe} layer {k}: node {} never stored",
                    c.node
                )));
            }
        }
        if let Some(v) = written.iter().position(|w| !w) {
            return Err(SimError::Replay(format!("node {v} not computed in layer {k}")));
        }
        h = next;
    }
    Ok(h)
}
