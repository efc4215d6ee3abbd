//! Event-driven timing model.
//!
//! Each PE issues its stream in order, one instruction per cycle. Loads probe
//! the PE's G-D cache at issue; misses travel horizontally to the nearer edge
//! controller, which serves requests first-come-first-serve. Layers are
//! separated by a barrier, after which the next layer's weights are streamed
//! into the global buffer and the private caches start cold.

use std::collections::{BinaryHeap, HashMap};
use std::cmp::Reverse;

use super::cache::{pair_tag, CacheModel, Tag};
use super::noc::{flits, hops, nearer_controller, route_cycles};
use super::replay::replay;
use super::report::{LayerReport, PhaseCycles, SimReport};
use super::{HardwareConfig, SimError};
use crate::codegen::{CompKind, InstructionStream, MicroInstruction, NodePair, Opcode};
use crate::gcn::{checksum, ModelSpec};
use crate::graph::{FeatureMatrix, Graph, NodeId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Installs every feature vector a PE will read into its G-D cache at
    /// layer start, so only weights and stores touch DRAM.
    pub preresident_features: bool,
    /// Keeps every G-D and G-C decision for offline checking.
    pub record_cache_traces: bool,
}

/// Cache decisions indexed `[layer][pe]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CacheTraces {
    pub gd: Vec<Vec<Vec<(Tag, bool)>>>,
    pub gc: Vec<Vec<Vec<(Tag, bool)>>>,
}

#[derive(Clone, Debug)]
pub struct SimRun {
    pub report: SimReport,
    /// Final node features from the functional replay.
    pub output: FeatureMatrix,
    pub cache_traces: Option<CacheTraces>,
}

pub fn simulate(
    stream: &InstructionStream,
    graph: &Graph,
    model: &ModelSpec,
    features: &FeatureMatrix,
    hw: &HardwareConfig,
) -> Result<SimRun, SimError> {
    simulate_with(stream, graph, model, features, hw, &SimOptions::default())
}

pub fn simulate_with(
    stream: &InstructionStream,
    graph: &Graph,
    model: &ModelSpec,
    features: &FeatureMatrix,
    hw: &HardwareConfig,
    opts: &SimOptions,
) -> Result<SimRun, SimError> {
    hw.validate()?;
    model.validate().map_err(|e| SimError::Shape(e.to_string()))?;
    for layer in &model.layers {
        hw.check_feature_dim(layer.in_dim)?;
    }
    if stream.num_pes() != hw.num_pes() {
        return Err(SimError::Shape(format!(
            "stream targets {} PEs, hardware has {}",
            stream.num_pes(),
            hw.num_pes()
        )));
    }
    if stream.num_layers() != model.layers.len() {
        return Err(SimError::Shape(format!(
            "stream has {} layers, model {}",
            stream.num_layers(),
            model.layers.len()
        )));
    }
    if features.num_nodes() != graph.num_nodes() || features.dim() != model.in_dim() {
        return Err(SimError::Shape(format!(
            "features are {}x{}, expected {}x{}",
            features.num_nodes(),
            features.dim(),
            graph.num_nodes(),
            model.in_dim()
        )));
    }

    let output = replay(stream, graph, features, model)?;
    let mut engine = Engine::new(hw, opts);
    let mut t = 0;
    for (k, layer) in model.layers.iter().enumerate() {
        let weight_bytes = (layer.num_params() * hw.element_bytes) as u64;
        let in_bytes = (layer.in_dim * hw.element_bytes) as u64;
        t = engine.run_layer(stream, k, t, weight_bytes, in_bytes)?;
    }
    let traces = std::mem::take(&mut engine.traces);
    let mut report = engine.finish(t);
    report.output_checksum = checksum(&output);
    let cache_traces = opts.record_cache_traces.then_some(traces);
    Ok(SimRun {
        report,
        output,
        cache_traces,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum What {
    Arrive { req: usize },
    Issue { pe: usize, epoch: u64 },
}

/// Ordered by time, then arrivals before issues, then insertion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: u64,
    kind: u8,
    seq: u64,
    what: What,
}

struct Request {
    pe: usize,
    controller: usize,
    bytes: u64,
    write: bool,
    ready: Option<u64>,
}

/// A value becomes usable at `at`, or later if it waits on a DRAM response.
#[derive(Clone, Copy, Debug, Default)]
struct Operand {
    at: u64,
    req: Option<usize>,
}

enum Step {
    Next(u64),
    Block(Option<u64>),
    Done,
}

struct Pe {
    col: usize,
    pc: usize,
    epoch: u64,
    blocked: bool,
    finished: bool,
    last_issue: u64,
    mac_free: u64,
    store_done: u64,
    gd: CacheModel,
    gc: CacheModel,
    feature_req: HashMap<NodeId, usize>,
    gc_ready: HashMap<NodePair, u64>,
    lsq: Vec<usize>,
    noc: Vec<u64>,
    operands: Vec<Operand>,
    extra_vectors: u64,
    owner: Option<NodeId>,
    self_op: Operand,
    overflow: Option<usize>,
    agg_busy: u64,
    upd_busy: u64,
}

impl Pe {
    fn new(col: usize, hw: &HardwareConfig, trace: bool) -> Self {
        let (mut gd, mut gc) = (CacheModel::new(hw.gd_cache_bytes), CacheModel::new(hw.gc_cache_bytes));
        if trace {
            gd = gd.with_trace();
            gc = gc.with_trace();
        }
        Self {
            col,
            pc: 0,
            epoch: 0,
            blocked: false,
            finished: false,
            last_issue: 0,
            mac_free: 0,
            store_done: 0,
            gd,
            gc,
            feature_req: HashMap::new(),
            gc_ready: HashMap::new(),
            lsq: Vec::new(),
            noc: Vec::new(),
            operands: Vec::new(),
            extra_vectors: 0,
            owner: None,
            self_op: Operand::default(),
            overflow: None,
            agg_busy: 0,
            upd_busy: 0,
        }
    }

    fn reset_layer(&mut self, start: u64) {
        self.pc = 0;
        self.blocked = false;
        self.finished = false;
        self.last_issue = start;
        self.mac_free = start;
        self.store_done = start;
        self.gd.invalidate_all();
        self.gc.invalidate_all();
        self.feature_req.clear();
        self.gc_ready.clear();
        self.lsq.clear();
        self.noc.clear();
        self.operands.clear();
        self.extra_vectors = 0;
        self.owner = None;
        self.overflow = None;
    }
}

#[derive(Default)]
struct Counters {
    dram_read: u64,
    dram_write: u64,
    agg_ops: u64,
    upd_ops: u64,
    gb: u64,
    rf: u64,
    flits: u64,
}

struct Engine<'a> {
    hw: &'a HardwareConfig,
    opts: &'a SimOptions,
    pes: Vec<Pe>,
    reqs: Vec<Request>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    ctrl_free: [u64; 2],
    c: Counters,
    prologue_total: u64,
    layers: Vec<LayerReport>,
    traces: CacheTraces,
    // Per-layer constants.
    in_bytes: u64,
    overflow_bytes: u64,
}

impl<'a> Engine<'a> {
    fn new(hw: &'a HardwareConfig, opts: &'a SimOptions) -> Self {
        let pes = (0..hw.num_pes())
            .map(|p| Pe::new(hw.pe_col(p), hw, opts.record_cache_traces))
            .collect();
        Self {
            hw,
            opts,
            pes,
            reqs: Vec::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            ctrl_free: [0; 2],
            c: Counters::default(),
            prologue_total: 0,
            layers: Vec::new(),
            traces: CacheTraces::default(),
            in_bytes: 0,
            overflow_bytes: 0,
        }
    }

    fn push(&mut self, time: u64, what: What) {
        let kind = match what {
            What::Arrive { .. } => 0,
            What::Issue { .. } => 1,
        };
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            kind,
            seq: self.seq,
            what,
        }));
    }

    fn schedule_issue(&mut self, pe: usize, time: u64) {
        let epoch = self.pes[pe].epoch;
        self.push(time, What::Issue { pe, epoch });
    }

    /// Runs layer `k` from cycle `start`; returns the barrier cycle.
    fn run_layer(
        &mut self,
        stream: &InstructionStream,
        k: usize,
        start: u64,
        weight_bytes: u64,
        in_bytes: u64,
    ) -> Result<u64, SimError> {
        let hw = self.hw;
        let resident = weight_bytes.min(hw.global_buffer_bytes as u64);
        let prologue = hw.dram_latency_cycles + (resident as f64 / hw.bytes_per_cycle()).ceil() as u64;
        let compute_start = start + prologue;
        self.prologue_total += prologue;
        self.in_bytes = in_bytes;
        self.overflow_bytes = weight_bytes - resident;
        self.ctrl_free = [compute_start; 2];

        let before = self.snapshot();
        self.c.dram_read += resident;
        self.reqs.clear();
        for p in 0..self.pes.len() {
            self.pes[p].reset_layer(compute_start);
            if self.opts.preresident_features {
                self.preload(p, stream.layer(p, k));
            }
            self.schedule_issue(p, compute_start);
        }

        while let Some(Reverse(ev)) = self.queue.pop() {
            match ev.what {
                What::Arrive { req } => self.arrive(req, ev.time),
                What::Issue { pe, epoch } => {
                    if epoch != self.pes[pe].epoch {
                        continue;
                    }
                    self.pes[pe].blocked = false;
                    let ins = stream.layer(pe, k);
                    match self.step(pe, ev.time, ins) {
                        Step::Next(t) => self.schedule_issue(pe, t),
                        Step::Block(wake) => {
                            let p = &mut self.pes[pe];
                            p.blocked = true;
                            p.epoch += 1;
                            if let Some(w) = wake {
                                self.schedule_issue(pe, w);
                            }
                        }
                        Step::Done => self.pes[pe].finished = true,
                    }
                }
            }
        }
        let stuck = self.pes.iter().filter(|p| !p.finished).count();
        if stuck > 0 {
            return Err(SimError::Stalled(stuck));
        }

        let end = self
            .pes
            .iter()
            .map(|p| p.mac_free.max(p.store_done).max(p.last_issue))
            .max()
            .unwrap_or(compute_start);
        if self.opts.record_cache_traces {
            let gd = self.pes.iter_mut().map(|p| p.gd.take_trace()).collect();
            let gc = self.pes.iter_mut().map(|p| p.gc.take_trace()).collect();
            self.traces.gd.push(gd);
            self.traces.gc.push(gc);
        }
        let after = self.snapshot();
        self.layers.push(LayerReport {
            start_cycle: start,
            end_cycle: end,
            prologue_cycles: prologue,
            weight_bytes,
            dram_read_bytes: after.dram_read - before.dram_read,
            dram_write_bytes: after.dram_write - before.dram_write,
            gd_hits: after.gd_hits - before.gd_hits,
            gd_misses: after.gd_misses - before.gd_misses,
            gc_hits: after.gc_hits - before.gc_hits,
            gc_misses: after.gc_misses - before.gc_misses,
            agg_mac_ops: after.agg_ops - before.agg_ops,
            update_mac_ops: after.upd_ops - before.upd_ops,
        });
        Ok(end)
    }

    fn snapshot(&self) -> Snapshot {
        let mut s = Snapshot {
            dram_read: self.c.dram_read,
            dram_write: self.c.dram_write,
            agg_ops: self.c.agg_ops,
            upd_ops: self.c.upd_ops,
            ..Default::default()
        };
        for p in &self.pes {
            s.gd_hits += p.gd.hits();
            s.gd_misses += p.gd.misses();
            s.gc_hits += p.gc.hits();
            s.gc_misses += p.gc.misses();
        }
        s
    }

    fn preload(&mut self, pe: usize, ins: &[MicroInstruction]) {
        let bytes = self.in_bytes as usize;
        let gd = &mut self.pes[pe].gd;
        for i in ins {
            gd.preload(i.owner as Tag, bytes);
            match &i.op {
                Opcode::LoadF(u) => gd.preload(*u as Tag, bytes),
                Opcode::LoadI { members, .. } => {
                    for &u in members.iter() {
                        gd.preload(u as Tag, bytes);
                    }
                }
                _ => {}
            }
        }
    }

    fn send_read(&mut self, pe: usize, t: u64, bytes: u64) -> usize {
        let hw = self.hw;
        let col = self.pes[pe].col;
        let arrival = t + route_cycles(col, hw.pe_cols, 0, hw);
        let id = self.reqs.len();
        self.reqs.push(Request {
            pe,
            controller: nearer_controller(col, hw.pe_cols).index(),
            bytes,
            write: false,
            ready: None,
        });
        self.c.dram_read += bytes;
        self.c.flits += hops(col, hw.pe_cols) * flits(0, hw);
        let p = &mut self.pes[pe];
        p.lsq.push(id);
        p.noc.push(arrival);
        self.push(arrival, What::Arrive { req: id });
        id
    }

    fn send_write(&mut self, pe: usize, depart: u64, bytes: u64) {
        let hw = self.hw;
        let col = self.pes[pe].col;
        let arrival = depart + route_cycles(col, hw.pe_cols, bytes as usize, hw);
        let id = self.reqs.len();
        self.reqs.push(Request {
            pe,
            controller: nearer_controller(col, hw.pe_cols).index(),
            bytes,
            write: true,
            ready: None,
        });
        self.c.dram_write += bytes;
        self.c.flits += hops(col, hw.pe_cols) * flits(bytes as usize, hw);
        self.push(arrival, What::Arrive { req: id });
    }

    fn arrive(&mut self, id: usize, time: u64) {
        let hw = self.hw;
        let (pe, ctrl, bytes, write) = {
            let r = &self.reqs[id];
            (r.pe, r.controller, r.bytes, r.write)
        };
        let start = time.max(self.ctrl_free[ctrl]);
        let service = ((bytes as f64 / hw.controller_bytes_per_cycle()).ceil() as u64).max(1);
        self.ctrl_free[ctrl] = start + service;
        if write {
            let p = &mut self.pes[pe];
            p.store_done = p.store_done.max(start + service);
            return;
        }
        let col = self.pes[pe].col;
        let ready = start + service + hw.dram_latency_cycles + route_cycles(col, hw.pe_cols, bytes as usize, hw);
        self.reqs[id].ready = Some(ready);
        self.c.flits += hops(col, hw.pe_cols) * flits(bytes as usize, hw);
        if self.pes[pe].blocked {
            self.pes[pe].epoch += 1;
            self.schedule_issue(pe, time);
        }
    }

    fn ready(&self, op: Operand) -> Option<u64> {
        match op.req {
            None => Some(op.at),
            Some(r) => self.reqs[r].ready.map(|x| x.max(op.at)),
        }
    }

    /// `None` when a miss may issue now; otherwise the wake-up cycle, if known.
    fn gate(&mut self, pe: usize, t: u64) -> Option<Option<u64>> {
        let hw = self.hw;
        let reqs = &self.reqs;
        let p = &mut self.pes[pe];
        p.lsq.retain(|&r| reqs[r].ready.is_none_or(|x| x > t));
        p.noc.retain(|&a| a > t);
        if p.lsq.len() >= hw.lsq_depth {
            return Some(p.lsq.iter().filter_map(|&r| reqs[r].ready).min());
        }
        if p.noc.len() >= hw.noc_queue_depth {
            return Some(p.noc.iter().copied().min());
        }
        None
    }

    /// Probes G-D for `u`, requesting it from DRAM on a miss.
    fn fetch_feature(&mut self, pe: usize, u: NodeId, t: u64) -> Operand {
        let bytes = self.in_bytes;
        let hit_latency = self.hw.hit_latency_cycles;
        let p = &mut self.pes[pe];
        if p.gd.access(u as Tag, bytes as usize) {
            Operand {
                at: t + hit_latency,
                req: p.feature_req.get(&u).copied(),
            }
        } else {
            let r = self.send_read(pe, t, bytes);
            self.pes[pe].feature_req.insert(u, r);
            Operand { at: t, req: Some(r) }
        }
    }

    fn begin_node(&mut self, pe: usize, v: NodeId, t: u64) {
        self.pes[pe].owner = Some(v);
        self.pes[pe].self_op = self.fetch_feature(pe, v, t);
        self.pes[pe].overflow = if self.overflow_bytes > 0 {
            Some(self.send_read(pe, t, self.overflow_bytes))
        } else {
            None
        };
    }

    fn step(&mut self, pe: usize, t: u64, ins: &[MicroInstruction]) -> Step {
        let hw = self.hw;
        let pc = self.pes[pe].pc;
        let Some(cur) = ins.get(pc) else {
            return Step::Done;
        };
        if self.pes[pe].owner != Some(cur.owner) {
            self.begin_node(pe, cur.owner, t);
        }
        match &cur.op {
            Opcode::LoadF(u) => {
                if !self.pes[pe].gd.contains(*u as Tag) {
                    if let Some(wake) = self.gate(pe, t) {
                        return Step::Block(wake);
                    }
                }
                let op = self.fetch_feature(pe, *u, t);
                self.pes[pe].operands.push(op);
            }
            Opcode::LoadI { pair, members } => {
                let bytes = self.in_bytes as usize;
                let p = &mut self.pes[pe];
                let tag = pair_tag(*pair);
                let resident = p.gc.contains(tag) && p.gc_ready.contains_key(pair);
                p.gc.access(tag, bytes);
                if resident {
                    let at = (t + hw.hit_latency_cycles).max(p.gc_ready[pair]);
                    p.operands.push(Operand { at, req: None });
                } else {
                    // Rebuild the partial from the shared neighbors.
                    p.extra_vectors += members.len() as u64 - 1;
                    for &u in members.iter() {
                        let op = self.fetch_feature(pe, u, t);
                        self.pes[pe].operands.push(op);
                    }
                }
            }
            Opcode::Comp(CompKind::AggAdd { vectors, dim }) => {
                let mut start = t.max(self.pes[pe].mac_free);
                for &op in &self.pes[pe].operands {
                    match self.ready(op) {
                        Some(r) => start = start.max(r),
                        None => return Step::Block(None),
                    }
                }
                let p = &mut self.pes[pe];
                let v = *vectors as u64 + p.extra_vectors;
                debug_assert_eq!(v as usize, p.operands.len());
                let ops = v * *dim as u64;
                let cycles = ops.div_ceil(hw.macs_per_pe() as u64);
                p.mac_free = start + cycles;
                p.agg_busy += cycles;
                p.operands.clear();
                p.extra_vectors = 0;
                self.c.agg_ops += ops;
                self.c.rf += v;
            }
            Opcode::Comp(CompKind::UpdateTile { .. }) => {
                let mut start = t.max(self.pes[pe].mac_free);
                let waits = [Some(self.pes[pe].self_op), self.pes[pe].overflow.map(|r| Operand { at: t, req: Some(r) })];
                for op in waits.into_iter().flatten() {
                    match self.ready(op) {
                        Some(r) => start = start.max(r),
                        None => return Step::Block(None),
                    }
                }
                let mut run = 0u64;
                let mut ops = 0u64;
                for i in &ins[pc..] {
                    match &i.op {
                        Opcode::Comp(CompKind::UpdateTile { out, inp, .. }) if i.owner == cur.owner => {
                            run += 1;
                            ops += (out.len() * inp.len()) as u64;
                        }
                        _ => break,
                    }
                }
                let p = &mut self.pes[pe];
                p.mac_free = start + run;
                p.upd_busy += run;
                p.pc += run as usize;
                p.last_issue = t;
                self.c.upd_ops += ops;
                self.c.gb += run;
                self.c.rf += run;
                return Step::Next(t + 1);
            }
            Opcode::Store { bytes, .. } => {
                let depart = t.max(self.pes[pe].mac_free);
                self.send_write(pe, depart, *bytes as u64);
            }
            Opcode::StoreI { pair, bytes } => {
                let p = &mut self.pes[pe];
                p.gc.fill(pair_tag(*pair), *bytes as usize);
                p.gc_ready.insert(*pair, t.max(p.mac_free) + hw.hit_latency_cycles);
            }
        }
        let p = &mut self.pes[pe];
        p.pc += 1;
        p.last_issue = t;
        Step::Next(t + 1)
    }

    fn finish(self, total_cycles: u64) -> SimReport {
        let mut r = SimReport {
            total_cycles,
            phases: PhaseCycles {
                weight_prologue: self.prologue_total,
                aggregate: self.pes.iter().map(|p| p.agg_busy).max().unwrap_or(0),
                update: self.pes.iter().map(|p| p.upd_busy).max().unwrap_or(0),
            },
            dram_read_bytes: self.c.dram_read,
            dram_write_bytes: self.c.dram_write,
            mac_ops: self.c.agg_ops + self.c.upd_ops,
            agg_mac_ops: self.c.agg_ops,
            update_mac_ops: self.c.upd_ops,
            global_buffer_accesses: self.c.gb,
            rf_accesses: self.c.rf,
            noc_flit_cycles: self.c.flits,
            layers: self.layers,
            ..Default::default()
        };
        for p in &self.pes {
            r.gd_hits += p.gd.hits();
            r.gd_misses += p.gd.misses();
            r.gc_hits += p.gc.hits();
            r.gc_misses += p.gc.misses();
            r.gc_fills += p.gc.fills();
        }
        r
    }
}

#[derive(Default)]
struct Snapshot {
    dram_read: u64,
    dram_write: u64,
    agg_ops: u64,
    upd_ops: u64,
    gd_hits: u64,
    gd_misses: u64,
    gc_hits: u64,
    gc_misses: u64,
}
