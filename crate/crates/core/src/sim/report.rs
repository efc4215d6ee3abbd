use std::ops::Add;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCycles {
    /// Weight streaming into the global buffer, summed over layers.
    pub weight_prologue: u64,
    /// Largest per-PE MAC busy time spent on aggregation adds.
    pub aggregate: u64,
    /// Largest per-PE MAC busy time spent on update tiles.
    pub update: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub prologue_cycles: u64,
    pub weight_bytes: u64,
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
    pub gd_hits: u64,
    pub gd_misses: u64,
    pub gc_hits: u64,
    pub gc_misses: u64,
    pub agg_mac_ops: u64,
    pub update_mac_ops: u64,
}

/// Energy-relevant event counts; component-wise addable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub mac_ops: u64,
    pub gd_accesses: u64,
    pub gc_accesses: u64,
    pub global_buffer_accesses: u64,
    pub rf_accesses: u64,
    pub dram_bytes: u64,
    pub noc_hop_flits: u64,
}

impl Add for EventCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            mac_ops: self.mac_ops + o.mac_ops,
            gd_accesses: self.gd_accesses + o.gd_accesses,
            gc_accesses: self.gc_accesses + o.gc_accesses,
            global_buffer_accesses: self.global_buffer_accesses + o.global_buffer_accesses,
            rf_accesses: self.rf_accesses + o.rf_accesses,
            dram_bytes: self.dram_bytes + o.dram_bytes,
            noc_hop_flits: self.noc_hop_flits + o.noc_hop_flits,
        }
    }
}

/// Outcome of one simulation run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_cycles: u64,
    pub phases: PhaseCycles,
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
    pub gd_hits: u64,
    pub gd_misses: u64,
    pub gc_hits: u64,
    pub gc_misses: u64,
    pub gc_fills: u64,
    pub mac_ops: u64,
    pub agg_mac_ops: u64,
    pub update_mac_ops: u64,
    pub global_buffer_accesses: u64,
    pub rf_accesses: u64,
    pub noc_flit_cycles: u64,
    /// Filled in by the pipeline from an energy table.
    pub energy_pj: f64,
    pub output_checksum: String,
    pub layers: Vec<LayerReport>,
}

impl SimReport {
    pub fn gd_hit_rate(&self) -> f64 {
        rate(self.gd_hits, self.gd_misses)
    }

    pub fn gc_hit_rate(&self) -> f64 {
        rate(self.gc_hits, self.gc_misses)
    }

    pub fn events(&self) -> EventCounts {
        EventCounts {
            mac_ops: self.mac_ops,
            gd_accesses: self.gd_hits + self.gd_misses,
            gc_accesses: self.gc_hits + self.gc_misses + self.gc_fills,
            global_buffer_accesses: self.global_buffer_accesses,
            rf_accesses: self.rf_accesses,
            dram_bytes: self.dram_read_bytes + self.dram_write_bytes,
            noc_hop_flits: self.noc_flit_cycles,
        }
    }
}

fn rate(hits: u64, misses: u64) -> f64 {
    let total = hits + misses;
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
