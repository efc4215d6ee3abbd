//! Roofline lower bounds derived from a work manifest.

use std::collections::BTreeSet;

use serde::Serialize;

use super::HardwareConfig;
use crate::mapper::{Manifest, PartialRole};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Bound {
    pub compute_lb_cycles: f64,
    pub memory_lb_cycles: f64,
}

impl Bound {
    pub fn max(&self) -> f64 {
        self.compute_lb_cycles.max(self.memory_lb_cycles)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PhaseBounds {
    pub weight_prologue: Bound,
    pub aggregate: Bound,
    pub update: Bound,
    pub total: Bound,
}

/// Compute bounds divide MAC work by every MAC in the array; memory bounds
/// divide compulsory DRAM bytes by peak bandwidth. Compulsory bytes are the
/// weights, one read of every distinct feature vector a layer touches and one
/// write per output vector.
pub fn phase_lower_bounds(manifest: &Manifest, hw: &HardwareConfig) -> PhaseBounds {
    let macs = (hw.num_pes() * hw.macs_per_pe()) as f64;
    let bpc = hw.bytes_per_cycle();
    let elem = manifest.element_bytes as u64;

    let (mut agg_ops, mut upd_ops) = (0u64, 0u64);
    let (mut weight_bytes, mut feature_bytes, mut write_bytes) = (0u64, 0u64, 0u64);
    for layer in &manifest.layers {
        agg_ops += layer.agg_mac_ops();
        upd_ops += layer.update_mac_ops();
        weight_bytes += layer.weight_bytes as u64;
        let mut touched = BTreeSet::new();
        for n in layer.nodes() {
            touched.insert(n.node);
            touched.extend(n.residual.iter().copied());
            if let Some(s) = &n.shared {
                if s.role == PartialRole::Publish {
                    touched.extend(s.shared.iter().copied());
                }
            }
        }
        feature_bytes += touched.len() as u64 * layer.in_dim as u64 * elem;
        write_bytes += layer.nodes().count() as u64 * layer.out_dim as u64 * elem;
    }

    let compute = |ops: u64| ops as f64 / macs;
    let memory = |bytes: u64| bytes as f64 / bpc;
    PhaseBounds {
        weight_prologue: Bound {
            compute_lb_cycles: 0.0,
            memory_lb_cycles: memory(weight_bytes),
        },
        aggregate: Bound {
            compute_lb_cycles: compute(agg_ops),
            memory_lb_cycles: memory(feature_bytes),
        },
        update: Bound {
            compute_lb_cycles: compute(upd_ops),
            memory_lb_cycles: memory(write_bytes),
        },
        total: Bound {
            compute_lb_cycles: compute(agg_ops + upd_ops),
            memory_lb_cycles: memory(weight_bytes + feature_bytes + write_bytes),
        },
    }
}
