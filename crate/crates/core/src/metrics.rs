//! Energy accounting and strategy comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{run_pipeline, PipelineError, PipelineOptions, PipelineRun, Workload};
use crate::reorder::{LshParams, Strategy};
use crate::sim::{EventCounts, HardwareConfig, SimReport};

#[derive(Debug, Error, PartialEq)]
#[error("energy table field `{0}` must be finite and non-negative")]
pub struct EnergyTableError(pub &'static str);

/// Cost per event in picojoules.
///
/// The defaults are illustrative order-of-magnitude figures, meant for
/// relative comparisons only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyTable {
    pub pj_per_mac: f64,
    /// Per whole-vector lookup or fill.
    pub pj_per_gd_access: f64,
    pub pj_per_gc_access: f64,
    pub pj_per_global_buffer_access: f64,
    pub pj_per_rf_access: f64,
    pub pj_per_dram_byte: f64,
    pub pj_per_noc_hop_flit: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        Self {
            pj_per_mac: 4.6,
            pj_per_gd_access: 20.0,
            pj_per_gc_access: 10.0,
            pj_per_global_buffer_access: 50.0,
            pj_per_rf_access: 1.0,
            pj_per_dram_byte: 80.0,
            pj_per_noc_hop_flit: 2.0,
        }
    }
}

impl EnergyTable {
    fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("pj_per_mac", self.pj_per_mac),
            ("pj_per_gd_access", self.pj_per_gd_access),
            ("pj_per_gc_access", self.pj_per_gc_access),
            ("pj_per_global_buffer_access", self.pj_per_global_buffer_access),
            ("pj_per_rf_access", self.pj_per_rf_access),
            ("pj_per_dram_byte", self.pj_per_dram_byte),
            ("pj_per_noc_hop_flit", self.pj_per_noc_hop_flit),
        ]
    }

    pub fn validate(&self) -> Result<(), EnergyTableError> {
        match self.fields().into_iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
            Some((name, _)) => Err(EnergyTableError(name)),
            None => Ok(()),
        }
    }
}

pub fn energy(events: &EventCounts, table: &EnergyTable) -> f64 {
    let counts = [
        events.mac_ops,
        events.gd_accesses,
        events.gc_accesses,
        events.global_buffer_accesses,
        events.rf_accesses,
        events.dram_bytes,
        events.noc_hop_flits,
    ];
    counts
        .iter()
        .zip(table.fields())
        .map(|(&n, (_, cost))| n as f64 * cost)
        .sum()
}

pub const CSV_COLUMNS: [&str; 12] = [
    "dataset",
    "model",
    "strategy",
    "cycles",
    "dram_read_bytes",
    "dram_write_bytes",
    "gd_hit_rate",
    "gc_hit_rate",
    "mac_ops",
    "energy_pj",
    "speedup",
    "traffic_reduction",
];

/// One strategy's results relative to index order. Field order matches
/// [`CSV_COLUMNS`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub model: String,
    pub strategy: String,
    pub cycles: u64,
    pub dram_read_bytes: u64,
    pub dram_write_bytes: u64,
    pub gd_hit_rate: f64,
    pub gc_hit_rate: f64,
    pub mac_ops: u64,
    pub energy_pj: f64,
    /// Index-order cycles over this strategy's cycles.
    pub speedup: f64,
    /// Fraction of index-order DRAM bytes (read + write) saved.
    pub traffic_reduction: f64,
}

impl ComparisonRow {
    pub fn dram_bytes(&self) -> u64 {
        self.dram_read_bytes + self.dram_write_bytes
    }
}

/// Rows for `reports`, with ratios taken against `baseline`.
pub fn comparison_rows(
    dataset: &str,
    model: &str,
    baseline: &SimReport,
    reports: &[(Strategy, &SimReport)],
) -> Vec<ComparisonRow> {
    let base_bytes = baseline.dram_read_bytes + baseline.dram_write_bytes;
    reports
        .iter()
        .map(|(s, r)| {
            let bytes = r.dram_read_bytes + r.dram_write_bytes;
            ComparisonRow {
                dataset: dataset.to_string(),
                model: model.to_string(),
                strategy: s.label().to_string(),
                cycles: r.total_cycles,
                dram_read_bytes: r.dram_read_bytes,
                dram_write_bytes: r.dram_write_bytes,
                gd_hit_rate: r.gd_hit_rate(),
                gc_hit_rate: r.gc_hit_rate(),
                mac_ops: r.mac_ops,
                energy_pj: r.energy_pj,
                speedup: ratio(baseline.total_cycles, r.total_cycles, 1.0),
                traffic_reduction: 1.0 - ratio(bytes, base_bytes, 1.0),
            }
        })
        .collect()
}

fn ratio(num: u64, den: u64, when_zero: f64) -> f64 {
    if den == 0 {
        when_zero
    } else {
        num as f64 / den as f64
    }
}

/// Runs all three strategies concurrently and compares them.
pub fn compare_strategies(
    dataset: &str,
    model_label: &str,
    w: &Workload,
    hw: &HardwareConfig,
    lsh: &LshParams,
    table: &EnergyTable,
) -> Result<(Vec<ComparisonRow>, Vec<PipelineRun>), PipelineError> {
    let opts = PipelineOptions::default();
    let runs = Strategy::ALL
        .par_iter()
        .map(|&s| run_pipeline(w, hw, s, lsh, table, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let reports: Vec<_> = runs.iter().map(|r| (r.strategy, &r.sim.report)).collect();
    let rows = comparison_rows(dataset, model_label, &runs[0].sim.report, &reports);
    Ok((rows, runs))
}
