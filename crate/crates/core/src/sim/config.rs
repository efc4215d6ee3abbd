//! Architecture parameters of the modeled accelerator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("hardware config field `{field}` must be positive")]
    NonPositive { field: &'static str },
    #[error(
        "a {dim}-element feature vector ({bytes} B) does not fit the {capacity} B G-D cache"
    )]
    FeatureTooLarge {
        dim: usize,
        bytes: usize,
        capacity: usize,
    },
}

/// Defaults: an 8x8 PE mesh, 4x8 MACs per PE, 32 GB/s DRAM, a 2 MB global
/// buffer, 128 KB of private cache per PE (96 KB G-D + 32 KB G-C), 2 KB
/// register files, 500 MHz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareConfig {
    pub pe_rows: usize,
    pub pe_cols: usize,
    pub mac_rows: usize,
    pub mac_cols: usize,
    pub clock_hz: u64,
    pub mem_bandwidth_bytes_per_s: u64,
    pub global_buffer_bytes: usize,
    pub gd_cache_bytes: usize,
    pub gc_cache_bytes: usize,
    pub register_file_bytes: usize,
    pub noc_hop_cycles: u64,
    pub noc_link_bytes_per_cycle: usize,
    pub dram_latency_cycles: u64,
    pub element_bytes: usize,
    pub hit_latency_cycles: u64,
    pub lsq_depth: usize,
    pub noc_queue_depth: usize,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        Self {
            pe_rows: 8,
            pe_cols: 8,
            mac_rows: 4,
            mac_cols: 8,
            clock_hz: 500_000_000,
            mem_bandwidth_bytes_per_s: 32_000_000_000,
            global_buffer_bytes: 2 << 20,
            gd_cache_bytes: 96 << 10,
            gc_cache_bytes: 32 << 10,
            register_file_bytes: 2 << 10,
            noc_hop_cycles: 1,
            noc_link_bytes_per_cycle: 32,
            dram_latency_cycles: 100,
            element_bytes: 4,
            hit_latency_cycles: 2,
            lsq_depth: 16,
            noc_queue_depth: 8,
        }
    }
}

impl HardwareConfig {
    /// A single PE, otherwise default.
    pub fn single_pe() -> Self {
        Self {
            pe_rows: 1,
            pe_cols: 1,
            ..Self::default()
        }
    }

    pub fn num_pes(&self) -> usize {
        self.pe_rows * self.pe_cols
    }

    pub fn macs_per_pe(&self) -> usize {
        self.mac_rows * self.mac_cols
    }

    /// DRAM bytes per clock cycle across both controllers.
    pub fn bytes_per_cycle(&self) -> f64 {
        self.mem_bandwidth_bytes_per_s as f64 / self.clock_hz as f64
    }

    /// Each edge controller serves half of the bandwidth.
    pub fn controller_bytes_per_cycle(&self) -> f64 {
        self.bytes_per_cycle() / 2.0
    }

    pub fn pe_col(&self, pe: usize) -> usize {
        pe % self.pe_cols
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields: [(&'static str, u64); 16] = [
            ("pe_rows", self.pe_rows as u64),
            ("pe_cols", self.pe_cols as u64),
            ("mac_rows", self.mac_rows as u64),
            ("mac_cols", self.mac_cols as u64),
            ("clock_hz", self.clock_hz),
            ("mem_bandwidth_bytes_per_s", self.mem_bandwidth_bytes_per_s),
            ("global_buffer_bytes", self.global_buffer_bytes as u64),
            ("gd_cache_bytes", self.gd_cache_bytes as u64),
            ("gc_cache_bytes", self.gc_cache_bytes as u64),
            ("register_file_bytes", self.register_file_bytes as u64),
            ("noc_hop_cycles", self.noc_hop_cycles),
            ("noc_link_bytes_per_cycle", self.noc_link_bytes_per_cycle as u64),
            ("dram_latency_cycles", self.dram_latency_cycles),
            ("element_bytes", self.element_bytes as u64),
            ("lsq_depth", self.lsq_depth as u64),
            ("noc_queue_depth", self.noc_queue_depth as u64),
        ];
        for (field, v) in fields {
            if v == 0 {
                return Err(ConfigError::NonPositive { field });
            }
        }
        Ok(())
    }

    /// Errors when one feature vector of `dim` elements cannot be cached.
    pub fn check_feature_dim(&self, dim: usize) -> Result<(), ConfigError> {
        let bytes = dim * self.element_bytes;
        if bytes > self.gd_cache_bytes {
            return Err(ConfigError::FeatureTooLarge {
                dim,
                bytes,
                capacity: self.gd_cache_bytes,
            });
        }
        Ok(())
    }
}
