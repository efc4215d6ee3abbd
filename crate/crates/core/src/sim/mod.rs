//! Cycle-level model of the accelerator.

mod bounds;
mod cache;
mod config;
mod engine;
pub mod noc;
mod replay;
mod report;

use thiserror::Error;

pub use bounds::{phase_lower_bounds, Bound, PhaseBounds};
pub use cache::{lru_reference_oracle, pair_tag, CacheModel, Tag};
pub use config::{ConfigError, HardwareConfig};
pub use engine::{simulate, simulate_with, CacheTraces, SimOptions, SimRun};
pub use noc::route_cycles;
pub use replay::replay;
pub use report::{EventCounts, LayerReport, PhaseCycles, SimReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("inconsistent input: {0}")]
    Shape(String),
    #[error("replay failed: {0}")]
    Replay(String),
    #[error("simulation stalled with {0} PEs unfinished")]
    Stalled(usize),
}
