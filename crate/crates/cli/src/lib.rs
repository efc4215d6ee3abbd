//! Experiment runner for the accelerator simulator: graph ingestion and
//! synthesis, strategy comparison runs, parameter sweeps and report output.

pub mod experiment;
pub mod source;

pub use experiment::{
    graph_report, grid_cells, load_energy, load_hardware, reorder, run, sweep, validate, Axis, CliError,
    ExperimentSpec, GridAxis, RunOutput,
};
pub use source::{FileOptions, GraphSource, ModelSource};
