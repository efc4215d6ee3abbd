//! End-to-end run: reorder, map, lower, simulate, account energy.

use thiserror::Error;

use crate::codegen::{lower, CodegenError, InstructionStream};
use crate::gcn::ModelSpec;
use crate::graph::{FeatureMatrix, Graph};
use crate::mapper::{assign_windows, default_window_size, plan_model, Manifest, MapError, PeAssignment};
use crate::metrics::{energy, EnergyTable};
use crate::reorder::{ExecutionPlan, LshParams, ReorderError, Strategy};
use crate::sim::{simulate_with, HardwareConfig, SimError, SimOptions, SimRun};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("model expects {model}-dim input, graph carries {graph}-dim features")]
    InputDim { model: usize, graph: usize },
    #[error(transparent)]
    Reorder(#[from] ReorderError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Everything produced by one strategy run.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub strategy: Strategy,
    pub plan: ExecutionPlan,
    pub assignment: PeAssignment,
    pub manifest: Manifest,
    pub stream: InstructionStream,
    pub sim: SimRun,
}

/// Graph, model and input features of one experiment.
#[derive(Clone, Copy, Debug)]
pub struct Workload<'a> {
    pub graph: &'a Graph,
    pub model: &'a ModelSpec,
    pub features: &'a FeatureMatrix,
}

#[derive(Clone, Debug, Default)]
pub struct PipelineOptions {
    /// Defaults to one window per PE.
    pub window_size: Option<usize>,
    pub sim: SimOptions,
}

pub fn run_pipeline(
    w: &Workload,
    hw: &HardwareConfig,
    strategy: Strategy,
    lsh: &LshParams,
    energy_table: &EnergyTable,
    opts: &PipelineOptions,
) -> Result<PipelineRun, PipelineError> {
    if w.model.in_dim() != w.features.dim() {
        return Err(PipelineError::InputDim {
            model: w.model.in_dim(),
            graph: w.features.dim(),
        });
    }
    hw.validate().map_err(SimError::from)?;
    let plan = ExecutionPlan::build(w.graph, strategy, lsh)?;
    run_plan(w, hw, plan, energy_table, opts)
}

/// Runs an already-built plan, e.g. one with a hand-picked permutation.
pub fn run_plan(
    w: &Workload,
    hw: &HardwareConfig,
    plan: ExecutionPlan,
    energy_table: &EnergyTable,
    opts: &PipelineOptions,
) -> Result<PipelineRun, PipelineError> {
    let window = opts
        .window_size
        .unwrap_or_else(|| default_window_size(w.graph.num_nodes(), hw.num_pes()));
    let assignment = assign_windows(&plan, hw.num_pes(), window)?;
    let manifest = plan_model(w.graph, w.model, &plan, &assignment, hw)?;
    let stream = lower(&manifest, &plan)?;
    let mut sim = simulate_with(&stream, w.graph, w.model, w.features, hw, &opts.sim)?;
    sim.report.energy_pj = energy(&sim.report.events(), energy_table);
    Ok(PipelineRun {
        strategy: plan.strategy,
        plan,
        assignment,
        manifest,
        stream,
        sim,
    })
}
