//! Experiment execution: single runs, parameter sweeps and file output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde::Serialize;

use rubik_core::codegen::trace_dump;
use rubik_core::gcn::{forward, max_relative_error};
use rubik_core::graph::{stats, FeatureMatrix, Graph, GraphStats};
use rubik_core::metrics::{comparison_rows, ComparisonRow, EnergyTable, CSV_COLUMNS};
use rubik_core::pipeline::{run_pipeline, PipelineError, PipelineOptions, PipelineRun, Workload};
use rubik_core::reorder::{reuse_distance_profile, ExecutionPlan, LshParams, Permutation, ReuseHistogram, Strategy};
use rubik_core::sim::{HardwareConfig, SimError};

use crate::source::{FileOptions, GraphSource, ModelSource};

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration.
    Config(anyhow::Error),
    /// The pipeline itself failed.
    Pipeline(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e:#}"),
            CliError::Pipeline(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

fn config<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Config(e.into())
}

fn pipeline<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Pipeline(e.into())
}

/// Settings the hardware cannot host are configuration errors even though
/// the simulator is what detects them.
fn classify(e: PipelineError) -> CliError {
    match e {
        PipelineError::InputDim { .. } | PipelineError::Sim(SimError::Config(_)) => config(e),
        e => pipeline(e),
    }
}

pub fn load_hardware(path: Option<&Path>) -> Result<HardwareConfig, CliError> {
    let hw = match path {
        None => HardwareConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(config)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(config)?
        }
    };
    hw.validate().map_err(config)?;
    Ok(hw)
}

pub fn load_energy(path: Option<&Path>) -> Result<EnergyTable, CliError> {
    let table = match path {
        None => EnergyTable::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(config)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(config)?
        }
    };
    table.validate().map_err(config)?;
    Ok(table)
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub graph: GraphSource,
    pub file: FileOptions,
    pub feature_dim: usize,
    pub model: ModelSource,
    pub hw: HardwareConfig,
    pub energy: EnergyTable,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub num_hashes: usize,
    pub out_dir: PathBuf,
    pub dump_manifest: bool,
    pub trace: bool,
}

impl ExperimentSpec {
    /// Defaults for everything but the graph.
    pub fn new(graph: GraphSource) -> Self {
        Self {
            graph,
            file: FileOptions::default(),
            feature_dim: 16,
            model: ModelSource::Gin { hidden: None },
            hw: HardwareConfig::default(),
            energy: EnergyTable::default(),
            strategies: Strategy::ALL.to_vec(),
            seeds: vec![0],
            num_hashes: 8,
            out_dir: PathBuf::from("out"),
            dump_manifest: false,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.strategies.is_empty() {
            return Err(config(anyhow!("at least one strategy is required")));
        }
        if self.seeds.is_empty() {
            return Err(config(anyhow!("at least one seed is required")));
        }
        if self.feature_dim == 0 {
            return Err(config(anyhow!("feature dimension must be positive")));
        }
        if self.num_hashes == 0 {
            return Err(config(anyhow!("number of hash functions must be positive")));
        }
        self.hw.validate().map_err(config)?;
        self.energy.validate().map_err(config)?;
        Ok(())
    }

    pub fn lsh(&self, seed: u64) -> LshParams {
        LshParams {
            num_hashes: self.num_hashes,
            ..LshParams::with_seed(seed)
        }
    }

    fn load_graph(&self, seed: u64) -> Result<Graph, CliError> {
        self.graph.load(self.feature_dim, self.file, seed).map_err(config)
    }
}

/// One seed of one experiment, every requested strategy.
pub struct CellResult {
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<PipelineRun>,
}

fn run_cell(spec: &ExperimentSpec, seed: u64, dataset: &str) -> Result<CellResult, CliError> {
    let graph = spec.load_graph(seed)?;
    let model = spec.model.build(spec.feature_dim, seed).map_err(config)?;
    let features = FeatureMatrix::random(graph.num_nodes(), spec.feature_dim, seed);
    let w = Workload {
        graph: &graph,
        model: &model,
        features: &features,
    };
    let lsh = spec.lsh(seed);
    let mut wanted: Vec<Strategy> = Vec::new();
    for s in &spec.strategies {
        if !wanted.contains(s) {
            wanted.push(*s);
        }
    }
    let with_baseline = !wanted.contains(&Strategy::IndexOrder);
    if with_baseline {
        wanted.insert(0, Strategy::IndexOrder);
    }
    let opts = PipelineOptions::default();
    let mut runs = wanted
        .par_iter()
        .map(|&s| run_pipeline(&w, &spec.hw, s, &lsh, &spec.energy, &opts))
        .collect::<Result<Vec<_>, _>>()
        .map_err(classify)?;
    let baseline = runs
        .iter()
        .find(|r| r.strategy == Strategy::IndexOrder)
        .map(|r| r.sim.report.clone())
        .expect("baseline present");
    if with_baseline {
        runs.remove(0);
    }
    let reports: Vec<_> = runs.iter().map(|r| (r.strategy, &r.sim.report)).collect();
    let rows = comparison_rows(dataset, &spec.model.to_string(), &baseline, &reports);
    Ok(CellResult { seed, rows, runs })
}

pub fn write_csv(path: &Path, rows: &[ComparisonRow]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Paths written by [`run`].
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub reports: Vec<PathBuf>,
    pub traces: Vec<PathBuf>,
    pub permutations: Vec<PathBuf>,
    pub manifests: Vec<PathBuf>,
    pub rows: Vec<ComparisonRow>,
}

/// Writes `report-<strategy>-seed<seed>.json` per run and `results.csv`.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir)
        .with_context(|| format!("creating {}", spec.out_dir.display()))
        .map_err(config)?;
    let mut out = RunOutput {
        csv: spec.out_dir.join("results.csv"),
        ..Default::default()
    };
    for &seed in &spec.seeds {
        let dataset = format!("{}@seed={seed}", spec.graph.label());
        let cell = run_cell(spec, seed, &dataset)?;
        for r in &cell.runs {
            let stem = format!("{}-seed{seed}", r.strategy.label());
            let p = spec.out_dir.join(format!("report-{stem}.json"));
            write_json(&p, &r.sim.report).map_err(pipeline)?;
            out.reports.push(p);
            if spec.trace {
                let p = spec.out_dir.join(format!("trace-{stem}.txt"));
                fs::write(&p, trace_dump(&r.stream)).map_err(pipeline)?;
                out.traces.push(p);
                let graph = spec.load_graph(seed)?;
                let p = spec.out_dir.join(format!("perm-{stem}.txt"));
                fs::write(&p, r.plan.permutation.to_text(&graph)).map_err(pipeline)?;
                out.permutations.push(p);
            }
            if spec.dump_manifest {
                let p = spec.out_dir.join(format!("manifest-{stem}.json"));
                write_json(&p, &r.manifest).map_err(pipeline)?;
                out.manifests.push(p);
            }
        }
        out.rows.extend(cell.rows);
    }
    write_csv(&out.csv, &out.rows).map_err(pipeline)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Hidden width of builtin models, output width of `sum`.
    Hidden,
    /// DRAM bandwidth in GB/s (10^9 bytes per second).
    Bandwidth,
    FeatureDim,
    /// G-D cache size in KiB.
    GdKib,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Hidden => "hidden",
            Axis::Bandwidth => "bandwidth",
            Axis::FeatureDim => "feature_dim",
            Axis::GdKib => "gd_kib",
        }
    }
}

/// One `--grid name=v1,v2,...` axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridAxis {
    pub axis: Axis,
    pub values: Vec<u64>,
}

impl FromStr for GridAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let Some((name, values)) = s.split_once('=') else {
            bail!("expected <axis>=<v1,v2,...>, got {s:?}");
        };
        let axis = match name {
            "hidden" => Axis::Hidden,
            "bandwidth" => Axis::Bandwidth,
            "feature_dim" => Axis::FeatureDim,
            "gd_kib" => Axis::GdKib,
            _ => bail!("unknown grid axis {name:?}; expected hidden, bandwidth, feature_dim or gd_kib"),
        };
        let values = values
            .split(',')
            .filter(|v| !v.is_empty())
            .map(|v| match v.trim().parse::<u64>() {
                Ok(0) | Err(_) => Err(anyhow!("grid value {v:?} of {name} must be a positive integer")),
                Ok(n) => Ok(n),
            })
            .collect::<anyhow::Result<_>>()?;
        Ok(GridAxis { axis, values })
    }
}

/// Cartesian product of the axes; no axes means no cells.
pub fn grid_cells(axes: &[GridAxis]) -> Vec<Vec<(Axis, u64)>> {
    if axes.is_empty() {
        return Vec::new();
    }
    let mut cells = vec![Vec::new()];
    for a in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                a.values.iter().map(move |&v| {
                    let mut c = c.clone();
                    c.push((a.axis, v));
                    c
                })
            })
            .collect();
    }
    cells
}

fn apply_cell(base: &ExperimentSpec, cell: &[(Axis, u64)]) -> Result<ExperimentSpec, CliError> {
    let mut spec = base.clone();
    for &(axis, v) in cell {
        match axis {
            Axis::Hidden => spec.model = spec.model.with_hidden(v as usize).map_err(config)?,
            Axis::Bandwidth => spec.hw.mem_bandwidth_bytes_per_s = v * 1_000_000_000,
            Axis::FeatureDim => spec.feature_dim = v as usize,
            Axis::GdKib => spec.hw.gd_cache_bytes = v as usize * 1024,
        }
    }
    Ok(spec)
}

/// Runs every grid cell for every seed on at most `jobs` threads and writes
/// `sweep.csv`. Rows are in cell order regardless of scheduling.
pub fn sweep(spec: &ExperimentSpec, axes: &[GridAxis], jobs: usize) -> Result<(PathBuf, Vec<ComparisonRow>), CliError> {
    spec.validate()?;
    if jobs == 0 {
        return Err(config(anyhow!("--jobs must be positive")));
    }
    fs::create_dir_all(&spec.out_dir)
        .with_context(|| format!("creating {}", spec.out_dir.display()))
        .map_err(config)?;
    let mut work = Vec::new();
    for cell in grid_cells(axes) {
        let cell_spec = apply_cell(spec, &cell)?;
        cell_spec.validate()?;
        let tag: Vec<String> = cell.iter().map(|(a, v)| format!("{}={v}", a.name())).collect();
        for &seed in &spec.seeds {
            let dataset = format!("{}@seed={seed},{}", spec.graph.label(), tag.join(","));
            work.push((cell_spec.clone(), seed, dataset));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(pipeline)?;
    let results: Vec<CellResult> = pool.install(|| {
        work.par_iter()
            .map(|(s, seed, dataset)| run_cell(s, *seed, dataset))
            .collect::<Result<_, _>>()
    })?;
    let rows: Vec<ComparisonRow> = results.into_iter().flat_map(|c| c.rows).collect();
    let path = spec.out_dir.join("sweep.csv");
    write_csv(&path, &rows).map_err(pipeline)?;
    Ok((path, rows))
}

/// Permutation file and, for LR_CR, the mined shared pairs.
pub fn reorder(spec: &ExperimentSpec, seed: u64) -> Result<(Graph, ExecutionPlan), CliError> {
    spec.validate()?;
    let graph = spec.load_graph(seed)?;
    let plan = ExecutionPlan::build(&graph, Strategy::LrCr, &spec.lsh(seed)).map_err(pipeline)?;
    Ok((graph, plan))
}

#[derive(Clone, Debug, Serialize)]
pub struct Validation {
    pub strategy: Strategy,
    pub max_relative_error: f64,
    pub output_checksum: String,
}

/// Simulator replay output against the reference forward pass.
pub fn validate(spec: &ExperimentSpec, seed: u64) -> Result<Vec<Validation>, CliError> {
    spec.validate()?;
    let graph = spec.load_graph(seed)?;
    let model = spec.model.build(spec.feature_dim, seed).map_err(config)?;
    let features = FeatureMatrix::random(graph.num_nodes(), spec.feature_dim, seed);
    let reference = forward(&graph, &features, &model, &Permutation::identity(graph.num_nodes())).map_err(pipeline)?;
    let w = Workload {
        graph: &graph,
        model: &model,
        features: &features,
    };
    spec.strategies
        .iter()
        .map(|&s| {
            let r = run_pipeline(&w, &spec.hw, s, &spec.lsh(seed), &spec.energy, &PipelineOptions::default())
                .map_err(classify)?;
            Ok(Validation {
                strategy: s,
                max_relative_error: max_relative_error(r.sim.output.values(), reference.values()),
                output_checksum: r.sim.report.output_checksum,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct StrategyReuse {
    pub strategy: Strategy,
    pub mean_reuse_distance: Option<f64>,
    pub histogram: ReuseHistogram,
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphReport {
    pub graph: String,
    pub stats: GraphStats,
    pub reuse: Vec<StrategyReuse>,
}

/// Degree statistics and neighbor-access reuse distances per ordering.
pub fn graph_report(spec: &ExperimentSpec, seed: u64) -> Result<GraphReport, CliError> {
    spec.validate()?;
    let graph = spec.load_graph(seed)?;
    let mut reuse = Vec::new();
    for &s in &spec.strategies {
        let plan = ExecutionPlan::build(&graph, s, &spec.lsh(seed)).map_err(pipeline)?;
        let histogram = reuse_distance_profile(&graph, &plan.permutation);
        reuse.push(StrategyReuse {
            strategy: s,
            mean_reuse_distance: histogram.mean_finite(),
            histogram,
        });
    }
    Ok(GraphReport {
        graph: spec.graph.to_string(),
        stats: stats(&graph),
        reuse,
    })
}
