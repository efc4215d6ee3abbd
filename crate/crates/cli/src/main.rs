use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rubik_core::reorder::{shared_pairs_to_text, Strategy};
use rubik_sim::{
    graph_report, load_energy, load_hardware, reorder, run, sweep, validate, CliError, ExperimentSpec,
    FileOptions, GraphSource, GridAxis, ModelSource,
};

/// Largest replay-vs-reference relative error `validate` accepts.
const VALIDATE_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "rubik-sim", version, about = "Locality-aware GCN accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate every strategy and write per-run reports plus a CSV summary.
    Run(RunArgs),
    /// Run a Cartesian parameter grid and write one CSV.
    Sweep(SweepArgs),
    /// Write the LSH execution order and shared pairs of a graph.
    Reorder(ReorderArgs),
    /// Compare simulator replay output with the reference forward pass.
    Validate(ModelArgs),
    /// Print degree and reuse-distance statistics as JSON.
    Stats(GraphArgs),
}

#[derive(Args, Clone)]
struct GraphArgs {
    /// Edge-list or .rbkg file, `sbm:<B>x<S>:<p_in>:<p_out>` or
    /// `powerlaw:<n>:<avg_degree>:<exponent>`.
    #[arg(long)]
    graph: String,
    /// Read edge lists as directed.
    #[arg(long)]
    directed: bool,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    /// Smallest node id in edge-list files.
    #[arg(long, default_value_t = 0)]
    base_index: u64,
    /// Seed for generators, features, weights and hashing.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    /// Number of LSH hyperplanes.
    #[arg(long, default_value_t = 8)]
    hashes: usize,
    #[arg(long, value_delimiter = ',', default_value = "index,lr,lrcr")]
    strategies: Vec<String>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// `gin[:hidden=H]`, `graphsage[:hidden=H]`, `sum[:out=D]` or a JSON file.
    #[arg(long, default_value = "gin")]
    model: String,
    /// Hardware config JSON; fields not given keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Energy table JSON.
    #[arg(long)]
    energy: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write each run's work manifest as JSON.
    #[arg(long)]
    dump_manifest: bool,
    /// Also write each run's instruction trace and execution order.
    #[arg(long)]
    trace: bool,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Grid axis `hidden|bandwidth|feature_dim|gd_kib=v1,v2,...`; repeatable.
    #[arg(long)]
    grid: Vec<String>,
    /// Concurrent cells.
    #[arg(long, env = "RUBIK_SIM_JOBS", default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Clone)]
struct ReorderArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Permutation file, one original node id per line in execution order.
    #[arg(long)]
    out: PathBuf,
    /// Shared-pair file, one `a b : shared...` line per pair.
    #[arg(long)]
    pairs: Option<PathBuf>,
}

fn cfg_err(e: anyhow::Error) -> CliError {
    CliError::Config(e)
}

fn base_spec(g: &GraphArgs) -> Result<ExperimentSpec, CliError> {
    let source: GraphSource = g.graph.parse().map_err(cfg_err)?;
    let mut spec = ExperimentSpec::new(source);
    spec.file = FileOptions {
        directed: g.directed,
        base_index: g.base_index,
    };
    spec.feature_dim = g.feature_dim;
    spec.seeds = g.seed.clone();
    spec.num_hashes = g.hashes;
    spec.strategies = g
        .strategies
        .iter()
        .map(|s| s.parse::<Strategy>().map_err(|e| cfg_err(e.into())))
        .collect::<Result<_, _>>()?;
    Ok(spec)
}

fn model_spec(m: &ModelArgs) -> Result<ExperimentSpec, CliError> {
    let mut spec = base_spec(&m.graph)?;
    spec.model = m.model.parse::<ModelSource>().map_err(cfg_err)?;
    spec.hw = load_hardware(m.config.as_deref())?;
    spec.energy = load_energy(m.energy.as_deref())?;
    Ok(spec)
}

fn run_spec(r: &RunArgs) -> Result<ExperimentSpec, CliError> {
    let mut spec = model_spec(&r.model)?;
    spec.out_dir = r.out.clone();
    spec.dump_manifest = r.dump_manifest;
    spec.trace = r.trace;
    Ok(spec)
}

fn first_seed(spec: &ExperimentSpec) -> u64 {
    spec.seeds.first().copied().unwrap_or(0)
}

fn execute(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Run(args) => {
            let spec = run_spec(&args)?;
            let out = run(&spec)?;
            for p in &out.reports {
                println!("{}", p.display());
            }
            println!("{}", out.csv.display());
        }
        Cmd::Sweep(args) => {
            let spec = run_spec(&args.run)?;
            let axes = args
                .grid
                .iter()
                .map(|g| g.parse::<GridAxis>())
                .collect::<anyhow::Result<Vec<_>>>()
                .map_err(cfg_err)?;
            let (path, rows) = sweep(&spec, &axes, args.jobs)?;
            println!("{} ({} rows)", path.display(), rows.len());
        }
        Cmd::Reorder(args) => {
            let spec = base_spec(&args.graph)?;
            let (graph, plan) = reorder(&spec, first_seed(&spec))?;
            fs::write(&args.out, plan.permutation.to_text(&graph))
                .with_context(|| format!("writing {}", args.out.display()))
                .map_err(CliError::Pipeline)?;
            if let Some(p) = &args.pairs {
                fs::write(p, shared_pairs_to_text(&plan.shared_pairs, &graph))
                    .with_context(|| format!("writing {}", p.display()))
                    .map_err(CliError::Pipeline)?;
            }
            println!(
                "{} nodes, {} shared pairs -> {}",
                graph.num_nodes(),
                plan.shared_pairs.len(),
                args.out.display()
            );
        }
        Cmd::Validate(args) => {
            let spec = model_spec(&args)?;
            let results = validate(&spec, first_seed(&spec))?;
            let mut worst: f64 = 0.0;
            for v in &results {
                println!(
                    "{:<6} max_relative_error={:.3e} checksum={}",
                    v.strategy.label(),
                    v.max_relative_error,
                    v.output_checksum
                );
                worst = worst.max(v.max_relative_error);
            }
            if worst > VALIDATE_TOLERANCE {
                return Err(CliError::Pipeline(anyhow::anyhow!(
                    "replay deviates from reference by {worst:.3e} (limit {VALIDATE_TOLERANCE:e})"
                )));
            }
        }
        Cmd::Stats(args) => {
            let spec = base_spec(&args)?;
            let report = graph_report(&spec, first_seed(&spec))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rubik-sim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
