//! Command-line driver behind the `parasim` binary.
//!
//! Exit status: 0 on success, 1 when simulation or search fails, 2 for
//! malformed or missing input.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cost::{AnalyticCostModel, CostProfile};
use crate::error::{Error, Result};
use crate::generate::{
    generate_model, generate_topology, ModelParams, TopologyParams, MODELS, TOPOLOGIES,
};
use crate::io;
use crate::model::{validate_graph, validate_topology, Problem};
use crate::search::{
    mcmc_search, propose, Budget, InitialStrategy, NeighborhoodParams, SearchParams,
};
use crate::sim::{delta_simulate, full_simulate};
use crate::soap::{
    data_parallel_strategy, enumerate_configs, random_strategy, ParallelizationStrategy,
};
use crate::taskgraph::{build_task_graph, update_task_graph, BuildOptions, IterationMode};

#[derive(Parser, Debug)]
#[command(name = "parasim", version, about = "Simulate and optimize parallel DNN training strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one strategy and print its makespan.
    Simulate(SimulateArgs),
    /// Search for a faster strategy.
    Optimize(OptimizeArgs),
    /// List the candidate degree maps of one operation.
    Enumerate(EnumerateArgs),
    /// Write a benchmark graph or topology.
    Generate(GenerateArgs),
    /// Validate input files without simulating.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
pub struct ProblemArgs {
    /// Operator graph JSON.
    #[arg(long)]
    pub graph: PathBuf,
    /// Device topology JSON.
    #[arg(long)]
    pub topology: PathBuf,
    /// Measured execution times; missing entries use the analytic model.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// FLOP/s of every device for the analytic model.
    #[arg(long, default_value_t = 1e12)]
    pub throughput: f64,
    /// Seconds added to every task by the analytic model.
    #[arg(long, default_value_t = 5e-6)]
    pub overhead: f64,
    #[arg(long, default_value = "forward")]
    pub mode: IterationMode,
    /// Backward task time relative to its forward task.
    #[arg(long, default_value_t = 2.0)]
    pub backward_multiplier: f64,
}

impl ProblemArgs {
    fn load(&self) -> Result<(Problem, CostProfile, BuildOptions)> {
        let graph = io::load_graph(&self.graph)?;
        let topology = io::load_topology(&self.topology)?;
        let problem = Problem::new(graph, topology)?;
        if !(self.throughput > 0.0 && self.overhead >= 0.0) {
            return Err(Error::InvalidConfig {
                op: "<cost model>".into(),
                reason: "throughput must be positive and overhead non-negative".into(),
            });
        }
        let fallback = AnalyticCostModel::uniform(self.throughput, self.overhead);
        let profile = match &self.profile {
            Some(p) => CostProfile::load(p, fallback)?,
            None => CostProfile::new(fallback),
        };
        let build = BuildOptions {
            mode: self.mode,
            backward_multiplier: self.backward_multiplier,
        };
        Ok((problem, profile, build))
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Strategy: `data`, `random`, or `file:PATH`.
    #[arg(long, default_value = "data")]
    pub init: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = usize::MAX)]
    pub max_degree: usize,
    /// Chrome trace-event JSON output.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// CSV timeline output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Graphviz task graph output.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Also apply random single-operation changes and compare incremental
    /// against from-scratch simulation.
    #[arg(long)]
    pub check_delta: bool,
    /// Number of changes for `--check-delta`.
    #[arg(long, default_value_t = 100)]
    pub changes: usize,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Initial strategies, one chain each: `data`, `random`, or `file:PATH`.
    #[arg(long, default_values_t = ["data".to_string(), "random".to_string()])]
    pub init: Vec<String>,
    /// Wall-clock budget per chain.
    #[arg(long, conflicts_with = "budget_proposals")]
    pub budget_seconds: Option<f64>,
    /// Proposal budget per chain; gives reproducible reports.
    #[arg(long)]
    pub budget_proposals: Option<u64>,
    /// Inverse temperature; defaults to a value derived from the initial cost.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = usize::MAX)]
    pub max_degree: usize,
    /// Descend to a single-operation local optimum after the chains finish.
    #[arg(long)]
    pub refine: bool,
    /// Neighborhood size limit for `--refine`.
    #[arg(long, default_value_t = 1e6)]
    pub neighbor_cap: f64,
    /// Cross-check the incremental cost every N proposals.
    #[arg(long)]
    pub verify_every: Option<u64>,
    /// Best strategy output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Search report output.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnumerateArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub topology: PathBuf,
    /// Operation id.
    #[arg(long)]
    pub op: String,
    #[arg(long, default_value_t = usize::MAX)]
    pub max_degree: usize,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Model or topology name.
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<u64>,
    #[arg(long)]
    pub hidden: Option<u64>,
    #[arg(long)]
    pub vocab: Option<u64>,
    #[arg(long)]
    pub image: Option<u64>,
    #[arg(long)]
    pub channels: Option<u64>,
    #[arg(long)]
    pub classes: Option<u64>,
    /// Device count of `full-mesh`.
    #[arg(long)]
    pub devices: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub gpus_per_node: Option<usize>,
    /// Bytes/s within a node.
    #[arg(long)]
    pub intra_bandwidth: Option<f64>,
    /// Bytes/s between nodes.
    #[arg(long)]
    pub inter_bandwidth: Option<f64>,
    /// Seconds per transfer.
    #[arg(long)]
    pub latency: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

/// Parses arguments, runs the command and maps errors to exit statuses.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Enumerate(a) => cmd_enumerate(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Check(a) => cmd_check(&a),
    }
}

fn initial_strategy(
    init: &str,
    problem: &Problem,
    max_degree: usize,
    seed: u64,
) -> Result<ParallelizationStrategy> {
    match init {
        "data" => Ok(data_parallel_strategy(problem)),
        "random" => Ok(random_strategy(problem, max_degree, seed)),
        other => match other.strip_prefix("file:") {
            Some(path) => io::load_strategy(problem, Path::new(path)),
            None => Err(Error::InvalidConfig {
                op: "<init>".into(),
                reason: format!("expected data, random or file:PATH, got `{other}`"),
            }),
        },
    }
}

fn search_init(init: &str, problem: &Problem) -> Result<InitialStrategy> {
    match init {
        "data" => Ok(InitialStrategy::DataParallel),
        "random" => Ok(InitialStrategy::Random),
        other => initial_strategy(other, problem, 1, 0).map(InitialStrategy::Given),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let (problem, profile, build) = a.problem.load()?;
    let strategy = initial_strategy(&a.init, &problem, a.max_degree, a.seed)?;
    let mut g = build_task_graph(&problem, &strategy, &profile, build)?;
    let r = full_simulate(&mut g)?;
    println!("makespan: {:e} s", r.makespan);
    println!("tasks: {} ({} communication)", g.num_tasks(), g.num_comm_tasks());
    println!("total comm bytes: {}", r.total_comm_bytes);
    for (lane, busy) in g.lane_busy_times().iter().enumerate() {
        if lane < g.num_devices() || *busy > 0.0 {
            println!("busy {}: {:e} s", g.lane_name(Some(&problem), lane), busy);
        }
    }
    if let Some(p) = &a.trace {
        io::write_text(p, &io::chrome_trace(&g, Some(&problem)))?;
    }
    if let Some(p) = &a.csv {
        io::write_text(p, &io::timeline_csv(&g, Some(&problem)))?;
    }
    if let Some(p) = &a.dot {
        io::write_text(p, &g.to_dot(Some(&problem)))?;
    }
    if a.check_delta {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut current = strategy;
        let mut applied = 0;
        for i in 0..a.changes {
            let next = propose(&current, &problem, a.max_degree, &mut rng);
            let Some(op) = (0..problem.num_ops()).find(|&o| next.configs[o] != current.configs[o])
            else {
                continue;
            };
            let changed =
                update_task_graph(&mut g, &problem, &profile, op, next.configs[op].clone())?;
            let delta = delta_simulate(&mut g, &changed)?;
            let mut fresh = build_task_graph(&problem, &next, &profile, build)?;
            let full = full_simulate(&mut fresh)?;
            if delta != full || g.schedule() != fresh.schedule() {
                return Err(Error::Diverged {
                    iteration: i as u64 + 1,
                    cached: delta.makespan,
                    fresh: full.makespan,
                });
            }
            current = next;
            applied += 1;
        }
        println!("delta check: {applied} changes match full simulation");
    }
    Ok(())
}

pub fn cmd_optimize(a: &OptimizeArgs) -> Result<()> {
    let (problem, profile, build) = a.problem.load()?;
    let budget = match (a.budget_seconds, a.budget_proposals) {
        (_, Some(n)) => Budget::Proposals(n),
        (Some(s), None) if s >= 0.0 => Budget::Seconds(s),
        (Some(s), None) => {
            return Err(Error::InvalidConfig {
                op: "<search>".into(),
                reason: format!("budget must be non-negative, got {s}"),
            })
        }
        (None, None) => Budget::Seconds(10.0),
    };
    let initial = a
        .init
        .iter()
        .map(|s| search_init(s, &problem))
        .collect::<Result<Vec<_>>>()?;
    let params = SearchParams {
        beta: a.beta,
        budget,
        max_degree: a.max_degree,
        seed: a.seed,
        initial,
        build,
        verify_every: a.verify_every,
        refine: a.refine.then(|| NeighborhoodParams {
            max_degree: a.max_degree,
            cap: a.neighbor_cap,
            build,
        }),
    };
    let report = mcmc_search(&problem, &profile, &params)?;
    println!("best cost: {:e} s", report.best_cost);
    println!("termination: {}", report.termination.as_str());
    println!("proposals: {}", report.proposals);
    if let Some(p) = &a.out {
        io::write_text(p, &io::strategy_to_json(&problem, &report.best))?;
    }
    if let Some(p) = &a.report {
        io::write_text(p, &io::report_to_json(&problem, &report))?;
    }
    Ok(())
}

pub fn cmd_enumerate(a: &EnumerateArgs) -> Result<()> {
    let graph = io::load_graph(&a.graph)?;
    let topology = io::load_topology(&a.topology)?;
    let problem = Problem::new(graph, topology)?;
    let i = problem.op_index(&a.op)?;
    let mut out = std::io::stdout().lock();
    for m in enumerate_configs(problem.op(i), problem.num_devices(), a.max_degree) {
        // stop quietly when the reader goes away (`| head`)
        if writeln!(out, "{m} tasks={}", m.size()).is_err() {
            break;
        }
    }
    Ok(())
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    if TOPOLOGIES.contains(&a.name.as_str()) {
        let d = TopologyParams::default();
        let p = TopologyParams {
            devices: a.devices.unwrap_or(d.devices),
            nodes: a.nodes.unwrap_or(d.nodes),
            gpus_per_node: a.gpus_per_node.unwrap_or(d.gpus_per_node),
            intra_bandwidth: a.intra_bandwidth.unwrap_or(d.intra_bandwidth),
            inter_bandwidth: a.inter_bandwidth.unwrap_or(d.inter_bandwidth),
            latency: a.latency.unwrap_or(d.latency),
        };
        let t = generate_topology(&a.name, &p)?;
        let report = validate_topology(&t);
        if !report.is_valid() {
            return Err(Error::InvalidTopology(report));
        }
        return io::write_text(&a.out, &io::topology_to_json(&t));
    }
    if !MODELS.contains(&a.name.as_str()) {
        return Err(Error::UnknownModel(format!(
            "{} (models: {}; topologies: {})",
            a.name,
            MODELS.join(", "),
            TOPOLOGIES.join(", ")
        )));
    }
    let d = ModelParams::default();
    let p = ModelParams {
        batch: a.batch.unwrap_or(d.batch),
        steps: a.steps.unwrap_or(d.steps),
        hidden: a.hidden.unwrap_or(d.hidden),
        vocab: a.vocab.unwrap_or(d.vocab),
        image: a.image.unwrap_or(d.image),
        channels: a.channels.unwrap_or(d.channels),
        classes: a.classes.unwrap_or(d.classes),
        element_size: d.element_size,
    };
    if p.batch == 0 || p.steps == 0 || p.hidden == 0 || p.vocab == 0 || p.channels == 0 {
        return Err(Error::InvalidConfig {
            op: "<generate>".into(),
            reason: "sizes must be positive".into(),
        });
    }
    let g = generate_model(&a.name, &p)?;
    let report = validate_graph(&g);
    if !report.is_valid() {
        return Err(Error::InvalidGraph(report));
    }
    io::write_text(&a.out, &io::graph_to_json(&g))
}

pub fn cmd_check(a: &CheckArgs) -> Result<()> {
    let graph = a.graph.as_deref().map(io::load_graph).transpose()?;
    let topology = a.topology.as_deref().map(io::load_topology).transpose()?;
    if let Some(g) = &graph {
        let report = validate_graph(g);
        if !report.is_valid() {
            return Err(Error::InvalidGraph(report));
        }
        println!("graph: {} operations, {} edges, valid", g.ops.len(), g.edges.len());
    }
    if let Some(t) = &topology {
        let report = validate_topology(t);
        if !report.is_valid() {
            return Err(Error::InvalidTopology(report));
        }
        println!(
            "topology: {} devices, {} connections, valid",
            t.devices.len(),
            t.connections.len()
        );
    }
    if let Some(p) = &a.profile {
        let profile = CostProfile::load(p, AnalyticCostModel::default())?;
        println!("profile: {} entries, valid", profile.len());
    }
    if let Some(path) = &a.strategy {
        let (Some(g), Some(t)) = (graph, topology) else {
            return Err(Error::InvalidConfig {
                op: "<check>".into(),
                reason: "checking a strategy needs --graph and --topology".into(),
            });
        };
        let problem = Problem::new(g, t)?;
        let s = io::load_strategy(&problem, path)?;
        println!("strategy: {} configurations, valid", s.configs.len());
    }
    Ok(())
}
