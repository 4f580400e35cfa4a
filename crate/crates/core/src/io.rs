//! File formats.
//!
//! Graphs, topologies, strategies and search reports are JSON objects carrying
//! `"format_version": 1`. Strategies name operations and devices by id:
//!
//! ```json
//! {"format_version": 1,
//!  "configs": [{"op": "fc1", "degrees": {"sample": 2}, "assignment": ["gpu0", "gpu1"]}]}
//! ```
//!
//! Timelines export to Chrome trace-event JSON (one thread per lane, times in
//! microseconds) and to CSV with columns `task,device,start,end` (seconds).

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceTopology, OperatorGraph, Problem};
use crate::search::{ChainReport, SearchReport, Termination, TraceEntry};
use crate::soap::{Degrees, ParallelizationConfig, ParallelizationStrategy};
use crate::taskgraph::TaskGraph;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    format_version: u32,
    #[serde(flatten)]
    body: T,
}

fn to_json<T: Serialize>(body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Versioned {
        format_version: FORMAT_VERSION,
        body,
    })
    .expect("in-memory values serialize");
    s.push('\n');
    s
}

fn from_json<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    let v: Versioned<T> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if v.format_version != FORMAT_VERSION {
        return Err(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            v.format_version
        ));
    }
    Ok(v.body)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_file<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    let text = read_text(path)?;
    parse(&text).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other.chain(path.display().to_string()),
    })
}

fn format_error(message: String) -> Error {
    Error::Format {
        path: "<input>".into(),
        message,
    }
}

pub fn graph_to_json(g: &OperatorGraph) -> String {
    to_json(g)
}

pub fn graph_from_json(text: &str) -> Result<OperatorGraph> {
    from_json(text).map_err(format_error)
}

pub fn load_graph(path: &Path) -> Result<OperatorGraph> {
    parse_file(path, graph_from_json)
}

pub fn topology_to_json(t: &DeviceTopology) -> String {
    to_json(t)
}

pub fn topology_from_json(text: &str) -> Result<DeviceTopology> {
    from_json(text).map_err(format_error)
}

pub fn load_topology(path: &Path) -> Result<DeviceTopology> {
    parse_file(path, topology_from_json)
}

#[derive(Serialize, Deserialize)]
struct ConfigRecord {
    op: String,
    degrees: Degrees,
    assignment: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct StrategyRecord {
    configs: Vec<ConfigRecord>,
}

fn strategy_record(problem: &Problem, s: &ParallelizationStrategy) -> StrategyRecord {
    StrategyRecord {
        configs: s
            .configs
            .iter()
            .enumerate()
            .map(|(i, c)| ConfigRecord {
                op: problem.op(i).id.clone(),
                degrees: c.degrees.clone(),
                assignment: c
                    .assignment
                    .iter()
                    .map(|&d| problem.device(d).id.clone())
                    .collect(),
            })
            .collect(),
    }
}

fn strategy_from_record(problem: &Problem, r: StrategyRecord) -> Result<ParallelizationStrategy> {
    let mut configs: Vec<Option<ParallelizationConfig>> = vec![None; problem.num_ops()];
    for c in r.configs {
        let i = problem.op_index(&c.op)?;
        if configs[i].is_some() {
            return Err(Error::InvalidConfig {
                op: c.op,
                reason: "configured twice".into(),
            });
        }
        let assignment = c
            .assignment
            .iter()
            .map(|d| problem.device_index(d))
            .collect::<Result<Vec<_>>>()?;
        configs[i] = Some(ParallelizationConfig {
            degrees: c.degrees,
            assignment,
        });
    }
    let configs = configs
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| Error::InvalidConfig {
                op: problem.op(i).id.clone(),
                reason: "missing from strategy".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let s = ParallelizationStrategy { configs };
    s.check(problem)?;
    Ok(s)
}

pub fn strategy_to_json(problem: &Problem, s: &ParallelizationStrategy) -> String {
    to_json(&strategy_record(problem, s))
}

/// Parses and validates a strategy against `problem`.
pub fn strategy_from_json(problem: &Problem, text: &str) -> Result<ParallelizationStrategy> {
    let r: StrategyRecord = from_json(text).map_err(format_error)?;
    strategy_from_record(problem, r)
}

pub fn load_strategy(problem: &Problem, path: &Path) -> Result<ParallelizationStrategy> {
    parse_file(path, |t| strategy_from_json(problem, t))
}

#[derive(Serialize, Deserialize)]
struct ChainRecord {
    initial_cost: f64,
    /// `null` stands for an infinite beta.
    beta: Option<f64>,
    best_cost: f64,
    proposals: u64,
    accepted: u64,
    termination: String,
    best_strategy: StrategyRecord,
    /// `[iteration, cost, accepted]` rows.
    trace: Vec<(u64, f64, bool)>,
}

#[derive(Serialize, Deserialize)]
struct ReportRecord {
    best_cost: f64,
    best_chain: usize,
    proposals: u64,
    termination: String,
    refinement_steps: u64,
    best_strategy: StrategyRecord,
    chains: Vec<ChainRecord>,
}

fn termination_from(s: &str) -> Result<Termination> {
    match s {
        "budget" => Ok(Termination::Budget),
        "stagnation" => Ok(Termination::Stagnation),
        other => Err(format_error(format!("unknown termination `{other}`"))),
    }
}

pub fn report_to_json(problem: &Problem, r: &SearchReport) -> String {
    to_json(&ReportRecord {
        best_cost: r.best_cost,
        best_chain: r.best_chain,
        proposals: r.proposals,
        termination: r.termination.as_str().into(),
        refinement_steps: r.refinement_steps,
        best_strategy: strategy_record(problem, &r.best),
        chains: r
            .chains
            .iter()
            .map(|c| ChainRecord {
                initial_cost: c.initial_cost,
                beta: c.beta.is_finite().then_some(c.beta),
                best_cost: c.best_cost,
                proposals: c.proposals,
                accepted: c.accepted,
                termination: c.termination.as_str().into(),
                best_strategy: strategy_record(problem, &c.best),
                trace: c
                    .trace
                    .iter()
                    .map(|t| (t.iteration, t.cost, t.accepted))
                    .collect(),
            })
            .collect(),
    })
}

pub fn report_from_json(problem: &Problem, text: &str) -> Result<SearchReport> {
    let r: ReportRecord = from_json(text).map_err(format_error)?;
    let chains = r
        .chains
        .into_iter()
        .map(|c| {
            Ok(ChainReport {
                initial_cost: c.initial_cost,
                beta: c.beta.unwrap_or(f64::INFINITY),
                best: strategy_from_record(problem, c.best_strategy)?,
                best_cost: c.best_cost,
                proposals: c.proposals,
                accepted: c.accepted,
                termination: termination_from(&c.termination)?,
                trace: c
                    .trace
                    .into_iter()
                    .map(|(iteration, cost, accepted)| TraceEntry {
                        iteration,
                        cost,
                        accepted,
                    })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchReport {
        best: strategy_from_record(problem, r.best_strategy)?,
        best_cost: r.best_cost,
        best_chain: r.best_chain,
        proposals: r.proposals,
        termination: termination_from(&r.termination)?,
        refinement_steps: r.refinement_steps,
        chains,
    })
}

#[derive(Serialize)]
struct TraceEvent {
    name: String,
    cat: &'static str,
    ph: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    ts: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dur: Option<f64>,
    pid: u32,
    tid: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    args: Option<serde_json::Value>,
}

/// Chrome trace-event JSON of a simulated graph.
pub fn chrome_trace(g: &TaskGraph, problem: Option<&Problem>) -> String {
    let mut events = Vec::new();
    for lane in 0..g.num_lanes() {
        events.push(TraceEvent {
            name: "thread_name".into(),
            cat: "__metadata",
            ph: "M",
            ts: None,
            dur: None,
            pid: 0,
            tid: lane,
            args: Some(serde_json::json!({ "name": g.lane_name(problem, lane) })),
        });
    }
    let mut rows: Vec<_> = g.tasks().collect();
    rows.sort_by_key(|(_, t)| t.id);
    for (r, t) in rows {
        let e = g.timeline(r);
        events.push(TraceEvent {
            name: g.label(problem, r),
            cat: if t.kind.is_communication() {
                "comm"
            } else {
                "compute"
            },
            ph: "X",
            ts: Some(e.start * 1e6),
            dur: Some(t.exe_time * 1e6),
            pid: 0,
            tid: t.lane,
            args: Some(serde_json::json!({ "id": t.id.to_string(), "ready_us": e.ready * 1e6 })),
        });
    }
    let mut s = serde_json::to_string(&serde_json::json!({ "traceEvents": events }))
        .expect("trace serializes");
    s.push('\n');
    s
}

/// `task,device,start,end` rows sorted by task id; times in seconds.
pub fn timeline_csv(g: &TaskGraph, problem: Option<&Problem>) -> String {
    let mut out = String::from("task,device,start,end\n");
    let mut rows: Vec<_> = g.tasks().collect();
    rows.sort_by_key(|(_, t)| t.id);
    for (r, t) in rows {
        let e = g.timeline(r);
        let _ = writeln!(
            out,
            "{},{},{:e},{:e}",
            csv_field(&g.label(problem, r)),
            csv_field(&g.lane_name(problem, t.lane)),
            e.start,
            e.end
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
