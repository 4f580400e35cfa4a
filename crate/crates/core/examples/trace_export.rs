//! Writes a Chrome trace, a CSV timeline, and a Graphviz task graph for a
//! random strategy. Open the trace in chrome://tracing or Perfetto.

use std::path::PathBuf;

use parasim::cost::CostProfile;
use parasim::generate::{full_mesh, generate_model, ModelParams};
use parasim::io;
use parasim::model::Problem;
use parasim::sim::full_simulate;
use parasim::soap::random_strategy;
use parasim::taskgraph::{build_task_graph, BuildOptions};

fn main() -> parasim::error::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("parasim-trace"));
    std::fs::create_dir_all(&out).map_err(|e| parasim::error::Error::Io {
        path: out.clone(),
        source: e,
    })?;

    let params = ModelParams {
        batch: 16,
        steps: 2,
        hidden: 64,
        vocab: 256,
        ..ModelParams::default()
    };
    let problem = Problem::new(generate_model("rnnlm-like", &params)?, full_mesh(4, 10e9))?;
    let strategy = random_strategy(&problem, 4, 1);
    let mut g = build_task_graph(
        &problem,
        &strategy,
        &CostProfile::default(),
        BuildOptions::full_iteration(),
    )?;
    full_simulate(&mut g)?;

    io::write_text(&out.join("trace.json"), &io::chrome_trace(&g, Some(&problem)))?;
    io::write_text(&out.join("timeline.csv"), &io::timeline_csv(&g, Some(&problem)))?;
    io::write_text(&out.join("tasks.dot"), &g.to_dot(Some(&problem)))?;
    println!("wrote trace.json, timeline.csv, tasks.dot to {}", out.display());
    Ok(())
}
