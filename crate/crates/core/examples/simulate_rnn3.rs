//! Simulates a three-layer recurrent model with one layer per GPU and prints
//! the per-lane execution order.

use parasim::cost::{AnalyticCostModel, CostProfile};
use parasim::generate::{full_mesh, generate_model, ModelParams};
use parasim::model::Problem;
use parasim::sim::{critical_path, full_simulate};
use parasim::soap::{Degrees, ParallelizationConfig, ParallelizationStrategy};
use parasim::taskgraph::{build_task_graph, BuildOptions};

fn main() -> parasim::error::Result<()> {
    let params = ModelParams {
        steps: 2,
        ..ModelParams::default()
    };
    let problem = Problem::new(generate_model("rnn3", &params)?, full_mesh(3, 20e9))?;

    // embedding on gpu0, recurrent layer on gpu1, classifier on gpu2; every
    // op split in two along the sample dimension
    let configs = problem
        .graph()
        .ops
        .iter()
        .map(|op| {
            let device = if op.id.starts_with("embed") {
                0
            } else if op.id.starts_with("lstm") {
                1
            } else {
                2
            };
            ParallelizationConfig {
                degrees: Degrees::new([(parasim::model::Dim::Sample, 2)]),
                assignment: vec![device, device],
            }
        })
        .collect();
    let strategy = ParallelizationStrategy { configs };

    let profile = CostProfile::new(AnalyticCostModel::uniform(1e12, 5e-6));
    let mut g = build_task_graph(&problem, &strategy, &profile, BuildOptions::default())?;
    let result = full_simulate(&mut g)?;
    println!(
        "{} tasks ({} transfers, {} bytes)",
        g.num_tasks(),
        g.num_comm_tasks(),
        g.total_comm_bytes()
    );
    println!(
        "makespan {:.3} ms, critical path {:.3} ms",
        result.makespan * 1e3,
        critical_path(&g)? * 1e3
    );
    for lane in 0..g.num_lanes() {
        println!("{}:", g.lane_name(Some(&problem), lane));
        for r in g.lane_order(lane) {
            let e = g.timeline(r);
            println!(
                "  {:>9.3} .. {:>9.3} us  {}",
                e.start * 1e6,
                e.end * 1e6,
                g.label(Some(&problem), r)
            );
        }
    }
    Ok(())
}
