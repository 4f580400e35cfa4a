//! Searches for a strategy for a small translation model on two 4-GPU nodes
//! and compares it with data parallelism.

use parasim::cost::{AnalyticCostModel, CostProfile};
use parasim::generate::{cluster, generate_model, ModelParams, TopologyParams};
use parasim::model::Problem;
use parasim::search::{mcmc_search, Budget, SearchParams};
use parasim::sim::full_simulate;
use parasim::soap::data_parallel_strategy;
use parasim::taskgraph::{build_task_graph, BuildOptions};

fn main() -> parasim::error::Result<()> {
    let params = ModelParams {
        batch: 32,
        steps: 4,
        hidden: 256,
        vocab: 2048,
        ..ModelParams::default()
    };
    let problem = Problem::new(
        generate_model("nmt-like", &params)?,
        cluster(2, 4, "gpu", &TopologyParams::default()),
    )?;
    let profile = CostProfile::new(AnalyticCostModel::uniform(1e12, 5e-6));
    let build = BuildOptions::full_iteration();

    let dp = {
        let mut g = build_task_graph(&problem, &data_parallel_strategy(&problem), &profile, build)?;
        full_simulate(&mut g)?.makespan
    };
    let report = mcmc_search(
        &problem,
        &profile,
        &SearchParams {
            budget: Budget::Proposals(5_000),
            build,
            seed: 7,
            ..SearchParams::default()
        },
    )?;
    println!("data parallel: {:.3} ms per iteration", dp * 1e3);
    println!(
        "searched:      {:.3} ms per iteration ({} proposals, {})",
        report.best_cost * 1e3,
        report.proposals,
        report.termination.as_str()
    );
    for (op, cfg) in problem.graph().ops.iter().zip(&report.best.configs) {
        let devices: Vec<&str> = cfg
            .assignment
            .iter()
            .map(|&d| problem.device(d).id.as_str())
            .collect();
        println!("  {:<12} {:<22} {}", op.id, cfg.degrees.to_string(), devices.join(","));
    }
    Ok(())
}
