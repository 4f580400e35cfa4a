//! Finds the optimal strategy of a tiny LeNet on four devices by exhaustive
//! search and checks that the MCMC search reaches it.

use std::time::Instant;

use parasim::cost::{AnalyticCostModel, CostProfile};
use parasim::generate::{full_mesh, generate_model, ModelParams};
use parasim::model::Problem;
use parasim::search::{
    exhaustive_optimal, local_optimality_check, mcmc_search, Budget, ExhaustiveParams,
    NeighborhoodParams, SearchParams,
};

fn main() -> parasim::error::Result<()> {
    let params = ModelParams {
        batch: 1,
        steps: 2,
        hidden: 7,
        vocab: 11,
        image: 7,
        channels: 5,
        classes: 3,
        element_size: 4,
    };
    let problem = Problem::new(generate_model("lenet-like", &params)?, full_mesh(4, 3e7))?;
    let profile = CostProfile::new(AnalyticCostModel::uniform(1e9, 1e-6));

    let t = Instant::now();
    let opt = exhaustive_optimal(&problem, &profile, &ExhaustiveParams::default())?;
    println!(
        "exhaustive: {:.4e} s, {} strategies simulated, {} subtrees pruned, {:.2?}",
        opt.cost,
        opt.evaluated,
        opt.pruned,
        t.elapsed()
    );

    let t = Instant::now();
    let report = mcmc_search(
        &problem,
        &profile,
        &SearchParams {
            budget: Budget::Proposals(100_000),
            ..SearchParams::default()
        },
    )?;
    println!(
        "mcmc:       {:.4e} s after {} proposals, {:.2?}",
        report.best_cost,
        report.proposals,
        t.elapsed()
    );

    let check =
        local_optimality_check(&report.best, &problem, &profile, &NeighborhoodParams::default())?;
    println!(
        "locally optimal: {} ({} neighbours)",
        check.is_local_optimum(),
        check.evaluated
    );
    Ok(())
}
