//! Times incremental re-simulation against rebuilding and re-simulating from
//! scratch over a chain of random single-operation changes.
//!
//! `cargo run --release --example delta_vs_full -- 16` uses 16 devices.

use std::time::{Duration, Instant};

use parasim::cost::CostProfile;
use parasim::generate::{cluster, generate_model, ModelParams, TopologyParams};
use parasim::model::Problem;
use parasim::sim::{delta_simulate, full_simulate};
use parasim::soap::{data_parallel_strategy, ConfigSampler};
use parasim::taskgraph::{build_task_graph, update_task_graph, BuildOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> parasim::error::Result<()> {
    let devices: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(8);
    let problem = Problem::new(
        generate_model("nmt-like", &ModelParams::default())?,
        cluster(devices.div_ceil(4), devices.min(4), "gpu", &TopologyParams::default()),
    )?;
    let profile = CostProfile::default();
    let options = BuildOptions::default();
    let samplers: Vec<ConfigSampler> = (0..problem.num_ops())
        .map(|i| ConfigSampler::new(problem.op(i), devices, usize::MAX))
        .collect();

    let mut strategy = data_parallel_strategy(&problem);
    let mut g = build_task_graph(&problem, &strategy, &profile, options)?;
    full_simulate(&mut g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut delta, mut full) = (Duration::ZERO, Duration::ZERO);
    let changes = 200;
    for _ in 0..changes {
        let op = rng.gen_range(0..problem.num_ops());
        let cfg = samplers[op].draw(&mut rng);
        strategy.configs[op] = cfg.clone();

        let t = Instant::now();
        let changed = update_task_graph(&mut g, &problem, &profile, op, cfg)?;
        let a = delta_simulate(&mut g, &changed)?;
        delta += t.elapsed();

        let t = Instant::now();
        let mut fresh = build_task_graph(&problem, &strategy, &profile, options)?;
        let b = full_simulate(&mut fresh)?;
        full += t.elapsed();

        assert_eq!(a, b);
        assert_eq!(g.schedule(), fresh.schedule());
    }
    println!(
        "{devices} devices, {} tasks after {changes} changes",
        g.num_tasks()
    );
    println!(
        "update+delta {:?}/change, build+full {:?}/change, speedup {:.2}x",
        delta / changes,
        full / changes,
        full.as_secs_f64() / delta.as_secs_f64()
    );
    Ok(())
}
