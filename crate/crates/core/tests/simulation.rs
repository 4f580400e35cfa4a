use parasim::cost::CostProfile;
use parasim::generate::{full_mesh, generate_model, ModelParams};
use parasim::model::Problem;
use parasim::sim::{delta_simulate, full_simulate, oracle_simulate};
use parasim::soap::{enumerate_configs, random_config, random_strategy};
use parasim::taskgraph::{build_task_graph, update_task_graph, BuildOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(steps: usize) -> ModelParams {
    ModelParams {
        batch: 8,
        steps,
        hidden: 16,
        vocab: 32,
        image: 16,
        channels: 4,
        classes: 6,
        element_size: 4,
    }
}

fn mutation_chain(model: &str, devices: usize, steps: usize, options: BuildOptions, seed: u64) {
    let problem = Problem::new(
        generate_model(model, &small(3)).unwrap(),
        full_mesh(devices, 1e9),
    )
    .unwrap();
    let profile = CostProfile::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strategy = random_strategy(&problem, 4, seed);
    let mut g = build_task_graph(&problem, &strategy, &profile, options).unwrap();
    full_simulate(&mut g).unwrap();
    for step in 0..steps {
        let op = rng.gen_range(0..problem.num_ops());
        let choices = enumerate_configs(problem.op(op), devices, 4);
        let cfg = random_config(&choices, devices, &mut rng);
        strategy.configs[op] = cfg.clone();
        let changed = update_task_graph(&mut g, &problem, &profile, op, cfg).unwrap();
        let delta = delta_simulate(&mut g, &changed).unwrap();
        let mut fresh = build_task_graph(&problem, &strategy, &profile, options).unwrap();
        let full = full_simulate(&mut fresh).unwrap();
        assert_eq!(g.canonical(), fresh.canonical(), "structure, step {step}");
        assert_eq!(delta, full, "step {step}");
        assert_eq!(g.schedule(), fresh.schedule(), "timeline, step {step}");
        if step % 50 == 0 {
            assert_eq!(oracle_simulate(&fresh).unwrap(), full.makespan);
        }
    }
}

#[test]
fn delta_matches_full_forward() {
    mutation_chain("nmt-like", 8, 300, BuildOptions::default(), 1);
    mutation_chain("inception-like", 4, 200, BuildOptions::default(), 2);
}

#[test]
fn delta_matches_full_full_iteration() {
    mutation_chain("rnnlm-like", 6, 300, BuildOptions::full_iteration(), 3);
    mutation_chain("resnet-like", 3, 200, BuildOptions::full_iteration(), 4);
}
