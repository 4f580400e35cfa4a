//! Frozen expectations for the three-layer RNN fixture under layer-per-device
//! placement. Run with `PARASIM_BLESS=1` to rewrite the graph fixture and the
//! golden makespan after an intentional cost model change.

use std::path::PathBuf;

use parasim::cost::{AnalyticCostModel, CostProfile};
use parasim::generate::{generate_model, ModelParams};
use parasim::io;
use parasim::model::Problem;
use parasim::sim::{delta_simulate, full_simulate, oracle_simulate};
use parasim::soap::{Degrees, ParallelizationConfig};
use parasim::taskgraph::{build_task_graph, update_task_graph, BuildOptions, TaskId};
use serde::{Deserialize, Serialize};

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Golden {
    provenance: String,
    tasks: usize,
    edges: usize,
    comm_tasks: usize,
    comm_bytes: u64,
    makespan: f64,
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn blessing() -> bool {
    std::env::var_os("PARASIM_BLESS").is_some()
}

fn params() -> ModelParams {
    ModelParams {
        steps: 2,
        ..ModelParams::default()
    }
}

fn problem() -> Problem {
    let graph = io::load_graph(&fixture("rnn3_graph.json")).unwrap();
    let topology = io::load_topology(&fixture("rnn3_topology.json")).unwrap();
    Problem::new(graph, topology).unwrap()
}

/// The CLI's default analytic model.
fn profile() -> CostProfile {
    CostProfile::new(AnalyticCostModel::uniform(1e12, 5e-6))
}

#[test]
fn generator_reproduces_fixture_graph() {
    let generated = generate_model("rnn3", &params()).unwrap();
    if blessing() {
        io::write_text(&fixture("rnn3_graph.json"), &io::graph_to_json(&generated)).unwrap();
    }
    let stored = io::load_graph(&fixture("rnn3_graph.json")).unwrap();
    assert_eq!(generated, stored);
}

#[test]
fn layer_per_device_matches_golden() {
    let problem = problem();
    let strategy = io::load_strategy(&problem, &fixture("rnn3_layer_strategy.json")).unwrap();
    let profile = profile();
    let mut g = build_task_graph(&problem, &strategy, &profile, BuildOptions::default()).unwrap();
    let oracle = oracle_simulate(&g).unwrap();
    let path = fixture("rnn3_golden.json");
    if blessing() {
        // Counts are from a hand count of the construction rules: 9 ops x 2
        // tasks, plus 2 transfers for each of the 4 cross-device edges; 8
        // same-device edges plus 2 per transfer.
        let golden = Golden {
            provenance: "counts: hand count of task graph construction; makespan: \
                         oracle_simulate with a uniform analytic model of 1e12 FLOP/s \
                         and 5e-6 s per task"
                .into(),
            tasks: 26,
            edges: 24,
            comm_tasks: 8,
            comm_bytes: 8 * 32 * 1024 * 4,
            makespan: oracle,
        };
        io::write_text(&path, &serde_json::to_string_pretty(&golden).unwrap()).unwrap();
    }
    let golden: Golden = serde_json::from_str(&io::read_text(&path).unwrap()).unwrap();
    assert_eq!(g.num_tasks(), golden.tasks);
    assert_eq!(g.num_edges(), golden.edges);
    assert_eq!(g.num_comm_tasks(), golden.comm_tasks);
    assert_eq!(g.total_comm_bytes(), golden.comm_bytes);
    assert_eq!(oracle, golden.makespan);
    assert_eq!(full_simulate(&mut g).unwrap().makespan, golden.makespan);
}

#[test]
fn transfers_use_both_links_once_per_step_and_half() {
    let problem = problem();
    let strategy = io::load_strategy(&problem, &fixture("rnn3_layer_strategy.json")).unwrap();
    let mut g = build_task_graph(&problem, &strategy, &profile(), BuildOptions::default()).unwrap();
    full_simulate(&mut g).unwrap();
    let busy = g.lane_busy_times();
    let per_link: Vec<usize> = (3..5).map(|lane| g.lane_order(lane).count()).collect();
    assert_eq!(per_link, vec![4, 4]);
    assert!(busy[3] > 0.0 && busy[4] > 0.0);
}

/// Collapsing the first recurrent matmul to one task rebuilds that task, its
/// two incoming transfers, and the two consumers whose inputs changed.
#[test]
fn collapsing_one_op_changes_only_its_neighbourhood() {
    let problem = problem();
    let strategy = io::load_strategy(&problem, &fixture("rnn3_layer_strategy.json")).unwrap();
    let profile = profile();
    let mut g = build_task_graph(&problem, &strategy, &profile, BuildOptions::default()).unwrap();
    full_simulate(&mut g).unwrap();

    let op = problem.op_index("lstm_mm0").unwrap();
    let act = problem.op_index("lstm_h0").unwrap();
    let edge = problem.in_edges(op)[0];
    let one = ParallelizationConfig {
        degrees: Degrees::one(),
        assignment: vec![problem.device_index("gpu1").unwrap()],
    };
    let changed = update_task_graph(&mut g, &problem, &profile, op, one).unwrap();
    let mut got: Vec<TaskId> = changed.tasks.iter().map(|&r| g.task(r).id).collect();
    got.sort();
    let mut want = vec![
        TaskId::forward(op, 0),
        TaskId::transfer(edge, 0, 0),
        TaskId::transfer(edge, 1, 0),
        TaskId::forward(act, 0),
        TaskId::forward(act, 1),
    ];
    want.sort();
    assert_eq!(got, want);
    assert_eq!(g.num_tasks(), 25);

    let delta = delta_simulate(&mut g, &changed).unwrap();
    assert_eq!(delta.makespan, oracle_simulate(&g).unwrap());
}
