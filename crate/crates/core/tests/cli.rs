use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use parasim::io;
use parasim::model::Problem;

fn parasim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parasim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn makespan(out: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix("makespan: "))
        .and_then(|l| l.trim_end_matches(" s").parse().ok())
        .expect("makespan line")
}

#[test]
fn simulate_fixture_reproduces_golden_makespan() {
    let o = parasim(&[
        "simulate",
        "--graph",
        &fixture("rnn3_graph.json"),
        "--topology",
        &fixture("rnn3_topology.json"),
        "--init",
        &format!("file:{}", fixture("rnn3_layer_strategy.json")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let golden: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("rnn3_golden.json")).unwrap())
            .unwrap();
    assert_eq!(makespan(&stdout(&o)), golden["makespan"].as_f64().unwrap());
    assert!(stdout(&o).contains("total comm bytes: 1048576"));
    assert!(stdout(&o).contains("busy gpu2:"));
}

#[test]
fn missing_topology_is_an_input_error_naming_the_path() {
    let o = parasim(&[
        "simulate",
        "--graph",
        &fixture("rnn3_graph.json"),
        "--topology",
        "/nonexistent/topo.json",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/topo.json"));
}

#[test]
fn malformed_inputs_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(dir.path(), "bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let o = parasim(&["check", "--graph", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json"));

    let o = parasim(&["simulate", "--graph", &fixture("rnn3_graph.json")]);
    assert_eq!(o.status.code(), Some(2), "missing required flag");

    let o = parasim(&["generate", "no-such-model", "--out", &path(dir.path(), "x.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-model"));

    let strategy = path(dir.path(), "s.json");
    std::fs::write(
        &strategy,
        r#"{"format_version": 1, "configs": [{"op": "ghost", "degrees": {}, "assignment": ["gpu0"]}]}"#,
    )
    .unwrap();
    let o = parasim(&[
        "simulate",
        "--graph",
        &fixture("rnn3_graph.json"),
        "--topology",
        &fixture("rnn3_topology.json"),
        "--init",
        &format!("file:{strategy}"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ghost"));
}

#[test]
fn unreachable_devices_fail_simulation_with_status_one() {
    // gpu0 and gpu2 share no link in the fixture topology
    let dir = tempfile::tempdir().unwrap();
    let problem = Problem::new(
        io::load_graph(Path::new(&fixture("rnn3_graph.json"))).unwrap(),
        io::load_topology(Path::new(&fixture("rnn3_topology.json"))).unwrap(),
    )
    .unwrap();
    let mut s = io::load_strategy(&problem, Path::new(&fixture("rnn3_layer_strategy.json")))
        .unwrap();
    let lstm = problem.op_index("lstm_mm0").unwrap();
    s.configs[lstm].assignment = vec![2, 2];
    let file = path(dir.path(), "s.json");
    io::write_text(Path::new(&file), &io::strategy_to_json(&problem, &s)).unwrap();
    let o = parasim(&[
        "simulate",
        "--graph",
        &fixture("rnn3_graph.json"),
        "--topology",
        &fixture("rnn3_topology.json"),
        "--init",
        &format!("file:{file}"),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("no route"));
}

#[test]
fn generate_rnn3_matches_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "g.json");
    let o = parasim(&["generate", "rnn3", "--steps", "2", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        io::load_graph(Path::new(&out)).unwrap(),
        io::load_graph(Path::new(&fixture("rnn3_graph.json"))).unwrap()
    );
}

#[test]
fn generated_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "alex.json");
    assert!(parasim(&["generate", "alexnet-like", "--out", &out]).status.success());
    let g = io::load_graph(Path::new(&out)).unwrap();
    for op in &g.ops {
        let fanout = g.edges.iter().filter(|e| e.src == op.id).count();
        assert!(fanout <= 1, "{} fans out", op.id);
    }

    let out = path(dir.path(), "nmt.json");
    assert!(parasim(&["generate", "nmt-like", "--steps", "4", "--out", &out]).status.success());
    let g = io::load_graph(Path::new(&out)).unwrap();
    let branching = g
        .ops
        .iter()
        .any(|op| g.edges.iter().filter(|e| e.src == op.id).count() >= 2);
    assert!(branching);

    let out = path(dir.path(), "k80.json");
    let o = parasim(&["generate", "k80-cluster", "--nodes", "2", "--out", &out]);
    assert!(o.status.success());
    let t = io::load_topology(Path::new(&out)).unwrap();
    assert_eq!(t.devices.len(), 8);
    let o = parasim(&["check", "--topology", &out]);
    assert!(o.status.success());
}

#[test]
fn check_delta_on_nmt_passes() {
    let dir = tempfile::tempdir().unwrap();
    let g = path(dir.path(), "nmt.json");
    let t = path(dir.path(), "mesh.json");
    assert!(parasim(&["generate", "nmt-like", "--steps", "3", "--out", &g]).status.success());
    assert!(parasim(&["generate", "full-mesh", "--devices", "8", "--out", &t]).status.success());
    let o = parasim(&[
        "simulate",
        "--graph",
        &g,
        "--topology",
        &t,
        "--check-delta",
        "--changes",
        "100",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("match full simulation"));
}

#[test]
fn optimize_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let g = path(dir.path(), "g.json");
    let t = path(dir.path(), "t.json");
    assert!(parasim(&["generate", "rnn3", "--steps", "3", "--out", &g]).status.success());
    assert!(parasim(&["generate", "full-mesh", "--devices", "4", "--out", &t]).status.success());
    let run = |tag: &str| {
        let best = path(dir.path(), &format!("best-{tag}.json"));
        let report = path(dir.path(), &format!("report-{tag}.json"));
        let o = parasim(&[
            "optimize",
            "--graph",
            &g,
            "--topology",
            &t,
            "--budget-proposals",
            "300",
            "--seed",
            "11",
            "--out",
            &best,
            "--report",
            &report,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("termination: "));
        (best, std::fs::read(&report).unwrap())
    };
    let (best, first) = run("a");
    let (_, second) = run("b");
    assert_eq!(first, second);

    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["format_version"], 1);
    let o = parasim(&["check", "--graph", &g, "--topology", &t, "--strategy", &best]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = parasim(&[
        "simulate",
        "--graph",
        &g,
        "--topology",
        &t,
        "--init",
        &format!("file:{best}"),
    ]);
    assert!(o.status.success());
    assert_eq!(makespan(&stdout(&o)), report["best_cost"].as_f64().unwrap());
}

#[test]
fn optimize_single_op_graph_with_time_budget() {
    let dir = tempfile::tempdir().unwrap();
    let g = path(dir.path(), "g.json");
    std::fs::write(
        &g,
        r#"{"format_version": 1,
            "ops": [{"id": "fc", "kind": {"type": "MatMul", "in_channels": 64},
                     "inputs": [{"dims": [["sample", 32], ["channel", 64]], "element_size": 4}],
                     "output": {"dims": [["sample", 32], ["channel", 64]], "element_size": 4},
                     "param_bytes": 16384}],
            "edges": []}"#,
    )
    .unwrap();
    let t = path(dir.path(), "t.json");
    assert!(parasim(&["generate", "full-mesh", "--devices", "2", "--out", &t]).status.success());
    let best = path(dir.path(), "best.json");
    let o = parasim(&[
        "optimize",
        "--graph",
        &g,
        "--topology",
        &t,
        "--budget-seconds",
        "1",
        "--out",
        &best,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = parasim(&["check", "--graph", &g, "--topology", &t, "--strategy", &best]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn simulate_writes_exports() {
    let dir = tempfile::tempdir().unwrap();
    let trace = path(dir.path(), "trace.json");
    let csv = path(dir.path(), "timeline.csv");
    let dot = path(dir.path(), "graph.dot");
    let o = parasim(&[
        "simulate",
        "--graph",
        &fixture("rnn3_graph.json"),
        "--topology",
        &fixture("rnn3_topology.json"),
        "--init",
        &format!("file:{}", fixture("rnn3_layer_strategy.json")),
        "--mode",
        "full-iteration",
        "--trace",
        &trace,
        "--csv",
        &csv,
        "--dot",
        &dot,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert!(trace["traceEvents"].as_array().unwrap().len() > 26);
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert!(csv.starts_with("task,device,start,end"));
    assert!(std::fs::read_to_string(&dot).unwrap().starts_with("digraph"));
}

#[test]
fn enumerate_lists_degree_maps() {
    let o = parasim(&[
        "enumerate",
        "--graph",
        &fixture("rnn3_graph.json"),
        "--topology",
        &fixture("rnn3_topology.json"),
        "--op",
        "linear0",
        "--max-degree",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines, ["{} tasks=1", "{channel:2} tasks=2", "{sample:2} tasks=2"]);
}
