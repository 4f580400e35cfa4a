//! Strategy search.
//!
//! [`mcmc_search`] runs Metropolis-Hastings chains whose cost is the simulated
//! makespan; each proposal replaces one operation's configuration and is
//! evaluated incrementally with [`delta_simulate`]. [`exhaustive_optimal`]
//! and [`local_optimality_check`] enumerate strategies for small instances.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::CostProfile;
use crate::error::{Error, Result};
use crate::model::{OperatorKind, Problem};
use crate::sim::{delta_simulate, full_simulate};
use crate::soap::{
    data_parallel_strategy, enumerate_configs, output_region, ConfigSampler,
    random_strategy_with, single_device_strategy, Degrees, ParallelizationConfig,
    ParallelizationStrategy,
};
use crate::taskgraph::{
    build_task_graph, update_task_graph, BuildOptions, ChangeSet, IterationMode, TaskGraph,
    TaskKind,
    TaskRef,
};

/// Replaces the configuration of one uniformly chosen operation with a uniformly
/// random valid (degree map, assignment) pair, possibly the current one. The
/// proposal probability of a move equals that of its reverse.
pub fn propose<R: Rng + ?Sized>(
    s: &ParallelizationStrategy,
    problem: &Problem,
    max_degree: usize,
    rng: &mut R,
) -> ParallelizationStrategy {
    let op = rng.gen_range(0..problem.num_ops());
    let sampler = ConfigSampler::new(problem.op(op), problem.num_devices(), max_degree);
    let mut out = s.clone();
    out.configs[op] = sampler.draw(rng);
    out
}

/// Metropolis-Hastings acceptance with probability `min(1, exp(beta * (cost_s - cost_star)))`.
///
/// `beta` may be `f64::INFINITY`, which accepts exactly the non-worsening proposals.
pub fn accept<R: Rng + ?Sized>(cost_s: f64, cost_star: f64, beta: f64, rng: &mut R) -> bool {
    if cost_star <= cost_s {
        return true;
    }
    let p = (beta * (cost_s - cost_star)).exp();
    rng.gen::<f64>() < p
}

/// When a chain stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    /// Wall-clock seconds per chain.
    Seconds(f64),
    /// Proposals per chain; makes runs reproducible.
    Proposals(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialStrategy {
    DataParallel,
    Random,
    Given(ParallelizationStrategy),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchParams {
    /// Inverse temperature; `None` picks `ln 10 / (0.05 · initial cost)` per chain,
    /// so a 5% cost increase is accepted with probability 0.1.
    pub beta: Option<f64>,
    pub budget: Budget,
    pub max_degree: usize,
    pub seed: u64,
    /// One chain per entry.
    pub initial: Vec<InitialStrategy>,
    pub build: BuildOptions,
    /// Recompute the current strategy from scratch every this many proposals
    /// and fail if the incremental cost disagrees.
    pub verify_every: Option<u64>,
    /// After the chains finish, move to improving single-operation neighbors
    /// of the best strategy until there are none.
    pub refine: Option<NeighborhoodParams>,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            beta: None,
            budget: Budget::Seconds(10.0),
            max_degree: usize::MAX,
            seed: 0,
            initial: vec![InitialStrategy::DataParallel, InitialStrategy::Random],
            build: BuildOptions::default(),
            verify_every: None,
            refine: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Budget,
    Stagnation,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Budget => "budget",
            Termination::Stagnation => "stagnation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    /// 0 for the initial strategy.
    pub iteration: u64,
    pub cost: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainReport {
    pub initial_cost: f64,
    pub beta: f64,
    pub best: ParallelizationStrategy,
    pub best_cost: f64,
    pub proposals: u64,
    pub accepted: u64,
    pub termination: Termination,
    pub trace: Vec<TraceEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchReport {
    pub best: ParallelizationStrategy,
    pub best_cost: f64,
    /// Index of the chain that found `best`.
    pub best_chain: usize,
    /// Proposals over all chains.
    pub proposals: u64,
    /// Termination of the best chain.
    pub termination: Termination,
    /// Improving moves applied by refinement.
    pub refinement_steps: u64,
    pub chains: Vec<ChainReport>,
}

/// Per-operation samplers, cached for proposal drawing. Draws the same
/// sequence as [`propose`] for the same rng state.
struct Proposer {
    samplers: Vec<ConfigSampler>,
}

impl Proposer {
    fn new(problem: &Problem, max_degree: usize) -> Self {
        Proposer {
            samplers: (0..problem.num_ops())
                .map(|i| ConfigSampler::new(problem.op(i), problem.num_devices(), max_degree))
                .collect(),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, ParallelizationConfig) {
        let op = rng.gen_range(0..self.samplers.len());
        (op, self.samplers[op].draw(rng))
    }
}

/// Applies `config` to `op` and returns the new makespan.
fn evaluate(
    g: &mut TaskGraph,
    problem: &Problem,
    profile: &CostProfile,
    op: usize,
    config: ParallelizationConfig,
) -> Result<f64> {
    let changed = update_task_graph(g, problem, profile, op, config)?;
    Ok(delta_simulate(g, &changed)?.makespan)
}

fn run_chain(
    problem: &Problem,
    profile: &CostProfile,
    params: &SearchParams,
    index: usize,
) -> Result<ChainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);
    let mut current = match &params.initial[index] {
        InitialStrategy::DataParallel => data_parallel_strategy(problem),
        InitialStrategy::Random => random_strategy_with(problem, params.max_degree, &mut rng),
        InitialStrategy::Given(s) => s.clone(),
    };
    let mut g = build_task_graph(problem, &current, profile, params.build)?;
    let mut cost = full_simulate(&mut g)?.makespan;
    let initial_cost = cost;
    let beta = params
        .beta
        .unwrap_or_else(|| std::f64::consts::LN_10 / (0.05 * initial_cost));
    let proposer = Proposer::new(problem, params.max_degree);

    let mut best = current.clone();
    let mut best_cost = cost;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        cost,
        accepted: true,
    }];
    let started = Instant::now();
    let mut last_improvement = 0.0f64;
    let mut last_improvement_iter = 0u64;
    let mut accepted_count = 0;
    let mut iteration = 0u64;
    let termination = loop {
        match params.budget {
            Budget::Proposals(n) => {
                if iteration >= n {
                    break Termination::Budget;
                }
                if (iteration - last_improvement_iter) * 2 > n {
                    break Termination::Stagnation;
                }
            }
            Budget::Seconds(limit) => {
                let now = started.elapsed().as_secs_f64();
                if now >= limit {
                    break Termination::Budget;
                }
                if now - last_improvement > limit / 2.0 {
                    break Termination::Stagnation;
                }
            }
        }
        iteration += 1;
        let (op, config) = proposer.draw(&mut rng);
        let previous = current.configs[op].clone();
        let proposed_cost = evaluate(&mut g, problem, profile, op, config.clone())
            .map_err(|e| e.chain(format!("chain {index}, proposal {iteration}")))?;
        let ok = accept(cost, proposed_cost, beta, &mut rng);
        if ok {
            current.configs[op] = config;
            cost = proposed_cost;
            accepted_count += 1;
            if cost < best_cost {
                best_cost = cost;
                best = current.clone();
                last_improvement = started.elapsed().as_secs_f64();
                last_improvement_iter = iteration;
            }
        } else {
            evaluate(&mut g, problem, profile, op, previous)
                .map_err(|e| e.chain(format!("chain {index}, rollback {iteration}")))?;
        }
        trace.push(TraceEntry {
            iteration,
            cost: proposed_cost,
            accepted: ok,
        });
        if let Some(k) = params.verify_every {
            if k > 0 && iteration % k == 0 {
                let mut fresh = build_task_graph(problem, &current, profile, params.build)?;
                let fresh_cost = full_simulate(&mut fresh)?.makespan;
                if fresh_cost != cost {
                    return Err(Error::Diverged {
                        iteration,
                        cached: cost,
                        fresh: fresh_cost,
                    });
                }
            }
        }
    };
    Ok(ChainReport {
        initial_cost,
        beta,
        best,
        best_cost,
        proposals: iteration,
        accepted: accepted_count,
        termination,
        trace,
    })
}

/// Runs one Metropolis-Hastings chain per initial strategy, concurrently, and
/// returns the best strategy found by any of them.
pub fn mcmc_search(
    problem: &Problem,
    profile: &CostProfile,
    params: &SearchParams,
) -> Result<SearchReport> {
    if params.initial.is_empty() {
        return Err(Error::InvalidConfig {
            op: "<search>".into(),
            reason: "no initial strategies".into(),
        });
    }
    if let Some(b) = params.beta {
        if !(b > 0.0) {
            return Err(Error::InvalidConfig {
                op: "<search>".into(),
                reason: format!("beta must be positive, got {b}"),
            });
        }
    }
    let results: Vec<Result<ChainReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..params.initial.len())
            .map(|i| scope.spawn(move || run_chain(problem, profile, params, i)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("search chain panicked"))
            .collect()
    });
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best_chain = 0;
    for (i, c) in chains.iter().enumerate() {
        if c.best_cost < chains[best_chain].best_cost {
            best_chain = i;
        }
    }
    let mut best = chains[best_chain].best.clone();
    let mut best_cost = chains[best_chain].best_cost;
    let mut refinement_steps = 0;
    if let Some(np) = &params.refine {
        let np = NeighborhoodParams {
            build: params.build,
            ..np.clone()
        };
        loop {
            let check = local_optimality_check(&best, problem, profile, &np)?;
            match check.improvement {
                Some((s, c)) => {
                    best = s;
                    best_cost = c;
                    refinement_steps += 1;
                }
                None => break,
            }
        }
    }
    Ok(SearchReport {
        best,
        best_cost,
        best_chain,
        proposals: chains.iter().map(|c| c.proposals).sum(),
        termination: chains[best_chain].termination,
        refinement_steps,
        chains,
    })
}

/// Bounds on single-operation neighborhood enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodParams {
    pub max_degree: usize,
    /// Refuse when the neighborhood has more strategies than this.
    pub cap: f64,
    pub build: BuildOptions,
}

impl Default for NeighborhoodParams {
    fn default() -> Self {
        NeighborhoodParams {
            max_degree: usize::MAX,
            cap: 1e6,
            build: BuildOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalCheck {
    pub cost: f64,
    /// Neighbors simulated before stopping.
    pub evaluated: u64,
    /// First neighbor found with strictly lower cost, and its cost.
    pub improvement: Option<(ParallelizationStrategy, f64)>,
}

impl LocalCheck {
    pub fn is_local_optimum(&self) -> bool {
        self.improvement.is_none()
    }
}

/// Calls `f` with every assignment of `size` tasks to `devices` devices, in
/// lexicographic order. Stops early when `f` returns `false`.
fn for_each_assignment(
    size: usize,
    devices: usize,
    mut f: impl FnMut(&[usize]) -> Result<bool>,
) -> Result<()> {
    let mut a = vec![0usize; size];
    loop {
        if !f(&a)? {
            return Ok(());
        }
        let mut i = size;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            a[i] += 1;
            if a[i] < devices {
                break;
            }
            a[i] = 0;
        }
    }
}

/// Whether any single-operation configuration change lowers the simulated cost.
///
/// Neighbors are enumerated operation by operation, degree map by degree map,
/// with assignments in lexicographic order; the first improvement is returned.
pub fn local_optimality_check(
    s: &ParallelizationStrategy,
    problem: &Problem,
    profile: &CostProfile,
    params: &NeighborhoodParams,
) -> Result<LocalCheck> {
    let nd = problem.num_devices();
    let maps: Vec<Vec<Degrees>> = (0..problem.num_ops())
        .map(|i| enumerate_configs(problem.op(i), nd, params.max_degree))
        .collect();
    let estimate: f64 = maps
        .iter()
        .flatten()
        .map(|m| (nd as f64).powi(m.size() as i32))
        .sum();
    if estimate > params.cap {
        return Err(Error::SearchSpaceTooLarge {
            estimate,
            cap: params.cap,
        });
    }
    let mut g = build_task_graph(problem, s, profile, params.build)?;
    let cost = full_simulate(&mut g)?.makespan;
    let mut evaluated = 0;
    let mut improvement = None;
    for (op, op_maps) in maps.iter().enumerate() {
        let original = s.configs[op].clone();
        for m in op_maps {
            for_each_assignment(m.size(), nd, |a| {
                let cfg = ParallelizationConfig {
                    degrees: m.clone(),
                    assignment: a.to_vec(),
                };
                if cfg == original {
                    return Ok(true);
                }
                let c = evaluate(&mut g, problem, profile, op, cfg.clone())?;
                evaluated += 1;
                if c < cost {
                    let mut better = s.clone();
                    better.configs[op] = cfg;
                    improvement = Some((better, c));
                    return Ok(false);
                }
                Ok(true)
            })?;
            if improvement.is_some() {
                return Ok(LocalCheck {
                    cost,
                    evaluated,
                    improvement,
                });
            }
        }
        evaluate(&mut g, problem, profile, op, original)?;
    }
    Ok(LocalCheck {
        cost,
        evaluated,
        improvement,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExhaustiveParams {
    pub max_degree: usize,
    /// Refuse when the raw strategy count exceeds this.
    pub cap: f64,
    /// Skip subtrees whose lower bound cannot beat the best strategy so far.
    pub prune: bool,
    /// Enumerate only one representative of device assignments that differ by
    /// a permutation of interchangeable devices.
    pub canonicalize: bool,
    pub build: BuildOptions,
}

impl Default for ExhaustiveParams {
    fn default() -> Self {
        ExhaustiveParams {
            max_degree: usize::MAX,
            cap: 1e12,
            prune: true,
            canonicalize: true,
            build: BuildOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExhaustiveResult {
    pub strategy: ParallelizationStrategy,
    pub cost: f64,
    /// Complete strategies simulated.
    pub evaluated: u64,
    /// Subtrees cut by the lower bound.
    pub pruned: u64,
}

/// Groups devices into classes whose members can be swapped pairwise without
/// changing the topology (same kind, same links to every other device).
pub fn interchangeable_classes(problem: &Problem) -> Vec<usize> {
    let n = problem.num_devices();
    let link = |a: usize, b: usize| {
        problem.link_between(a, b).map(|l| {
            let c = problem.connection(l);
            (c.bandwidth.to_bits(), c.latency.to_bits())
        })
    };
    let swappable = |a: usize, b: usize| {
        problem.device(a).kind == problem.device(b).kind
            && (0..n)
                .filter(|&c| c != a && c != b)
                .all(|c| link(a, c) == link(b, c))
    };
    let mut class = vec![usize::MAX; n];
    for a in 0..n {
        if class[a] != usize::MAX {
            continue;
        }
        class[a] = a;
        for b in a + 1..n {
            if class[b] == usize::MAX && swappable(a, b) {
                class[b] = a;
            }
        }
    }
    class
}

/// Per-configuration task execution times, used by the lower bound.
struct OpTable {
    /// (degree map, per task and device: exe time).
    maps: Vec<(Degrees, Vec<Vec<f64>>)>,
    /// Smallest task exe time over every configuration.
    min_task: f64,
    /// Smallest total work over every configuration.
    min_work: f64,
}

struct Dfs<'a> {
    problem: &'a Problem,
    profile: &'a CostProfile,
    params: &'a ExhaustiveParams,
    tables: Vec<OpTable>,
    class: Vec<usize>,
    order: Vec<usize>,
    /// Work multiplier per task: 1, or 1 + backward multiplier.
    work_factor: f64,
    graph: TaskGraph,
    pending: Vec<TaskRef>,
    current: ParallelizationStrategy,
    placed: Vec<bool>,
    /// Scratch for the path bound, indexed by task slot.
    task_finish: Vec<f64>,
    link_work: Vec<f64>,
    device_work: Vec<f64>,
    placed_work: f64,
    remaining_min_work: f64,
    used: Vec<u32>,
    best: Option<(ParallelizationStrategy, f64)>,
    evaluated: u64,
    pruned: u64,
}

impl Dfs<'_> {
    fn lower_bound(&mut self) -> f64 {
        let nd = self.problem.num_devices() as f64;
        let busiest = self.device_work.iter().copied().fold(0.0, f64::max);
        let spread = (self.placed_work + self.remaining_min_work) / nd;
        let path = self.path_bound();
        let link = self.link_work.iter().copied().fold(0.0, f64::max);
        busiest.max(spread).max(path).max(link)
    }

    /// Longest dependency chain. Placed operations are followed task by task
    /// through their actual transfers; the rest contribute their cheapest task
    /// and no communication. Also refreshes the per-link transfer work.
    fn path_bound(&mut self) -> f64 {
        let p = self.problem;
        let g = &self.graph;
        self.task_finish.clear();
        self.task_finish.resize(g.tasks.len(), 0.0);
        self.link_work.iter_mut().for_each(|w| *w = 0.0);
        let nd = p.num_devices();
        let mut finish = vec![0.0f64; p.num_ops()];
        let mut best = 0.0f64;
        for &i in p.topo_order() {
            if self.placed[i] {
                let mut earliest = f64::INFINITY;
                for t in g.forward_tasks(i) {
                    let mut ready = 0.0f64;
                    for input in g.inputs(t) {
                        let task = g.task(input);
                        let done = match task.kind {
                            TaskKind::Compute { .. } => self.task_finish[input.index()],
                            TaskKind::Transfer { .. } => {
                                self.link_work[task.lane - nd] += task.exe_time;
                                let src = task.inputs.first().map_or(0.0, |&s| {
                                    self.task_finish[s as usize]
                                });
                                src + task.exe_time
                            }
                            _ => 0.0,
                        };
                        ready = ready.max(done);
                    }
                    let end = ready + g.task(t).exe_time;
                    self.task_finish[t.index()] = end;
                    earliest = earliest.min(end);
                }
                finish[i] = earliest;
            } else {
                let ins = p.in_edges(i);
                let before = if ins.is_empty() {
                    0.0
                } else if matches!(p.op(i).kind, OperatorKind::Concat { .. }) {
                    // a concat task may read only some of its inputs
                    ins.iter()
                        .map(|&e| finish[p.edge(e).0])
                        .fold(f64::INFINITY, f64::min)
                } else {
                    ins.iter().map(|&e| finish[p.edge(e).0]).fold(0.0, f64::max)
                };
                finish[i] = before + self.tables[i].min_task;
            }
            best = best.max(finish[i]);
        }
        best
    }

    fn visit(&mut self, depth: usize) -> Result<()> {
        if depth == self.order.len() {
            let changed = ChangeSet {
                tasks: std::mem::take(&mut self.pending),
            };
            let cost = delta_simulate(&mut self.graph, &changed)?.makespan;
            self.evaluated += 1;
            if self.best.as_ref().is_none_or(|(_, b)| cost < *b) {
                self.best = Some((self.current.clone(), cost));
            }
            return Ok(());
        }
        let op = self.order[depth];
        let nd = self.problem.num_devices();
        for m in 0..self.tables[op].maps.len() {
            let size = self.tables[op].maps[m].0.size();
            let mut assignment = Vec::with_capacity(size);
            self.assign(depth, op, m, &mut assignment, nd)?;
        }
        Ok(())
    }

    /// Chooses devices for the tasks of `op` one at a time, then recurses.
    fn assign(
        &mut self,
        depth: usize,
        op: usize,
        m: usize,
        assignment: &mut Vec<usize>,
        nd: usize,
    ) -> Result<()> {
        let k = assignment.len();
        if k == self.tables[op].maps[m].0.size() {
            return self.descend(depth, op, m, assignment);
        }
        let mut first_unused_of_class = vec![false; nd];
        for d in 0..nd {
            if self.params.canonicalize && self.used[d] == 0 {
                let c = self.class[d];
                if first_unused_of_class[c] {
                    continue;
                }
                first_unused_of_class[c] = true;
            }
            assignment.push(d);
            self.used[d] += 1;
            self.assign(depth, op, m, assignment, nd)?;
            self.used[d] -= 1;
            assignment.pop();
        }
        Ok(())
    }

    fn descend(&mut self, depth: usize, op: usize, m: usize, assignment: &[usize]) -> Result<()> {
        let times: Vec<f64> = assignment
            .iter()
            .enumerate()
            .map(|(k, &d)| self.tables[op].maps[m].1[k][d])
            .collect();
        let mut work = 0.0;
        for (&d, &t) in assignment.iter().zip(&times) {
            self.device_work[d] += t * self.work_factor;
            work += t * self.work_factor;
        }
        self.placed[op] = true;
        self.placed_work += work;
        self.remaining_min_work -= self.tables[op].min_work;

        let cfg = ParallelizationConfig {
            degrees: self.tables[op].maps[m].0.clone(),
            assignment: assignment.to_vec(),
        };
        self.current.configs[op] = cfg.clone();
        let result = update_task_graph(&mut self.graph, self.problem, self.profile, op, cfg)
            .and_then(|changed| {
                self.pending.extend(changed.tasks);
                let hopeless = self.params.prune
                    && self.best.is_some()
                    && self.lower_bound() >= self.best.as_ref().map_or(f64::INFINITY, |b| b.1);
                if hopeless {
                    self.pruned += 1;
                    Ok(())
                } else {
                    self.visit(depth + 1)
                }
            });

        self.remaining_min_work += self.tables[op].min_work;
        self.placed_work -= work;
        self.placed[op] = false;
        for (&d, &t) in assignment.iter().zip(&times) {
            self.device_work[d] -= t * self.work_factor;
        }
        result
    }
}

/// Globally optimal strategy by depth-first enumeration with branch-and-bound.
///
/// Operations are assigned in topological order. The lower bound of a partial
/// strategy is the maximum of the busiest device's assigned work, the total
/// work (placed plus the cheapest possible for the rest) spread over all
/// devices, and the longest operation chain counting each operation's
/// cheapest task; transfers are ignored, so the bound is admissible.
pub fn exhaustive_optimal(
    problem: &Problem,
    profile: &CostProfile,
    params: &ExhaustiveParams,
) -> Result<ExhaustiveResult> {
    let nd = problem.num_devices();
    let mut estimate = 1.0f64;
    let mut tables = Vec::with_capacity(problem.num_ops());
    for i in 0..problem.num_ops() {
        let op = problem.op(i);
        let maps = enumerate_configs(op, nd, params.max_degree);
        estimate *= maps
            .iter()
            .map(|m| (nd as f64).powi(m.size() as i32))
            .sum::<f64>();
        if estimate > params.cap {
            return Err(Error::SearchSpaceTooLarge {
                estimate,
                cap: params.cap,
            });
        }
        let mut rows = Vec::with_capacity(maps.len());
        let mut min_task = f64::INFINITY;
        let mut min_work = f64::INFINITY;
        for m in maps {
            let mut per_task = Vec::with_capacity(m.size());
            for k in 0..m.size() {
                let region = output_region(op, &m, k)?;
                let times: Vec<f64> = (0..nd)
                    .map(|d| profile.task_exe_time(op, &region, &problem.device(d).kind))
                    .collect();
                per_task.push(times);
            }
            let fastest: Vec<f64> = per_task
                .iter()
                .map(|t| t.iter().copied().fold(f64::INFINITY, f64::min))
                .collect();
            min_task = fastest.iter().copied().fold(min_task, f64::min);
            min_work = min_work.min(fastest.iter().sum());
            rows.push((m, per_task));
        }
        tables.push(OpTable {
            maps: rows,
            min_task,
            min_work,
        });
    }
    let work_factor = match params.build.mode {
        IterationMode::Forward => 1.0,
        IterationMode::FullIteration => 1.0 + params.build.backward_multiplier,
    };
    for t in &mut tables {
        t.min_work *= work_factor;
    }

    let start = ParallelizationStrategy {
        configs: (0..problem.num_ops())
            .map(|_| ParallelizationConfig::single(0))
            .collect(),
    };
    let mut graph = build_task_graph(problem, &start, profile, params.build)?;
    full_simulate(&mut graph)?;
    let remaining_min_work = tables.iter().map(|t| t.min_work).sum();
    let mut dfs = Dfs {
        problem,
        profile,
        params,
        class: if params.canonicalize {
            interchangeable_classes(problem)
        } else {
            (0..nd).collect()
        },
        order: problem.topo_order().to_vec(),
        work_factor,
        graph,
        pending: Vec::new(),
        current: start,
        placed: vec![false; problem.num_ops()],
        task_finish: Vec::new(),
        link_work: vec![0.0; problem.num_links()],
        device_work: vec![0.0; nd],
        placed_work: 0.0,
        remaining_min_work,
        used: vec![0; nd],
        best: None,
        evaluated: 0,
        pruned: 0,
        tables,
    };
    // a good incumbent from the start lets the bound cut early
    for seed in [data_parallel_strategy(problem), single_device_strategy(problem)] {
        if seed.configs.iter().all(|c| c.size() <= params.max_degree) {
            let mut g = build_task_graph(problem, &seed, profile, params.build)?;
            let cost = full_simulate(&mut g)?.makespan;
            if dfs.best.as_ref().is_none_or(|b| cost < b.1) {
                dfs.best = Some((seed, cost));
            }
        }
    }
    dfs.visit(0)?;
    let (strategy, cost) = dfs.best.expect("at least one strategy exists");
    Ok(ExhaustiveResult {
        strategy,
        cost,
        evaluated: dfs.evaluated,
        pruned: dfs.pruned,
    })
}
