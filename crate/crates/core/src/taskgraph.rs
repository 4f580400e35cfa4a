//! Task graphs: the compute and transfer tasks implied by a strategy.
//!
//! Every operation contributes one task per partition. Every tensor edge
//! contributes, for each producer/consumer task pair whose regions overlap,
//! either a direct dependency (same device) or a transfer task on the link
//! between the two devices. Links are modeled as devices of their own, so a
//! graph has `num_devices + num_links` lanes.
//!
//! Task ids are structural: they encode what a task is (which operation and
//! partition, which edge and task pair, ...) rather than when it was created.
//! Rebuilding a graph from scratch and updating one in place therefore yield
//! the same ids, and id-based tie-breaking yields the same timeline.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cost::{comm_time, CostProfile};
use crate::error::{Error, Result};
use crate::model::Problem;
use crate::soap::{
    input_regions, output_region, param_slice_bytes, region_volume_bytes, InputSlot,
    ParallelizationConfig, ParallelizationStrategy, TensorRegion,
};

const FIELD_BITS: u32 = 20;
const FIELD_MASK: u64 = (1 << FIELD_BITS) - 1;

/// Structural task identifier; also the tie-breaker between equal ready times.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId(u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskCategory {
    Forward,
    Transfer,
    Backward,
    BackwardTransfer,
    Sync,
    Custom,
}

impl TaskId {
    fn pack(category: u64, a: usize, b: usize, c: usize) -> Self {
        debug_assert!([a, b, c].iter().all(|&x| (x as u64) <= FIELD_MASK));
        TaskId(
            category << (3 * FIELD_BITS)
                | (a as u64) << (2 * FIELD_BITS)
                | (b as u64) << FIELD_BITS
                | c as u64,
        )
    }

    pub fn forward(op: usize, index: usize) -> Self {
        Self::pack(0, op, index, 0)
    }

    pub fn transfer(edge: usize, src_index: usize, dst_index: usize) -> Self {
        Self::pack(1, edge, src_index, dst_index)
    }

    pub fn backward(op: usize, index: usize) -> Self {
        Self::pack(2, op, index, 0)
    }

    pub fn backward_transfer(edge: usize, src_index: usize, dst_index: usize) -> Self {
        Self::pack(3, edge, src_index, dst_index)
    }

    pub fn sync(op: usize, group: usize, step: usize) -> Self {
        Self::pack(4, op, group, step)
    }

    pub fn custom(n: usize) -> Self {
        TaskId(5 << (3 * FIELD_BITS) | n as u64)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn category(self) -> TaskCategory {
        match self.0 >> (3 * FIELD_BITS) {
            0 => TaskCategory::Forward,
            1 => TaskCategory::Transfer,
            2 => TaskCategory::Backward,
            3 => TaskCategory::BackwardTransfer,
            4 => TaskCategory::Sync,
            _ => TaskCategory::Custom,
        }
    }

    fn fields(self) -> (usize, usize, usize) {
        (
            (self.0 >> (2 * FIELD_BITS) & FIELD_MASK) as usize,
            (self.0 >> FIELD_BITS & FIELD_MASK) as usize,
            (self.0 & FIELD_MASK) as usize,
        )
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b, c) = self.fields();
        match self.category() {
            TaskCategory::Forward => write!(f, "fwd{a}.{b}"),
            TaskCategory::Transfer => write!(f, "xfer{a}.{b}>{c}"),
            TaskCategory::Backward => write!(f, "bwd{a}.{b}"),
            TaskCategory::BackwardTransfer => write!(f, "bxfer{a}.{c}>{b}"),
            TaskCategory::Sync => write!(f, "sync{a}.{b}.{c}"),
            TaskCategory::Custom => write!(f, "t{}", self.0 & ((1 << (3 * FIELD_BITS)) - 1)),
        }
    }
}

impl fmt::Debug for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Handle to a task slot. Valid until the next update of its graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskRef(pub(crate) u32);

impl TaskRef {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskKind {
    /// Forward computation of partition `index` of operation `op`.
    Compute { op: usize, index: usize },
    /// Gradient computation mirroring a forward task.
    Backward { op: usize, index: usize },
    /// Activation transfer along tensor edge `edge`.
    Transfer { edge: usize, bytes: u64 },
    /// Gradient transfer mirroring a forward transfer.
    BackwardTransfer { edge: usize, bytes: u64 },
    /// One hop of a ring all-reduce of `op`'s parameter gradients.
    Sync { op: usize, bytes: u64 },
    Custom,
}

impl TaskKind {
    pub fn bytes(&self) -> u64 {
        match self {
            TaskKind::Transfer { bytes, .. }
            | TaskKind::BackwardTransfer { bytes, .. }
            | TaskKind::Sync { bytes, .. } => *bytes,
            _ => 0,
        }
    }

    pub fn is_communication(&self) -> bool {
        matches!(
            self,
            TaskKind::Transfer { .. } | TaskKind::BackwardTransfer { .. } | TaskKind::Sync { .. }
        )
    }
}

#[derive(Clone, Debug)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    /// Device index, or `num_devices + link` for transfers.
    pub lane: usize,
    pub exe_time: f64,
    pub(crate) inputs: Vec<u32>,
    pub(crate) outputs: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskState {
    NotReady,
    Ready,
    Complete,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimelineEntry {
    pub ready: f64,
    pub start: f64,
    pub end: f64,
    pub state: TaskState,
}

impl TimelineEntry {
    const UNSET: TimelineEntry = TimelineEntry {
        ready: 0.0,
        start: 0.0,
        end: 0.0,
        state: TaskState::NotReady,
    };
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterationMode {
    /// Forward tasks and activation transfers only.
    #[default]
    Forward,
    /// Adds mirrored backward tasks and ring all-reduce parameter synchronization.
    FullIteration,
}

impl std::str::FromStr for IterationMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "forward" => Ok(IterationMode::Forward),
            "full-iteration" => Ok(IterationMode::FullIteration),
            other => Err(format!("unknown mode `{other}` (expected forward or full-iteration)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildOptions {
    pub mode: IterationMode,
    /// Backward task time as a multiple of the forward task time.
    pub backward_multiplier: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            mode: IterationMode::Forward,
            backward_multiplier: 2.0,
        }
    }
}

impl BuildOptions {
    pub fn full_iteration() -> Self {
        BuildOptions {
            mode: IterationMode::FullIteration,
            ..Default::default()
        }
    }
}

/// Position key within a lane: (ready time bits, task id). Ready times are
/// non-negative, so bit order is numeric order.
pub(crate) type LaneKey = (u64, u64);

pub(crate) fn lane_key(ready: f64, id: TaskId) -> LaneKey {
    (ready.to_bits(), id.0)
}

/// Tasks whose timing must be recomputed after an update.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChangeSet {
    pub tasks: Vec<TaskRef>,
}

impl ChangeSet {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct TaskGraph {
    pub(crate) options: BuildOptions,
    pub(crate) num_devices: usize,
    pub(crate) num_lanes: usize,
    pub(crate) tasks: Vec<Option<Task>>,
    free: Vec<u32>,
    live: usize,
    pub(crate) timeline: Vec<TimelineEntry>,
    /// Ready time under which the task is currently filed in its lane, if it is.
    pub(crate) placed: Vec<Option<f64>>,
    /// Per-lane execution order, sorted by [`LaneKey`].
    pub(crate) lanes: Vec<Vec<(LaneKey, u32)>>,
    pub(crate) simulated: bool,
    /// Surviving tasks whose lane predecessor was removed.
    pub(crate) pending: Vec<u32>,
    strategy: ParallelizationStrategy,
    fwd: Vec<Vec<u32>>,
    bwd: Vec<Vec<u32>>,
    sync: Vec<Vec<u32>>,
    fcomm: Vec<Vec<u32>>,
    bcomm: Vec<Vec<u32>>,
    out_regions: Vec<Vec<TensorRegion>>,
    in_regions: Vec<Vec<Vec<(InputSlot, TensorRegion)>>>,
    comm_bytes: u64,
    created: Vec<u32>,
    touched: Vec<u32>,
    tracking: bool,
}

impl TaskGraph {
    fn empty(num_devices: usize, num_lanes: usize, options: BuildOptions) -> Self {
        TaskGraph {
            options,
            num_devices,
            num_lanes,
            tasks: Vec::new(),
            free: Vec::new(),
            live: 0,
            timeline: Vec::new(),
            placed: Vec::new(),
            lanes: vec![Vec::new(); num_lanes],
            simulated: false,
            pending: Vec::new(),
            strategy: ParallelizationStrategy { configs: Vec::new() },
            fwd: Vec::new(),
            bwd: Vec::new(),
            sync: Vec::new(),
            fcomm: Vec::new(),
            bcomm: Vec::new(),
            out_regions: Vec::new(),
            in_regions: Vec::new(),
            comm_bytes: 0,
            created: Vec::new(),
            touched: Vec::new(),
            tracking: false,
        }
    }

    /// A graph of hand-made tasks, for experiments detached from any operator graph.
    ///
    /// `tasks[i] = (lane, exe_time)` gets id [`TaskId::custom`]`(i)`; `edges` are
    /// `(from, to)` index pairs. All lanes count as compute devices.
    pub fn from_tasks(num_lanes: usize, tasks: &[(usize, f64)], edges: &[(usize, usize)]) -> Self {
        let mut g = TaskGraph::empty(num_lanes, num_lanes, BuildOptions::default());
        for (i, &(lane, exe)) in tasks.iter().enumerate() {
            assert!(lane < num_lanes, "lane {lane} out of range");
            g.add_task(TaskId::custom(i), TaskKind::Custom, lane, exe);
        }
        for &(a, b) in edges {
            assert!(a < tasks.len() && b < tasks.len(), "edge endpoint out of range");
            g.link(a as u32, b as u32);
        }
        g
    }

    pub fn options(&self) -> BuildOptions {
        self.options
    }

    pub fn strategy(&self) -> &ParallelizationStrategy {
        &self.strategy
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn num_lanes(&self) -> usize {
        self.num_lanes
    }

    pub fn num_tasks(&self) -> usize {
        self.live
    }

    /// Number of dependency edges.
    pub fn num_edges(&self) -> usize {
        self.tasks().map(|(_, t)| t.inputs.len()).sum()
    }

    pub fn num_comm_tasks(&self) -> usize {
        self.tasks().filter(|(_, t)| t.kind.is_communication()).count()
    }

    /// Sum of bytes over all communication tasks.
    pub fn total_comm_bytes(&self) -> u64 {
        self.comm_bytes
    }

    pub fn is_simulated(&self) -> bool {
        self.simulated
    }

    pub fn tasks(&self) -> impl Iterator<Item = (TaskRef, &Task)> + '_ {
        self.tasks
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_ref().map(|t| (TaskRef(i as u32), t)))
    }

    pub fn task(&self, r: TaskRef) -> &Task {
        self.tasks[r.index()].as_ref().expect("live task")
    }

    pub fn inputs(&self, r: TaskRef) -> impl Iterator<Item = TaskRef> + '_ {
        self.task(r).inputs.iter().map(|&s| TaskRef(s))
    }

    pub fn outputs(&self, r: TaskRef) -> impl Iterator<Item = TaskRef> + '_ {
        self.task(r).outputs.iter().map(|&s| TaskRef(s))
    }

    pub fn timeline(&self, r: TaskRef) -> &TimelineEntry {
        &self.timeline[r.index()]
    }

    /// Tasks of a lane in execution order (empty before the first simulation).
    pub fn lane_order(&self, lane: usize) -> impl Iterator<Item = TaskRef> + '_ {
        self.lanes[lane].iter().map(|&(_, s)| TaskRef(s))
    }

    fn lane_position(&self, r: TaskRef) -> Option<usize> {
        let t = self.task(r);
        let ready = self.placed[r.index()]?;
        self.lanes[t.lane]
            .binary_search_by_key(&lane_key(ready, t.id), |&(k, _)| k)
            .ok()
    }

    /// The task running before `r` on the same lane.
    pub fn pre_task(&self, r: TaskRef) -> Option<TaskRef> {
        let pos = self.lane_position(r)?;
        let lane = &self.lanes[self.task(r).lane];
        pos.checked_sub(1).map(|p| TaskRef(lane[p].1))
    }

    /// The task running after `r` on the same lane.
    pub fn next_task(&self, r: TaskRef) -> Option<TaskRef> {
        let pos = self.lane_position(r)?;
        self.lanes[self.task(r).lane].get(pos + 1).map(|&(_, s)| TaskRef(s))
    }

    pub fn forward_tasks(&self, op: usize) -> impl Iterator<Item = TaskRef> + '_ {
        self.fwd[op].iter().map(|&s| TaskRef(s))
    }

    /// Locates a task by id.
    pub fn find(&self, id: TaskId) -> Option<TaskRef> {
        let (a, b, _) = id.fields();
        let within = |list: Option<&Vec<u32>>| {
            list.and_then(|l| {
                l.iter()
                    .copied()
                    .find(|&s| self.tasks[s as usize].as_ref().map(|t| t.id) == Some(id))
            })
        };
        let slot = match id.category() {
            TaskCategory::Forward => self.fwd.get(a).and_then(|l| l.get(b).copied()),
            TaskCategory::Backward => self.bwd.get(a).and_then(|l| l.get(b).copied()),
            TaskCategory::Transfer => within(self.fcomm.get(a)),
            TaskCategory::BackwardTransfer => within(self.bcomm.get(a)),
            TaskCategory::Sync => within(self.sync.get(a)),
            TaskCategory::Custom => {
                let n = (id.0 & ((1 << (3 * FIELD_BITS)) - 1)) as usize;
                (n < self.tasks.len()).then_some(n as u32)
            }
        }?;
        let t = self.tasks[slot as usize].as_ref()?;
        (t.id == id).then_some(TaskRef(slot))
    }

    /// Makespan of the current timeline: the latest end over all lanes.
    pub fn makespan(&self) -> f64 {
        self.lanes
            .iter()
            .filter_map(|l| l.last())
            .map(|&(_, s)| self.timeline[s as usize].end)
            .fold(0.0, f64::max)
    }

    /// Sum of execution times per lane.
    pub fn lane_busy_times(&self) -> Vec<f64> {
        let mut busy = vec![0.0; self.num_lanes];
        for (_, t) in self.tasks() {
            busy[t.lane] += t.exe_time;
        }
        busy
    }

    /// Structure as sorted `(id, lane, exe_time bits, sorted input ids)` rows.
    /// Two graphs with equal canonical forms are identical up to slot numbering.
    pub fn canonical(&self) -> Vec<(TaskId, usize, u64, Vec<TaskId>)> {
        let mut rows: Vec<_> = self
            .tasks()
            .map(|(r, t)| {
                let mut ins: Vec<TaskId> = self.inputs(r).map(|i| self.task(i).id).collect();
                ins.sort();
                (t.id, t.lane, t.exe_time.to_bits(), ins)
            })
            .collect();
        rows.sort_by_key(|r| r.0);
        rows
    }

    /// `(id, lane, start, end)` for every task, sorted by id.
    pub fn schedule(&self) -> Vec<(TaskId, usize, f64, f64)> {
        let mut rows: Vec<_> = self
            .tasks()
            .map(|(r, t)| {
                let e = self.timeline(r);
                (t.id, t.lane, e.start, e.end)
            })
            .collect();
        rows.sort_by_key(|r| r.0);
        rows
    }

    /// Human-readable lane name.
    pub fn lane_name(&self, problem: Option<&Problem>, lane: usize) -> String {
        match problem {
            Some(p) if lane < self.num_devices => p.device(lane).id.clone(),
            Some(p) => {
                let c = p.connection(lane - self.num_devices);
                format!("{}<->{}", c.a, c.b)
            }
            None => format!("lane{lane}"),
        }
    }

    /// Human-readable task label, using operation ids when `problem` is given.
    pub fn label(&self, problem: Option<&Problem>, r: TaskRef) -> String {
        let t = self.task(r);
        let (a, b, c) = t.id.fields();
        let op_name = |i: usize| problem.map_or(format!("op{i}"), |p| p.op(i).id.clone());
        let edge_name = |e: usize| {
            problem.map_or(format!("edge{e}"), |p| {
                let (s, d, _) = p.edge(e);
                format!("{}->{}", p.op(s).id, p.op(d).id)
            })
        };
        match t.id.category() {
            TaskCategory::Forward => format!("{}[{b}]", op_name(a)),
            TaskCategory::Backward => format!("grad {}[{b}]", op_name(a)),
            TaskCategory::Transfer => format!("{}[{b}>{c}]", edge_name(a)),
            TaskCategory::BackwardTransfer => format!("grad {}[{c}>{b}]", edge_name(a)),
            TaskCategory::Sync => format!("sync {} group {b} step {c}", op_name(a)),
            TaskCategory::Custom => t.id.to_string(),
        }
    }

    /// Graphviz rendering of the structure.
    ///
    /// Nodes are named by task id and labeled `<label>\n<lane>`; transfers are
    /// drawn as boxes, compute tasks as ellipses.
    pub fn to_dot(&self, problem: Option<&Problem>) -> String {
        let mut out = String::from("digraph tasks {\n");
        let mut refs: Vec<TaskRef> = self.tasks().map(|(r, _)| r).collect();
        refs.sort_by_key(|&r| self.task(r).id);
        for &r in &refs {
            let t = self.task(r);
            let shape = if t.kind.is_communication() { "box" } else { "ellipse" };
            let _ = writeln!(
                out,
                "  \"{}\" [label=\"{}\\n{}\", shape={shape}];",
                t.id,
                self.label(problem, r).replace('"', "'"),
                self.lane_name(problem, t.lane)
            );
        }
        for &r in &refs {
            let mut outs: Vec<TaskId> = self.outputs(r).map(|o| self.task(o).id).collect();
            outs.sort();
            for o in outs {
                let _ = writeln!(out, "  \"{}\" -> \"{}\";", self.task(r).id, o);
            }
        }
        out.push_str("}\n");
        out
    }

    // ---- mutation primitives ----

    fn add_task(&mut self, id: TaskId, kind: TaskKind, lane: usize, exe_time: f64) -> u32 {
        self.comm_bytes += kind.bytes();
        let task = Task {
            id,
            kind,
            lane,
            exe_time,
            inputs: Vec::new(),
            outputs: Vec::new(),
        };
        let slot = match self.free.pop() {
            Some(s) => {
                self.tasks[s as usize] = Some(task);
                self.timeline[s as usize] = TimelineEntry::UNSET;
                self.placed[s as usize] = None;
                s
            }
            None => {
                self.tasks.push(Some(task));
                self.timeline.push(TimelineEntry::UNSET);
                self.placed.push(None);
                (self.tasks.len() - 1) as u32
            }
        };
        self.live += 1;
        if self.tracking {
            self.created.push(slot);
        }
        slot
    }

    fn get_mut(&mut self, s: u32) -> &mut Task {
        self.tasks[s as usize].as_mut().expect("live task")
    }

    fn link(&mut self, from: u32, to: u32) {
        if self.get_mut(to).inputs.contains(&from) {
            return;
        }
        self.get_mut(to).inputs.push(from);
        self.get_mut(from).outputs.push(to);
        if self.tracking {
            self.touched.push(to);
        }
    }

    fn remove_task(&mut self, s: u32) {
        let Some(task) = self.tasks[s as usize].take() else {
            return;
        };
        for &p in &task.inputs {
            if let Some(t) = self.tasks[p as usize].as_mut() {
                t.outputs.retain(|&x| x != s);
            }
        }
        for &o in &task.outputs {
            if let Some(t) = self.tasks[o as usize].as_mut() {
                t.inputs.retain(|&x| x != s);
                self.touched.push(o);
            }
        }
        if let Some(ready) = self.placed[s as usize].take() {
            let lane = &mut self.lanes[task.lane];
            if let Ok(pos) = lane.binary_search_by_key(&lane_key(ready, task.id), |&(k, _)| k) {
                if let Some(&(_, next)) = lane.get(pos + 1) {
                    self.pending.push(next);
                }
                lane.remove(pos);
            }
        }
        self.comm_bytes -= task.kind.bytes();
        self.free.push(s);
        self.live -= 1;
    }

    // ---- construction shared by build and update ----

    fn compute_regions(&mut self, problem: &Problem, i: usize) -> Result<()> {
        let op = problem.op(i);
        let cfg = &self.strategy.configs[i];
        let mut outs = Vec::with_capacity(cfg.size());
        let mut ins = Vec::with_capacity(cfg.size());
        for k in 0..cfg.size() {
            let r = output_region(op, &cfg.degrees, k)?;
            ins.push(input_regions(op, &r)?);
            outs.push(r);
        }
        self.out_regions[i] = outs;
        self.in_regions[i] = ins;
        Ok(())
    }

    fn insert_op_tasks(&mut self, problem: &Problem, profile: &CostProfile, i: usize) {
        let op = problem.op(i);
        let full = self.options.mode == IterationMode::FullIteration;
        let assignment = self.strategy.configs[i].assignment.clone();
        let mut fwd = Vec::with_capacity(assignment.len());
        let mut bwd = Vec::new();
        for (k, &dev) in assignment.iter().enumerate() {
            let exe = profile.exe_time_keyed(
                problem.digest(i),
                op,
                &self.out_regions[i][k],
                problem.device_kind(dev),
            );
            let f = self.add_task(TaskId::forward(i, k), TaskKind::Compute { op: i, index: k }, dev, exe);
            fwd.push(f);
            if full {
                let b = self.add_task(
                    TaskId::backward(i, k),
                    TaskKind::Backward { op: i, index: k },
                    dev,
                    exe * self.options.backward_multiplier,
                );
                self.link(f, b);
                bwd.push(b);
            }
        }
        self.fwd[i] = fwd;
        self.bwd[i] = bwd;
    }

    fn connect_edge(&mut self, problem: &Problem, e: usize) -> Result<()> {
        let (src, dst, slot) = problem.edge(e);
        let elem = problem.edge_shape(e).element_size;
        let full = self.options.mode == IterationMode::FullIteration;
        let src_assign = self.strategy.configs[src].assignment.clone();
        let dst_assign = self.strategy.configs[dst].assignment.clone();
        let mut fcomm = Vec::new();
        let mut bcomm = Vec::new();
        for (q, &dq) in dst_assign.iter().enumerate() {
            let Some(need) = self.in_regions[dst][q]
                .iter()
                .find(|(s, _)| *s == InputSlot::Input(slot))
                .map(|(_, r)| r.clone())
            else {
                continue;
            };
            for (p, &dp) in src_assign.iter().enumerate() {
                let Some(shared) = self.out_regions[src][p].intersect(&need) else {
                    continue;
                };
                let (fp, fq) = (self.fwd[src][p], self.fwd[dst][q]);
                if dp == dq {
                    self.link(fp, fq);
                    if full {
                        let (bp, bq) = (self.bwd[src][p], self.bwd[dst][q]);
                        self.link(bq, bp);
                    }
                    continue;
                }
                let link = problem.route(dp, dq)?;
                let bytes = region_volume_bytes(&shared, elem);
                let time = comm_time(problem.connection(link), bytes);
                let lane = self.num_devices + link;
                let c = self.add_task(
                    TaskId::transfer(e, p, q),
                    TaskKind::Transfer { edge: e, bytes },
                    lane,
                    time,
                );
                self.link(fp, c);
                self.link(c, fq);
                fcomm.push(c);
                if full {
                    let (bp, bq) = (self.bwd[src][p], self.bwd[dst][q]);
                    let c = self.add_task(
                        TaskId::backward_transfer(e, p, q),
                        TaskKind::BackwardTransfer { edge: e, bytes },
                        lane,
                        time,
                    );
                    self.link(bq, c);
                    self.link(c, bp);
                    bcomm.push(c);
                }
            }
        }
        self.fcomm[e] = fcomm;
        self.bcomm[e] = bcomm;
        Ok(())
    }

    /// Ring all-reduce for every group of tasks sharing one parameter slice.
    fn insert_sync(&mut self, problem: &Problem, i: usize) -> Result<()> {
        let op = problem.op(i);
        if op.param_bytes == 0 {
            self.sync[i] = Vec::new();
            return Ok(());
        }
        let assignment = self.strategy.configs[i].assignment.clone();
        let mut groups: Vec<(TensorRegion, Vec<usize>)> = Vec::new();
        for k in 0..assignment.len() {
            let region = self.in_regions[i][k]
                .iter()
                .find(|(s, _)| *s == InputSlot::Parameter)
                .map(|(_, r)| r.clone())
                .expect("parameter region present when param_bytes > 0");
            match groups.iter_mut().find(|(r, _)| *r == region) {
                Some((_, members)) => members.push(k),
                None => groups.push((region, vec![k])),
            }
        }
        let mut tasks = Vec::new();
        for (g, (region, members)) in groups.iter().enumerate() {
            let mut ring: Vec<usize> = Vec::new();
            for &k in members {
                if !ring.contains(&assignment[k]) {
                    ring.push(assignment[k]);
                }
            }
            let r = ring.len();
            if r < 2 {
                continue;
            }
            let chunk = param_slice_bytes(op, region).div_ceil(r as u64);
            let mut prev: Option<u32> = None;
            for step in 0..2 * (r - 1) {
                let link = problem.route(ring[step % r], ring[(step + 1) % r])?;
                let s = self.add_task(
                    TaskId::sync(i, g, step),
                    TaskKind::Sync { op: i, bytes: chunk },
                    self.num_devices + link,
                    comm_time(problem.connection(link), chunk),
                );
                match prev {
                    None => {
                        for &k in members {
                            let b = self.bwd[i][k];
                            self.link(b, s);
                        }
                    }
                    Some(p) => self.link(p, s),
                }
                prev = Some(s);
                tasks.push(s);
            }
        }
        self.sync[i] = tasks;
        Ok(())
    }

    fn remove_op(&mut self, problem: &Problem, i: usize) {
        let mut doomed: Vec<u32> = Vec::new();
        doomed.append(&mut self.sync[i]);
        for &e in problem.in_edges(i).iter().chain(problem.out_edges(i)) {
            doomed.append(&mut self.fcomm[e]);
            doomed.append(&mut self.bcomm[e]);
        }
        doomed.append(&mut self.fwd[i]);
        doomed.append(&mut self.bwd[i]);
        for s in doomed {
            self.remove_task(s);
        }
    }

    fn insert_op(&mut self, problem: &Problem, profile: &CostProfile, i: usize) -> Result<()> {
        self.compute_regions(problem, i)?;
        self.insert_op_tasks(problem, profile, i);
        let mut edges: Vec<usize> = problem
            .in_edges(i)
            .iter()
            .chain(problem.out_edges(i))
            .copied()
            .collect();
        edges.sort_unstable();
        edges.dedup();
        for e in edges {
            self.connect_edge(problem, e)?;
        }
        if self.options.mode == IterationMode::FullIteration {
            self.insert_sync(problem, i)?;
        }
        Ok(())
    }
}

/// Builds the task graph of `strategy`.
pub fn build_task_graph(
    problem: &Problem,
    strategy: &ParallelizationStrategy,
    profile: &CostProfile,
    options: BuildOptions,
) -> Result<TaskGraph> {
    strategy.check(problem)?;
    let n = problem.num_ops();
    let mut g = TaskGraph::empty(
        problem.num_devices(),
        problem.num_devices() + problem.num_links(),
        options,
    );
    g.strategy = strategy.clone();
    g.fwd = vec![Vec::new(); n];
    g.bwd = vec![Vec::new(); n];
    g.sync = vec![Vec::new(); n];
    g.out_regions = vec![Vec::new(); n];
    g.in_regions = vec![Vec::new(); n];
    g.fcomm = vec![Vec::new(); problem.num_edges()];
    g.bcomm = vec![Vec::new(); problem.num_edges()];
    for i in 0..n {
        g.compute_regions(problem, i)?;
        g.insert_op_tasks(problem, profile, i);
    }
    for e in 0..problem.num_edges() {
        g.connect_edge(problem, e)?;
    }
    if options.mode == IterationMode::FullIteration {
        for i in 0..n {
            g.insert_sync(problem, i)?;
        }
    }
    Ok(g)
}

/// Replaces the configuration of operation `op` in place.
///
/// Returns the tasks whose input set changed or which are new; surviving tasks
/// keep their slots and timeline entries. On error the graph is left with its
/// previous configuration.
pub fn update_task_graph(
    graph: &mut TaskGraph,
    problem: &Problem,
    profile: &CostProfile,
    op: usize,
    config: ParallelizationConfig,
) -> Result<ChangeSet> {
    if op >= graph.strategy.configs.len() {
        return Err(Error::UnknownOp(format!("#{op}")));
    }
    if graph.strategy.configs[op] == config {
        return Ok(ChangeSet::default());
    }
    config.check(problem.op(op), problem.num_devices())?;
    graph.created.clear();
    graph.touched.clear();
    graph.tracking = true;
    let old = std::mem::replace(&mut graph.strategy.configs[op], config);
    graph.remove_op(problem, op);
    if let Err(e) = graph.insert_op(problem, profile, op) {
        graph.remove_op(problem, op);
        graph.strategy.configs[op] = old;
        graph
            .insert_op(problem, profile, op)
            .expect("previous configuration was valid");
        graph.tracking = false;
        let mut all = std::mem::take(&mut graph.created);
        all.append(&mut graph.touched);
        graph.pending.extend(all);
        return Err(e);
    }
    graph.tracking = false;

    let mut seen = vec![false; graph.tasks.len()];
    let mut tasks = Vec::with_capacity(graph.created.len() + graph.touched.len());
    for &s in graph.created.iter().chain(&graph.touched) {
        if graph.tasks[s as usize].is_some() && !seen[s as usize] {
            seen[s as usize] = true;
            tasks.push(TaskRef(s));
        }
    }
    Ok(ChangeSet { tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Connection, Device, DeviceTopology, Dim, OperatorGraph, OperatorKind, Operation,
        TensorEdge, TensorShape,
    };
    use crate::soap::Degrees;

    fn shape() -> TensorShape {
        TensorShape::new([(Dim::Sample, 8), (Dim::Channel, 8)], 4)
    }

    fn chain2() -> Problem {
        let op = |id: &str| Operation {
            id: id.into(),
            kind: OperatorKind::MatMul { in_channels: 8 },
            inputs: vec![shape()],
            output: shape(),
            param_bytes: 256,
        };
        let graph = OperatorGraph {
            ops: vec![op("a"), op("b")],
            edges: vec![TensorEdge {
                src: "a".into(),
                dst: "b".into(),
                shape: shape(),
            }],
        };
        let dev = |id: &str| Device {
            id: id.into(),
            kind: "gpu".into(),
            node: "n0".into(),
        };
        let topo = DeviceTopology {
            devices: vec![dev("g0"), dev("g1")],
            connections: vec![Connection {
                a: "g0".into(),
                b: "g1".into(),
                bandwidth: 1e9,
                latency: 0.0,
            }],
        };
        Problem::new(graph, topo).unwrap()
    }

    fn on(devices: &[usize]) -> ParallelizationStrategy {
        ParallelizationStrategy {
            configs: devices.iter().map(|&d| ParallelizationConfig::single(d)).collect(),
        }
    }

    #[test]
    fn same_device_chain_has_direct_edge() {
        let p = chain2();
        let g = build_task_graph(&p, &on(&[0, 0]), &CostProfile::default(), BuildOptions::default())
            .unwrap();
        assert_eq!((g.num_tasks(), g.num_edges(), g.num_comm_tasks()), (2, 1, 0));
    }

    #[test]
    fn cross_device_chain_adds_transfer() {
        let p = chain2();
        let g = build_task_graph(&p, &on(&[0, 1]), &CostProfile::default(), BuildOptions::default())
            .unwrap();
        assert_eq!((g.num_tasks(), g.num_edges(), g.num_comm_tasks()), (3, 2, 1));
        assert_eq!(g.total_comm_bytes(), 8 * 8 * 4);
        let c = g.find(TaskId::transfer(0, 0, 0)).unwrap();
        assert_eq!(g.task(c).lane, 2);
    }

    #[test]
    fn no_op_update_is_empty() {
        let p = chain2();
        let profile = CostProfile::default();
        let s = on(&[0, 1]);
        let mut g = build_task_graph(&p, &s, &profile, BuildOptions::default()).unwrap();
        let before = g.canonical();
        let changed = update_task_graph(&mut g, &p, &profile, 1, s.configs[1].clone()).unwrap();
        assert!(changed.is_empty());
        assert_eq!(g.canonical(), before);
    }

    #[test]
    fn update_matches_rebuild() {
        let p = chain2();
        let profile = CostProfile::default();
        let mut g = build_task_graph(&p, &on(&[0, 1]), &profile, BuildOptions::full_iteration())
            .unwrap();
        let cfg = ParallelizationConfig {
            degrees: Degrees::new([(Dim::Sample, 2)]),
            assignment: vec![0, 1],
        };
        update_task_graph(&mut g, &p, &profile, 0, cfg.clone()).unwrap();
        let mut s = on(&[0, 1]);
        s.configs[0] = cfg;
        let fresh = build_task_graph(&p, &s, &profile, BuildOptions::full_iteration()).unwrap();
        assert_eq!(g.canonical(), fresh.canonical());
        assert_eq!(g.total_comm_bytes(), fresh.total_comm_bytes());
    }

    #[test]
    fn data_parallel_full_iteration_has_ring_sync() {
        let p = chain2();
        let profile = CostProfile::default();
        let s = crate::soap::data_parallel_strategy(&p);
        let g = build_task_graph(&p, &s, &profile, BuildOptions::full_iteration()).unwrap();
        // per op: 2 fwd + 2 bwd + 2 sync hops; no activation transfers
        assert_eq!(g.num_tasks(), 12);
        let syncs = g
            .tasks()
            .filter(|(_, t)| matches!(t.kind, TaskKind::Sync { .. }))
            .count();
        assert_eq!(syncs, 4);
        assert_eq!(g.total_comm_bytes(), 4 * 128);
    }

    #[test]
    fn missing_link_is_no_route() {
        let mut p = chain2();
        let mut topo = p.topology().clone();
        topo.connections.clear();
        p = Problem::new(p.graph().clone(), topo).unwrap();
        let err = build_task_graph(&p, &on(&[0, 1]), &CostProfile::default(), BuildOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::NoRoute { .. }), "{err}");
    }

    #[test]
    fn task_id_display_and_category() {
        assert_eq!(TaskId::forward(3, 1).to_string(), "fwd3.1");
        assert_eq!(TaskId::transfer(2, 0, 1).category(), TaskCategory::Transfer);
        assert!(TaskId::forward(0, 5) < TaskId::transfer(0, 0, 0));
        assert_eq!(TaskId::custom(7).to_string(), "t7");
    }
}
