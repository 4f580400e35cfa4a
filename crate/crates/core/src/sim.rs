//! Timeline computation.
//!
//! Every lane runs its tasks one at a time in order of ready time (ties by
//! task id); a task is ready once all of its inputs have finished and starts
//! as soon as it is ready and its lane is free. [`full_simulate`] builds the
//! timeline from scratch; [`delta_simulate`] repairs it after
//! [`update_task_graph`](crate::taskgraph::update_task_graph).
//!
//! Both share one event loop, so a repaired timeline is bit-identical to a
//! from-scratch one.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::taskgraph::{lane_key, ChangeSet, TaskGraph, TaskId, TaskState};

pub mod oracle;

pub use oracle::oracle_simulate;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationResult {
    /// Latest end time over all tasks.
    pub makespan: f64,
    pub total_comm_bytes: u64,
}

fn check_exe_times(g: &TaskGraph) -> Result<()> {
    for (_, t) in g.tasks() {
        if !(t.exe_time > 0.0 && t.exe_time.is_finite()) {
            return Err(Error::BadExeTime {
                task: t.id,
                time: t.exe_time,
            });
        }
    }
    Ok(())
}

/// Simulates the whole graph from scratch.
pub fn full_simulate(g: &mut TaskGraph) -> Result<SimulationResult> {
    check_exe_times(g)?;
    let n = g.tasks.len();
    let mut waiting = vec![0usize; n];
    let mut heap = EventQueue::new();
    for lane in &mut g.lanes {
        lane.clear();
    }
    for s in 0..n {
        g.placed[s] = None;
        let Some(t) = g.tasks[s].as_ref() else {
            continue;
        };
        waiting[s] = t.inputs.len();
        let e = &mut g.timeline[s];
        e.ready = 0.0;
        e.state = TaskState::NotReady;
        if t.inputs.is_empty() {
            e.state = TaskState::Ready;
            heap.push(Reverse((0.0f64.to_bits(), t.id, s as u32)));
        }
    }
    let lane_end = vec![0.0f64; g.num_lanes];
    let todo = g.num_tasks();
    run_events(g, &mut waiting, heap, lane_end, todo)
}

type EventQueue = BinaryHeap<Reverse<(u64, TaskId, u32)>>;

/// Dequeues tasks in (ready time, id) order, appending each to its lane.
/// `todo` is how many tasks the queue must eventually place.
fn run_events(
    g: &mut TaskGraph,
    waiting: &mut [usize],
    mut heap: EventQueue,
    mut lane_end: Vec<f64>,
    todo: usize,
) -> Result<SimulationResult> {
    let mut done = 0usize;
    while let Some(Reverse((_, id, s))) = heap.pop() {
        let s = s as usize;
        let t = g.tasks[s].as_ref().expect("queued task is live");
        let e = &mut g.timeline[s];
        e.start = e.ready.max(lane_end[t.lane]);
        e.end = e.start + t.exe_time;
        e.state = TaskState::Complete;
        let end = e.end;
        let ready = e.ready;
        lane_end[t.lane] = end;
        g.lanes[t.lane].push((lane_key(ready, id), s as u32));
        g.placed[s] = Some(ready);
        done += 1;
        for &o in &t.outputs {
            let o = o as usize;
            let oe = &mut g.timeline[o];
            oe.ready = oe.ready.max(end);
            waiting[o] -= 1;
            if waiting[o] == 0 {
                oe.state = TaskState::Ready;
                let oid = g.tasks[o].as_ref().expect("live").id;
                heap.push(Reverse((oe.ready.to_bits(), oid, o as u32)));
            }
        }
    }
    if done < todo {
        g.simulated = false;
        return Err(stuck_error(g, waiting));
    }
    g.simulated = true;
    g.pending.clear();
    Ok(SimulationResult {
        makespan: g.makespan(),
        total_comm_bytes: g.total_comm_bytes(),
    })
}

/// Names a task on a cycle among the never-ready tasks, or the first of them.
fn stuck_error(g: &TaskGraph, waiting: &[usize]) -> Error {
    let stuck: Vec<usize> = (0..waiting.len())
        .filter(|&s| g.tasks[s].is_some() && waiting[s] > 0)
        .collect();
    // Walk backwards through unfinished inputs; in a finite graph this revisits a task.
    if let Some(&start) = stuck.first() {
        let mut seen = vec![false; waiting.len()];
        let mut cur = start;
        while !seen[cur] {
            seen[cur] = true;
            let t = g.tasks[cur].as_ref().expect("live");
            match t.inputs.iter().find(|&&p| waiting[p as usize] > 0) {
                Some(&p) => cur = p as usize,
                None => {
                    return Error::Unreachable(g.tasks[start].as_ref().expect("live").id);
                }
            }
        }
        return Error::Cycle(g.tasks[cur].as_ref().expect("live").id);
    }
    Error::Unreachable(TaskId::custom(0))
}

/// Repairs the timeline after an update, touching only affected tasks.
///
/// Finds the earliest ready time `t0` at which anything changed can matter:
/// the old ready time of every changed or displaced task, and for a changed
/// task whose inputs are all unchanged, the latest end of those inputs.
/// Every task that was ready before `t0` keeps its entry, since its inputs
/// and its lane predecessors are all unaffected. The rest is re-queued and
/// run through the same event loop as [`full_simulate`], so the result is
/// identical to a from-scratch run.
///
/// `changed` is the set returned by the update; tasks whose lane predecessor
/// was removed are tracked by the graph itself.
pub fn delta_simulate(g: &mut TaskGraph, changed: &ChangeSet) -> Result<SimulationResult> {
    if !g.simulated {
        return Err(Error::NotSimulated);
    }
    let n = g.tasks.len();
    // Tasks needing a placement: the update's set, plus any left unplaced by
    // a failed update. Other displaced tasks only bound `t0` below.
    let seeds: Vec<usize> = changed
        .tasks
        .iter()
        .map(|r| r.0 as usize)
        .chain(
            g.pending
                .iter()
                .map(|&s| s as usize)
                .filter(|&s| g.placed[s].is_none()),
        )
        .filter(|&s| g.tasks[s].is_some())
        .collect();
    let mut dirty = vec![false; n];
    for &s in &seeds {
        let t = g.tasks[s].as_ref().expect("live");
        if !(t.exe_time > 0.0 && t.exe_time.is_finite()) {
            return Err(Error::BadExeTime {
                task: t.id,
                time: t.exe_time,
            });
        }
        dirty[s] = true;
    }

    let mut t0 = f64::INFINITY;
    for &s in &seeds {
        let t = g.tasks[s].as_ref().expect("live");
        if let Some(old) = g.placed[s] {
            t0 = t0.min(old);
        }
        // with a changed input, that input's own bound already covers this task
        if t.inputs.iter().all(|&p| !dirty[p as usize]) {
            let mut ready = 0.0f64;
            for &p in &t.inputs {
                match g.placed[p as usize] {
                    Some(_) => ready = ready.max(g.timeline[p as usize].end),
                    None => {
                        ready = 0.0;
                        break;
                    }
                }
            }
            t0 = t0.min(ready);
        }
    }
    for &s in &g.pending {
        if let Some(old) = g.placed[s as usize] {
            t0 = t0.min(old);
        }
    }
    if t0 == f64::INFINITY {
        g.pending.clear();
        return Ok(SimulationResult {
            makespan: g.makespan(),
            total_comm_bytes: g.total_comm_bytes(),
        });
    }

    for s in 0..n {
        if g.tasks[s].is_some() {
            match g.placed[s] {
                Some(ready) if ready < t0 => {}
                _ => dirty[s] = true,
            }
        }
    }
    let mut lane_end = vec![0.0f64; g.num_lanes];
    for (lane, order) in g.lanes.iter_mut().enumerate() {
        // keys sort by ready time first, so kept tasks form a prefix
        let keep = order.partition_point(|&(_, s)| !dirty[s as usize]);
        order.truncate(keep);
        if let Some(&(_, last)) = order.last() {
            lane_end[lane] = g.timeline[last as usize].end;
        }
    }

    let mut waiting = vec![0usize; n];
    let mut heap = EventQueue::new();
    let mut todo = 0;
    for s in 0..n {
        if !dirty[s] {
            continue;
        }
        let Some(t) = g.tasks[s].as_ref() else {
            continue;
        };
        todo += 1;
        g.placed[s] = None;
        let mut ready = 0.0f64;
        for &p in &t.inputs {
            if dirty[p as usize] {
                waiting[s] += 1;
            } else {
                ready = ready.max(g.timeline[p as usize].end);
            }
        }
        let e = &mut g.timeline[s];
        e.ready = ready;
        if waiting[s] == 0 {
            e.state = TaskState::Ready;
            heap.push(Reverse((ready.to_bits(), t.id, s as u32)));
        } else {
            e.state = TaskState::NotReady;
        }
    }
    run_events(g, &mut waiting, heap, lane_end, todo)
}

/// Longest exe-time-weighted path, ignoring lane contention.
pub fn critical_path(g: &TaskGraph) -> Result<f64> {
    let n = g.tasks.len();
    let mut indeg = vec![0usize; n];
    let mut finish = vec![0.0f64; n];
    let mut stack = Vec::new();
    for (r, t) in g.tasks() {
        indeg[r.index()] = t.inputs.len();
        if t.inputs.is_empty() {
            stack.push(r.index());
        }
    }
    let mut seen = 0;
    let mut best = 0.0f64;
    while let Some(s) = stack.pop() {
        seen += 1;
        let t = g.tasks[s].as_ref().expect("live");
        let f = finish[s] + t.exe_time;
        best = best.max(f);
        for &o in &t.outputs {
            let o = o as usize;
            finish[o] = finish[o].max(f);
            indeg[o] -= 1;
            if indeg[o] == 0 {
                stack.push(o);
            }
        }
    }
    if seen < g.num_tasks() {
        let stuck = g
            .tasks()
            .find(|(r, _)| indeg[r.index()] > 0)
            .map(|(_, t)| t.id)
            .expect("some task is stuck");
        return Err(Error::Cycle(stuck));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgraph::TaskGraph;

    #[test]
    fn serial_chain() {
        let mut g = TaskGraph::from_tasks(1, &[(0, 1.0), (0, 2.0), (0, 3.0)], &[(0, 1), (1, 2)]);
        let r = full_simulate(&mut g).unwrap();
        assert_eq!(r.makespan, 6.0);
        let starts: Vec<f64> = g.schedule().iter().map(|row| row.2).collect();
        assert_eq!(starts, vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn independent_pair() {
        let mut g = TaskGraph::from_tasks(2, &[(0, 5.0), (1, 5.0)], &[]);
        assert_eq!(full_simulate(&mut g).unwrap().makespan, 5.0);
    }

    #[test]
    fn diamond_with_transfer() {
        // a=0 b=1 c=2 d=3 on lanes 0/1, transfer 4 on lane 2 between b and d
        let mut g = TaskGraph::from_tasks(
            3,
            &[(0, 1.0), (1, 2.0), (0, 2.0), (0, 1.0), (2, 1.0)],
            &[(0, 1), (0, 2), (1, 4), (4, 3), (2, 3)],
        );
        assert_eq!(full_simulate(&mut g).unwrap().makespan, 5.0);
        assert_eq!(oracle_simulate(&g).unwrap(), 5.0);
        assert_eq!(critical_path(&g).unwrap(), 5.0);
    }

    #[test]
    fn cycle_is_reported() {
        let mut g = TaskGraph::from_tasks(1, &[(0, 1.0), (0, 1.0), (0, 1.0)], &[(0, 1), (1, 2), (2, 1)]);
        assert!(matches!(full_simulate(&mut g), Err(Error::Cycle(_))));
        assert!(matches!(oracle_simulate(&g), Err(Error::Cycle(_))));
    }

    #[test]
    fn zero_exe_time_rejected() {
        let mut g = TaskGraph::from_tasks(1, &[(0, 0.0)], &[]);
        assert!(matches!(full_simulate(&mut g), Err(Error::BadExeTime { .. })));
    }

    #[test]
    fn delta_requires_prior_simulation() {
        let mut g = TaskGraph::from_tasks(1, &[(0, 1.0)], &[]);
        assert!(matches!(
            delta_simulate(&mut g, &ChangeSet::default()),
            Err(Error::NotSimulated)
        ));
        let r = full_simulate(&mut g).unwrap();
        assert_eq!(delta_simulate(&mut g, &ChangeSet::default()).unwrap(), r);
    }
}
