//! Event-driven reference simulator used to cross-check [`full_simulate`](super::full_simulate).
//!
//! Keeps a global clock and a FIFO queue per lane. Completions at the same
//! instant are processed together; tasks they make ready join their lane
//! queues in id order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::taskgraph::{TaskGraph, TaskRef};

pub fn oracle_simulate(g: &TaskGraph) -> Result<f64> {
    let refs: Vec<TaskRef> = g.tasks().map(|(r, _)| r).collect();
    let slot_of = |r: TaskRef| refs.binary_search(&r).expect("live task");
    let n = refs.len();
    let mut missing: Vec<usize> = Vec::with_capacity(n);
    for &r in &refs {
        let t = g.task(r);
        if !(t.exe_time > 0.0 && t.exe_time.is_finite()) {
            return Err(Error::BadExeTime {
                task: t.id,
                time: t.exe_time,
            });
        }
        missing.push(g.inputs(r).count());
    }

    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); g.num_lanes()];
    let mut busy = vec![false; g.num_lanes()];
    // completion time (as ordered bits) -> tasks finishing then
    let mut events: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut finished = 0usize;
    let mut clock = 0.0f64;

    let mut arrivals: Vec<usize> = (0..n).filter(|&i| missing[i] == 0).collect();
    loop {
        arrivals.sort_by_key(|&i| g.task(refs[i]).id);
        for &i in &arrivals {
            queues[g.task(refs[i]).lane].push_back(i);
        }
        arrivals.clear();
        for lane in 0..queues.len() {
            if busy[lane] {
                continue;
            }
            if let Some(i) = queues[lane].pop_front() {
                busy[lane] = true;
                let end = clock + g.task(refs[i]).exe_time;
                events.entry(end.to_bits()).or_default().push(i);
            }
        }
        let Some((bits, done)) = events.pop_first() else {
            break;
        };
        clock = f64::from_bits(bits);
        let mut done = done;
        done.sort_by_key(|&i| Reverse(g.task(refs[i]).id));
        for i in done {
            finished += 1;
            busy[g.task(refs[i]).lane] = false;
            for o in g.outputs(refs[i]) {
                let j = slot_of(o);
                missing[j] -= 1;
                if missing[j] == 0 {
                    arrivals.push(j);
                }
            }
        }
    }

    if finished < n {
        // every unfinished task waits on another unfinished one: follow that chain
        let mut seen = vec![false; n];
        let mut cur = (0..n).find(|&i| missing[i] > 0).expect("unfinished task");
        while !seen[cur] {
            seen[cur] = true;
            cur = g
                .inputs(refs[cur])
                .map(slot_of)
                .find(|&p| missing[p] > 0)
                .unwrap_or(cur);
        }
        return Err(Error::Cycle(g.task(refs[cur]).id));
    }
    Ok(clock)
}
