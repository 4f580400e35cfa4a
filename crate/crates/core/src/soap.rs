//! Parallelization configurations and the partition geometry of tasks.
//!
//! A configuration splits an operation's output tensor into an equal-sized
//! grid of blocks; block `k` of the row-major traversal (last output
//! dimension fastest) is the output region of task `k`.

use std::collections::BTreeMap;
use std::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dim, OperatorKind, Operation, Problem, TensorShape};

/// Degree of parallelism per dimension. Dimensions absent from the map have degree 1.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Degrees(BTreeMap<Dim, u32>);

impl Degrees {
    pub fn new(entries: impl IntoIterator<Item = (Dim, u32)>) -> Self {
        Degrees(entries.into_iter().filter(|&(_, n)| n != 1).collect())
    }

    pub fn one() -> Self {
        Degrees::default()
    }

    pub fn get(&self, dim: Dim) -> u32 {
        self.0.get(&dim).copied().unwrap_or(1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Dim, u32)> + '_ {
        self.0.iter().map(|(&d, &n)| (d, n))
    }

    /// Number of tasks, the product of all degrees.
    pub fn size(&self) -> usize {
        self.0.values().map(|&n| n as usize).product()
    }
}

impl fmt::Display for Degrees {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("{}");
        }
        f.write_str("{")?;
        for (i, (d, n)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}:{n}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for Degrees {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Degrees {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<Dim, u32>::deserialize(d)?;
        if map.values().any(|&n| n == 0) {
            return Err(serde::de::Error::custom("degrees must be positive"));
        }
        Ok(Degrees::new(map))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParallelizationConfig {
    pub degrees: Degrees,
    /// Device index of each task, indexed by task number.
    pub assignment: Vec<usize>,
}

pub fn config_size(c: &ParallelizationConfig) -> usize {
    c.degrees.size()
}

impl ParallelizationConfig {
    pub fn single(device: usize) -> Self {
        ParallelizationConfig {
            degrees: Degrees::one(),
            assignment: vec![device],
        }
    }

    pub fn size(&self) -> usize {
        self.degrees.size()
    }

    /// Checks the configuration against its operation and the device count.
    pub fn check(&self, op: &Operation, num_devices: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidConfig {
            op: op.id.clone(),
            reason,
        };
        let dims = op.parallelizable_dims();
        for (d, n) in self.degrees.iter() {
            if !dims.iter().any(|&(pd, _)| pd == d) {
                return Err(bad(format!("dimension `{d}` is not parallelizable")));
            }
            let size = op.output.size(d).unwrap_or(0);
            if n == 0 || size % n as u64 != 0 {
                return Err(bad(format!("degree {n} does not divide `{d}` extent {size}")));
            }
        }
        if self.assignment.len() != self.size() {
            return Err(bad(format!(
                "assignment has {} devices for {} tasks",
                self.assignment.len(),
                self.size()
            )));
        }
        if let Some(&d) = self.assignment.iter().find(|&&d| d >= num_devices) {
            return Err(bad(format!("device index {d} out of range")));
        }
        Ok(())
    }
}

/// One configuration per operation, indexed like the operator graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParallelizationStrategy {
    pub configs: Vec<ParallelizationConfig>,
}

impl ParallelizationStrategy {
    pub fn check(&self, problem: &Problem) -> Result<()> {
        if self.configs.len() != problem.num_ops() {
            return Err(Error::InvalidConfig {
                op: "<strategy>".into(),
                reason: format!(
                    "{} configurations for {} operations",
                    self.configs.len(),
                    problem.num_ops()
                ),
            });
        }
        for (i, c) in self.configs.iter().enumerate() {
            c.check(problem.op(i), problem.num_devices())?;
        }
        Ok(())
    }

    /// Number of operations whose configuration differs.
    pub fn distance(&self, other: &ParallelizationStrategy) -> usize {
        self.configs
            .iter()
            .zip(&other.configs)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Half-open interval of element indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Span {
    pub lo: u64,
    pub hi: u64,
}

impl Span {
    pub fn new(lo: u64, hi: u64) -> Self {
        Span { lo, hi }
    }

    pub fn len(self) -> u64 {
        self.hi.saturating_sub(self.lo)
    }

    pub fn is_empty(self) -> bool {
        self.hi <= self.lo
    }

    pub fn intersect(self, other: Span) -> Span {
        Span::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.lo, self.hi)
    }
}

/// A box of a tensor: one span per dimension of the tensor's shape, in shape order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TensorRegion {
    pub spans: Vec<Span>,
}

impl TensorRegion {
    pub fn full(sizes: impl IntoIterator<Item = u64>) -> Self {
        TensorRegion {
            spans: sizes.into_iter().map(|s| Span::new(0, s)).collect(),
        }
    }

    pub fn volume(&self) -> u64 {
        self.spans.iter().map(|s| s.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.iter().any(|s| s.is_empty())
    }

    /// Per-dimension intersection; `None` when any dimension is empty.
    pub fn intersect(&self, other: &TensorRegion) -> Option<TensorRegion> {
        debug_assert_eq!(self.spans.len(), other.spans.len());
        let spans: Vec<Span> = self
            .spans
            .iter()
            .zip(&other.spans)
            .map(|(a, b)| a.intersect(*b))
            .collect();
        spans.iter().all(|s| !s.is_empty()).then_some(TensorRegion { spans })
    }

    pub fn within(&self, shape: &TensorShape) -> bool {
        self.spans.len() == shape.rank()
            && self
                .spans
                .iter()
                .zip(shape.sizes())
                .all(|(s, n)| s.lo < s.hi && s.hi <= n)
    }

    pub fn lengths(&self) -> Vec<u64> {
        self.spans.iter().map(|s| s.len()).collect()
    }
}

impl fmt::Display for TensorRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.spans.iter().enumerate() {
            if i > 0 {
                f.write_str("x")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

pub fn region_volume_bytes(r: &TensorRegion, element_size: u64) -> u64 {
    if r.is_empty() {
        0
    } else {
        r.volume() * element_size
    }
}

/// Output region of task `k` under configuration `degrees`.
pub fn output_region(op: &Operation, degrees: &Degrees, k: usize) -> Result<TensorRegion> {
    let size = degrees.size();
    if k >= size {
        return Err(Error::TaskIndexOutOfRange { index: k, size });
    }
    let mut rest = k;
    let mut spans = vec![Span::new(0, 0); op.output.rank()];
    for (i, &(d, n)) in op.output.dims.iter().enumerate().rev() {
        let deg = degrees.get(d) as usize;
        let idx = (rest % deg) as u64;
        rest /= deg;
        let block = n / deg as u64;
        spans[i] = Span::new(idx * block, (idx + 1) * block);
    }
    Ok(TensorRegion { spans })
}

/// Which operand a required input region belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputSlot {
    Input(usize),
    Parameter,
}

/// Input extent read by a sliding window producing `out`, clamped to `[0, input)`.
fn receptive_span(
    out: Span,
    input: u64,
    out_len: u64,
    kernel: u64,
    stride: u64,
    pad: crate::model::Padding,
) -> Span {
    let lead = pad.leading(input, out_len, kernel, stride) as i128;
    let lo = out.lo as i128 * stride as i128 - lead;
    let hi = (out.hi as i128 - 1) * stride as i128 - lead + kernel as i128;
    Span::new(lo.clamp(0, input as i128) as u64, hi.clamp(0, input as i128) as u64)
}

/// Minimal input and parameter regions needed to compute the output region `out`.
///
/// Input slots whose required region is empty (a `Concat` operand wholly outside
/// `out`) are omitted. A parameter region is included iff `param_bytes > 0`.
pub fn input_regions(op: &Operation, out: &TensorRegion) -> Result<Vec<(InputSlot, TensorRegion)>> {
    if !out.within(&op.output) {
        return Err(Error::RegionOutOfBounds {
            op: op.id.clone(),
            region: out.to_string(),
        });
    }
    let out_span = |d: Dim| op.output.position(d).map(|i| out.spans[i]);
    let full = |n: u64| Span::new(0, n);
    // Maps an output region onto an input shape: shared dimensions copy the
    // output span unless `f` overrides them, absent ones are taken whole.
    let project = |shape: &TensorShape, f: &dyn Fn(Dim, u64) -> Option<Span>| TensorRegion {
        spans: shape
            .dims
            .iter()
            .map(|&(d, n)| f(d, n).or_else(|| out_span(d)).unwrap_or(full(n)))
            .collect(),
    };

    let mut regions = Vec::new();
    let cout_span = out_span(Dim::Channel);
    match &op.kind {
        OperatorKind::MatMul { .. } => {
            let x = &op.inputs[0];
            regions.push((
                InputSlot::Input(0),
                project(x, &|d, n| (d == Dim::Channel).then(|| full(n))),
            ));
        }
        OperatorKind::Conv1D {
            kernel,
            stride,
            padding,
            ..
        }
        | OperatorKind::Pool1D {
            kernel,
            stride,
            padding,
        } => {
            let x = &op.inputs[0];
            let is_conv = matches!(op.kind, OperatorKind::Conv1D { .. });
            let out_len = op.output.size(Dim::Length).unwrap_or(1);
            regions.push((
                InputSlot::Input(0),
                project(x, &|d, n| match d {
                    Dim::Length => Some(receptive_span(
                        out_span(d).unwrap(),
                        n,
                        out_len,
                        *kernel,
                        *stride,
                        *padding,
                    )),
                    Dim::Channel if is_conv => Some(full(n)),
                    _ => None,
                }),
            ));
        }
        OperatorKind::Conv2D {
            kernel,
            stride,
            padding,
            ..
        }
        | OperatorKind::Pool2D {
            kernel,
            stride,
            padding,
        } => {
            let x = &op.inputs[0];
            let is_conv = matches!(op.kind, OperatorKind::Conv2D { .. });
            let oh = op.output.size(Dim::Height).unwrap_or(1);
            let ow = op.output.size(Dim::Width).unwrap_or(1);
            regions.push((
                InputSlot::Input(0),
                project(x, &|d, n| match d {
                    Dim::Height => Some(receptive_span(
                        out_span(d).unwrap(),
                        n,
                        oh,
                        kernel[0],
                        stride[0],
                        *padding,
                    )),
                    Dim::Width => Some(receptive_span(
                        out_span(d).unwrap(),
                        n,
                        ow,
                        kernel[1],
                        stride[1],
                        *padding,
                    )),
                    Dim::Channel if is_conv => Some(full(n)),
                    _ => None,
                }),
            ));
        }
        OperatorKind::Embedding { .. } => {
            regions.push((InputSlot::Input(0), project(&op.inputs[0], &|_, _| None)));
        }
        OperatorKind::ElementWise => {
            for (slot, x) in op.inputs.iter().enumerate() {
                regions.push((InputSlot::Input(slot), project(x, &|_, _| None)));
            }
        }
        OperatorKind::Concat { axis } => {
            let want = out_span(*axis).unwrap();
            let mut offset = 0;
            for (slot, x) in op.inputs.iter().enumerate() {
                let n = x.size(*axis).unwrap_or(0);
                let local = Span::new(
                    want.lo.max(offset).min(offset + n) - offset,
                    want.hi.min(offset + n).max(offset) - offset,
                );
                offset += n;
                if local.is_empty() {
                    continue;
                }
                regions.push((
                    InputSlot::Input(slot),
                    project(x, &|d, _| (d == *axis).then_some(local)),
                ));
            }
        }
    }

    if op.param_bytes > 0 {
        let shape = op.param_shape();
        let mut spans: Vec<Span> = shape.iter().map(|&n| full(n)).collect();
        match (&op.kind, cout_span) {
            (
                OperatorKind::MatMul { .. }
                | OperatorKind::Conv1D { .. }
                | OperatorKind::Conv2D { .. },
                Some(c),
            ) => spans[0] = c,
            (OperatorKind::Embedding { .. }, Some(c)) => spans[1] = c,
            _ => {}
        }
        regions.push((InputSlot::Parameter, TensorRegion { spans }));
    }
    Ok(regions)
}

/// Bytes of the parameter slice covered by `region` (a region of `op.param_shape()`).
pub fn param_slice_bytes(op: &Operation, region: &TensorRegion) -> u64 {
    let total: u128 = op.param_shape().iter().map(|&n| n as u128).product();
    (op.param_bytes as u128 * region.volume() as u128 / total.max(1)) as u64
}

fn divisors_up_to(n: u64, cap: u64) -> Vec<u32> {
    (1..=cap.min(n)).filter(|d| n % d == 0).map(|d| d as u32).collect()
}

/// Every degree map whose degrees divide their dimensions and whose product is at
/// most `min(max_degree, num_devices)`. Assignments are left to the caller.
pub fn enumerate_configs(op: &Operation, num_devices: usize, max_degree: usize) -> Vec<Degrees> {
    let cap = max_degree.min(num_devices).max(1) as u64;
    let dims: Vec<(Dim, Vec<u32>)> = op
        .parallelizable_dims()
        .into_iter()
        .map(|(d, _)| (d, divisors_up_to(op.output.size(d).unwrap_or(1), cap)))
        .collect();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(dims.len());
    fn rec(
        dims: &[(Dim, Vec<u32>)],
        i: usize,
        product: u64,
        cap: u64,
        current: &mut Vec<(Dim, u32)>,
        out: &mut Vec<Degrees>,
    ) {
        if i == dims.len() {
            out.push(Degrees::new(current.iter().copied()));
            return;
        }
        for &n in &dims[i].1 {
            if product * n as u64 > cap {
                break;
            }
            current.push((dims[i].0, n));
            rec(dims, i + 1, product * n as u64, cap, current, out);
            current.pop();
        }
    }
    rec(&dims, 0, 1, cap, &mut current, &mut out);
    out
}

/// A uniformly random configuration: a degree map drawn from `choices` and an
/// independent uniform device for every task.
pub fn random_config<R: Rng + ?Sized>(
    choices: &[Degrees],
    num_devices: usize,
    rng: &mut R,
) -> ParallelizationConfig {
    let degrees = choices[rng.gen_range(0..choices.len())].clone();
    let assignment = (0..degrees.size())
        .map(|_| rng.gen_range(0..num_devices))
        .collect();
    ParallelizationConfig {
        degrees,
        assignment,
    }
}

/// Draws (degree map, assignment) pairs uniformly, so that a map with `n` tasks
/// is picked in proportion to `devices^n`. Proposals use this to stay symmetric.
#[derive(Clone, Debug)]
pub struct ConfigSampler {
    choices: Vec<Degrees>,
    index: WeightedIndex<f64>,
    devices: usize,
}

impl ConfigSampler {
    pub fn new(op: &Operation, num_devices: usize, max_degree: usize) -> Self {
        let choices = enumerate_configs(op, num_devices, max_degree);
        let largest = choices.iter().map(Degrees::size).max().unwrap_or(1) as f64;
        let ln = (num_devices as f64).ln();
        // relative to the largest map so that 64^64 does not overflow
        let weights = choices.iter().map(|d| ((d.size() as f64 - largest) * ln).exp());
        ConfigSampler {
            index: WeightedIndex::new(weights).expect("the largest map has weight 1"),
            choices,
            devices: num_devices,
        }
    }

    pub fn choices(&self) -> &[Degrees] {
        &self.choices
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ParallelizationConfig {
        let degrees = self.choices[self.index.sample(rng)].clone();
        let assignment = (0..degrees.size())
            .map(|_| rng.gen_range(0..self.devices))
            .collect();
        ParallelizationConfig {
            degrees,
            assignment,
        }
    }
}

/// Replicates every operation over the largest replica count that divides every
/// sample extent and does not exceed the device count; task `k` runs on device `k`.
pub fn data_parallel_strategy(problem: &Problem) -> ParallelizationStrategy {
    let n = problem.num_devices() as u64;
    let replicas = (1..=n)
        .rev()
        .find(|&r| {
            problem
                .graph()
                .ops
                .iter()
                .all(|o| o.output.size(Dim::Sample).unwrap_or(1) % r == 0)
        })
        .unwrap_or(1) as u32;
    ParallelizationStrategy {
        configs: (0..problem.num_ops())
            .map(|_| ParallelizationConfig {
                degrees: Degrees::new([(Dim::Sample, replicas)]),
                assignment: (0..replicas as usize).collect(),
            })
            .collect(),
    }
}

/// Every operation on device 0 with no partitioning.
pub fn single_device_strategy(problem: &Problem) -> ParallelizationStrategy {
    ParallelizationStrategy {
        configs: (0..problem.num_ops())
            .map(|_| ParallelizationConfig::single(0))
            .collect(),
    }
}

pub fn random_strategy(problem: &Problem, max_degree: usize, seed: u64) -> ParallelizationStrategy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_strategy_with(problem, max_degree, &mut rng)
}

pub fn random_strategy_with<R: Rng + ?Sized>(
    problem: &Problem,
    max_degree: usize,
    rng: &mut R,
) -> ParallelizationStrategy {
    let n = problem.num_devices();
    ParallelizationStrategy {
        configs: (0..problem.num_ops())
            .map(|i| {
                let choices = enumerate_configs(problem.op(i), n, max_degree);
                random_config(&choices, n, rng)
            })
            .collect(),
    }
}
