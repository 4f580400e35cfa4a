//! Operator graphs, device topologies and the per-kind partitioning metadata.
//!
//! [`OperatorGraph`] and [`DeviceTopology`] are plain data that may be invalid;
//! [`validate_graph`] and [`validate_topology`] report every violation. A
//! [`Problem`] is the validated, indexed pair that the rest of the crate works on.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named tensor dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    Sample,
    Channel,
    Length,
    Height,
    Width,
}

impl Dim {
    pub const ALL: [Dim; 5] = [Dim::Sample, Dim::Channel, Dim::Length, Dim::Height, Dim::Width];

    pub fn name(self) -> &'static str {
        match self {
            Dim::Sample => "sample",
            Dim::Channel => "channel",
            Dim::Length => "length",
            Dim::Height => "height",
            Dim::Width => "width",
        }
    }

    pub fn parse(s: &str) -> Option<Dim> {
        Dim::ALL.into_iter().find(|d| d.name() == s)
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub dims: Vec<(Dim, u64)>,
    pub element_size: u64,
}

impl TensorShape {
    pub fn new(dims: impl IntoIterator<Item = (Dim, u64)>, element_size: u64) -> Self {
        TensorShape {
            dims: dims.into_iter().collect(),
            element_size,
        }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn position(&self, dim: Dim) -> Option<usize> {
        self.dims.iter().position(|&(d, _)| d == dim)
    }

    pub fn size(&self, dim: Dim) -> Option<u64> {
        self.dims.iter().find(|&&(d, _)| d == dim).map(|&(_, s)| s)
    }

    pub fn sizes(&self) -> impl Iterator<Item = u64> + '_ {
        self.dims.iter().map(|&(_, s)| s)
    }

    pub fn volume(&self) -> u64 {
        self.sizes().product()
    }

    pub fn bytes(&self) -> u64 {
        self.volume() * self.element_size
    }

    /// Same shape with one dimension resized (or appended when absent).
    pub fn with(&self, dim: Dim, size: u64) -> TensorShape {
        let mut out = self.clone();
        match out.position(dim) {
            Some(i) => out.dims[i].1 = size,
            None => out.dims.push((dim, size)),
        }
        out
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for &(d, s) in &self.dims {
            if !seen.insert(d) {
                out.push(format!("duplicate dimension `{d}`"));
            }
            if s == 0 {
                out.push(format!("dimension `{d}` has size 0"));
            }
        }
        if !seen.contains(&Dim::Sample) {
            out.push("shape has no sample dimension".into());
        }
        if self.element_size == 0 {
            out.push("element_size is 0".into());
        }
        out
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, (d, s)) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}={s}")?;
        }
        write!(f, ")x{}B", self.element_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    /// Output extent of a sliding window over `input` elements.
    pub fn output_len(self, input: u64, kernel: u64, stride: u64) -> Option<u64> {
        match self {
            Padding::Same => Some(input.div_ceil(stride)),
            Padding::Valid => (input >= kernel).then(|| (input - kernel) / stride + 1),
        }
    }

    /// Elements of padding before the first input element.
    pub fn leading(self, input: u64, output: u64, kernel: u64, stride: u64) -> u64 {
        match self {
            Padding::Same => ((output - 1) * stride + kernel).saturating_sub(input) / 2,
            Padding::Valid => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum OperatorKind {
    MatMul {
        in_channels: u64,
    },
    Conv1D {
        in_channels: u64,
        kernel: u64,
        stride: u64,
        padding: Padding,
    },
    Conv2D {
        in_channels: u64,
        kernel: [u64; 2],
        stride: [u64; 2],
        padding: Padding,
    },
    Pool1D {
        kernel: u64,
        stride: u64,
        padding: Padding,
    },
    Pool2D {
        kernel: [u64; 2],
        stride: [u64; 2],
        padding: Padding,
    },
    Embedding {
        vocab: u64,
    },
    ElementWise,
    Concat {
        axis: Dim,
    },
}

impl OperatorKind {
    pub fn tag(&self) -> &'static str {
        match self {
            OperatorKind::MatMul { .. } => "MatMul",
            OperatorKind::Conv1D { .. } => "Conv1D",
            OperatorKind::Conv2D { .. } => "Conv2D",
            OperatorKind::Pool1D { .. } => "Pool1D",
            OperatorKind::Pool2D { .. } => "Pool2D",
            OperatorKind::Embedding { .. } => "Embedding",
            OperatorKind::ElementWise => "ElementWise",
            OperatorKind::Concat { .. } => "Concat",
        }
    }

    /// Canonical `key=value,...` rendering of the hyperparameters; `-` when there are none.
    pub fn digest(&self) -> String {
        let pad = |p: &Padding| match p {
            Padding::Same => "same",
            Padding::Valid => "valid",
        };
        match self {
            OperatorKind::MatMul { in_channels } => format!("in={in_channels}"),
            OperatorKind::Conv1D {
                in_channels,
                kernel,
                stride,
                padding,
            } => format!("in={in_channels},k={kernel},s={stride},pad={}", pad(padding)),
            OperatorKind::Conv2D {
                in_channels,
                kernel,
                stride,
                padding,
            } => format!(
                "in={in_channels},k={}x{},s={}x{},pad={}",
                kernel[0],
                kernel[1],
                stride[0],
                stride[1],
                pad(padding)
            ),
            OperatorKind::Pool1D {
                kernel,
                stride,
                padding,
            } => format!("k={kernel},s={stride},pad={}", pad(padding)),
            OperatorKind::Pool2D {
                kernel,
                stride,
                padding,
            } => format!(
                "k={}x{},s={}x{},pad={}",
                kernel[0],
                kernel[1],
                stride[0],
                stride[1],
                pad(padding)
            ),
            OperatorKind::Embedding { vocab } => format!("vocab={vocab}"),
            OperatorKind::ElementWise => "-".into(),
            OperatorKind::Concat { axis } => format!("axis={axis}"),
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut positive = |name: &str, v: u64| {
            if v == 0 {
                out.push(format!("{name} must be at least 1"));
            }
        };
        match self {
            OperatorKind::MatMul { in_channels } => positive("in_channels", *in_channels),
            OperatorKind::Conv1D {
                in_channels,
                kernel,
                stride,
                ..
            } => {
                positive("in_channels", *in_channels);
                positive("kernel", *kernel);
                positive("stride", *stride);
            }
            OperatorKind::Conv2D {
                in_channels,
                kernel,
                stride,
                ..
            } => {
                positive("in_channels", *in_channels);
                kernel.iter().for_each(|&k| positive("kernel", k));
                stride.iter().for_each(|&s| positive("stride", s));
            }
            OperatorKind::Pool1D { kernel, stride, .. } => {
                positive("kernel", *kernel);
                positive("stride", *stride);
            }
            OperatorKind::Pool2D { kernel, stride, .. } => {
                kernel.iter().for_each(|&k| positive("kernel", k));
                stride.iter().for_each(|&s| positive("stride", s));
            }
            OperatorKind::Embedding { vocab } => positive("vocab", *vocab),
            OperatorKind::ElementWise | OperatorKind::Concat { .. } => {}
        }
        out
    }
}

/// How partitioning a dimension affects the operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimClass {
    Sample,
    Attribute,
    Parameter,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub id: String,
    pub kind: OperatorKind,
    /// Shapes of the input slots, in slot order. Slots of an operation with no
    /// incoming edges are resident external inputs.
    pub inputs: Vec<TensorShape>,
    pub output: TensorShape,
    pub param_bytes: u64,
}

impl Operation {
    /// Dimensions of the output tensor that may be partitioned, in output order.
    pub fn parallelizable_dims(&self) -> Vec<(Dim, DimClass)> {
        use DimClass::*;
        let class = |d: Dim| -> Option<DimClass> {
            match (&self.kind, d) {
                (_, Dim::Sample) => Some(Sample),
                (OperatorKind::MatMul { .. }, Dim::Channel) => Some(Parameter),
                (OperatorKind::MatMul { .. }, _) => None,
                (OperatorKind::Conv1D { .. }, Dim::Length) => Some(Attribute),
                (OperatorKind::Conv1D { .. }, Dim::Channel) => Some(Parameter),
                (OperatorKind::Conv1D { .. }, _) => None,
                (OperatorKind::Conv2D { .. }, Dim::Height | Dim::Width) => Some(Attribute),
                (OperatorKind::Conv2D { .. }, Dim::Channel) => Some(Parameter),
                (OperatorKind::Conv2D { .. }, _) => None,
                (OperatorKind::Pool1D { .. }, Dim::Length | Dim::Channel) => Some(Attribute),
                (OperatorKind::Pool1D { .. }, _) => None,
                (OperatorKind::Pool2D { .. }, Dim::Height | Dim::Width | Dim::Channel) => {
                    Some(Attribute)
                }
                (OperatorKind::Pool2D { .. }, _) => None,
                (OperatorKind::Embedding { .. }, Dim::Channel) => Some(Parameter),
                (OperatorKind::Embedding { .. }, _) => None,
                (OperatorKind::ElementWise | OperatorKind::Concat { .. }, _) => Some(Attribute),
            }
        };
        self.output
            .dims
            .iter()
            .filter_map(|&(d, _)| class(d).map(|c| (d, c)))
            .collect()
    }

    /// Shape of the trainable parameter tensor used to measure parameter slices.
    /// Kinds without partitionable parameters get a single opaque axis.
    pub fn param_shape(&self) -> Vec<u64> {
        let cout = self.output.size(Dim::Channel).unwrap_or(1);
        match &self.kind {
            OperatorKind::MatMul { in_channels } => vec![cout, *in_channels],
            OperatorKind::Conv1D {
                in_channels, kernel, ..
            } => vec![cout, *in_channels, *kernel],
            OperatorKind::Conv2D {
                in_channels, kernel, ..
            } => vec![cout, *in_channels, kernel[0], kernel[1]],
            OperatorKind::Embedding { vocab } => vec![*vocab, cout],
            _ => vec![1],
        }
    }

    /// Expected output shape given the declared inputs, or why there is none.
    fn expected_output(&self) -> std::result::Result<Option<TensorShape>, String> {
        let single = || -> std::result::Result<&TensorShape, String> {
            match self.inputs.as_slice() {
                [one] => Ok(one),
                other => Err(format!("expects 1 input, declares {}", other.len())),
            }
        };
        let need = |shape: &TensorShape, dims: &[Dim]| -> std::result::Result<(), String> {
            let mut got: Vec<Dim> = shape.dims.iter().map(|&(d, _)| d).collect();
            let mut want = dims.to_vec();
            got.sort();
            want.sort();
            if got == want {
                Ok(())
            } else {
                Err(format!("input dimensions must be exactly {dims:?}"))
            }
        };
        let window = |input: &TensorShape,
                      dim: Dim,
                      k: u64,
                      s: u64,
                      pad: Padding|
         -> std::result::Result<u64, String> {
            let len = input.size(dim).unwrap_or(0);
            pad.output_len(len, k, s)
                .ok_or_else(|| format!("{dim} extent {len} is smaller than kernel {k}"))
        };
        match &self.kind {
            OperatorKind::MatMul { in_channels } => {
                let x = single()?;
                if x.size(Dim::Channel) != Some(*in_channels) {
                    return Err(format!("input channel must equal in_channels {in_channels}"));
                }
                let cout = self.output.size(Dim::Channel).ok_or("output has no channel")?;
                Ok(Some(x.with(Dim::Channel, cout)))
            }
            OperatorKind::Conv1D {
                in_channels,
                kernel,
                stride,
                padding,
            } => {
                let x = single()?;
                need(x, &[Dim::Sample, Dim::Length, Dim::Channel])?;
                if x.size(Dim::Channel) != Some(*in_channels) {
                    return Err(format!("input channel must equal in_channels {in_channels}"));
                }
                let cout = self.output.size(Dim::Channel).ok_or("output has no channel")?;
                let len = window(x, Dim::Length, *kernel, *stride, *padding)?;
                Ok(Some(x.with(Dim::Length, len).with(Dim::Channel, cout)))
            }
            OperatorKind::Conv2D {
                in_channels,
                kernel,
                stride,
                padding,
            } => {
                let x = single()?;
                need(x, &[Dim::Sample, Dim::Height, Dim::Width, Dim::Channel])?;
                if x.size(Dim::Channel) != Some(*in_channels) {
                    return Err(format!("input channel must equal in_channels {in_channels}"));
                }
                let cout = self.output.size(Dim::Channel).ok_or("output has no channel")?;
                let h = window(x, Dim::Height, kernel[0], stride[0], *padding)?;
                let w = window(x, Dim::Width, kernel[1], stride[1], *padding)?;
                Ok(Some(
                    x.with(Dim::Height, h)
                        .with(Dim::Width, w)
                        .with(Dim::Channel, cout),
                ))
            }
            OperatorKind::Pool1D {
                kernel,
                stride,
                padding,
            } => {
                let x = single()?;
                need(x, &[Dim::Sample, Dim::Length, Dim::Channel])?;
                let len = window(x, Dim::Length, *kernel, *stride, *padding)?;
                Ok(Some(x.with(Dim::Length, len)))
            }
            OperatorKind::Pool2D {
                kernel,
                stride,
                padding,
            } => {
                let x = single()?;
                need(x, &[Dim::Sample, Dim::Height, Dim::Width, Dim::Channel])?;
                let h = window(x, Dim::Height, kernel[0], stride[0], *padding)?;
                let w = window(x, Dim::Width, kernel[1], stride[1], *padding)?;
                Ok(Some(x.with(Dim::Height, h).with(Dim::Width, w)))
            }
            OperatorKind::Embedding { .. } => {
                let x = single()?;
                if x.position(Dim::Channel).is_some() {
                    return Err("embedding input must not have a channel dimension".into());
                }
                let c = self.output.size(Dim::Channel).ok_or("output has no channel")?;
                let mut out = x.with(Dim::Channel, c);
                out.element_size = self.output.element_size;
                Ok(Some(out))
            }
            OperatorKind::ElementWise => {
                if self.inputs.is_empty() {
                    return Err("expects at least 1 input".into());
                }
                if self.inputs.iter().any(|s| s.dims != self.output.dims) {
                    return Err("every input must match the output dimensions".into());
                }
                Ok(None)
            }
            OperatorKind::Concat { axis } => {
                if self.inputs.is_empty() {
                    return Err("expects at least 1 input".into());
                }
                let pos = self
                    .output
                    .position(*axis)
                    .ok_or_else(|| format!("output has no concat axis `{axis}`"))?;
                let mut total = 0;
                for s in &self.inputs {
                    if s.rank() != self.output.rank()
                        || s.dims
                            .iter()
                            .zip(&self.output.dims)
                            .enumerate()
                            .any(|(i, (a, b))| a.0 != b.0 || (i != pos && a.1 != b.1))
                    {
                        return Err("inputs must match the output except along the axis".into());
                    }
                    total += s.dims[pos].1;
                }
                Ok(Some(self.output.with(*axis, total)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEdge {
    pub src: String,
    pub dst: String,
    pub shape: TensorShape,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorGraph {
    pub ops: Vec<Operation>,
    pub edges: Vec<TensorEdge>,
}

impl OperatorGraph {
    pub fn op(&self, id: &str) -> Option<&Operation> {
        self.ops.iter().find(|o| o.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub id: String,
    pub kind: String,
    pub node: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub a: String,
    pub b: String,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds.
    #[serde(default)]
    pub latency: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceTopology {
    pub devices: Vec<Device>,
    pub connections: Vec<Connection>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, subject: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            subject: subject.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.subject, v.message)?;
        }
        Ok(())
    }
}

fn edge_label(i: usize, e: &TensorEdge) -> String {
    format!("edge#{i} {}->{}", e.src, e.dst)
}

pub fn validate_graph(g: &OperatorGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut index = HashMap::new();
    for (i, op) in g.ops.iter().enumerate() {
        if index.insert(op.id.as_str(), i).is_some() {
            report.push(&op.id, "duplicate operation id");
        }
        for p in op.kind.problems() {
            report.push(&op.id, p);
        }
        for p in op.output.problems() {
            report.push(&op.id, format!("output: {p}"));
        }
        for (slot, s) in op.inputs.iter().enumerate() {
            for p in s.problems() {
                report.push(&op.id, format!("input {slot}: {p}"));
            }
        }
        match op.expected_output() {
            Err(msg) => report.push(&op.id, msg),
            Ok(Some(want)) if want.dims != op.output.dims => report.push(
                &op.id,
                format!("output shape {} inconsistent with inputs (expected {want})", op.output),
            ),
            Ok(_) => {}
        }
    }

    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); g.ops.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); g.ops.len()];
    for (i, e) in g.edges.iter().enumerate() {
        let (Some(&s), Some(&d)) = (index.get(e.src.as_str()), index.get(e.dst.as_str())) else {
            report.push(edge_label(i, e), "dangling edge");
            continue;
        };
        if e.shape != g.ops[s].output {
            report.push(edge_label(i, e), "edge shape differs from source output shape");
        }
        incoming[d].push(i);
        succ[s].push(d);
    }
    for (d, edges) in incoming.iter().enumerate() {
        let op = &g.ops[d];
        if edges.is_empty() {
            continue;
        }
        if edges.len() != op.inputs.len() {
            report.push(
                &op.id,
                format!(
                    "{} incoming edges but {} declared inputs",
                    edges.len(),
                    op.inputs.len()
                ),
            );
            continue;
        }
        for (slot, &ei) in edges.iter().enumerate() {
            if g.edges[ei].shape != op.inputs[slot] {
                report.push(
                    edge_label(ei, &g.edges[ei]),
                    format!("edge shape differs from input slot {slot} of `{}`", op.id),
                );
            }
        }
    }
    if let Some(op) = find_cycle(&succ) {
        report.push(&g.ops[op].id, "cycle detected");
    }
    report
}

/// Topological order, or a node on a cycle.
fn topo_sort(succ: &[Vec<usize>]) -> std::result::Result<Vec<usize>, usize> {
    let mut indeg = vec![0usize; succ.len()];
    for s in succ {
        for &d in s {
            indeg[d] += 1;
        }
    }
    let mut stack: Vec<usize> = (0..succ.len()).rev().filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(succ.len());
    while let Some(n) = stack.pop() {
        order.push(n);
        for &d in succ[n].iter().rev() {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                stack.push(d);
            }
        }
    }
    if order.len() == succ.len() {
        Ok(order)
    } else {
        Err((0..succ.len()).find(|&i| indeg[i] > 0).unwrap_or(0))
    }
}

fn find_cycle(succ: &[Vec<usize>]) -> Option<usize> {
    topo_sort(succ).err()
}

pub fn validate_topology(d: &DeviceTopology) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut ids = HashSet::new();
    for dev in &d.devices {
        if !ids.insert(dev.id.as_str()) {
            report.push(&dev.id, "duplicate device id");
        }
    }
    let mut pairs = HashSet::new();
    for (i, c) in d.connections.iter().enumerate() {
        let label = format!("connection#{i} {}-{}", c.a, c.b);
        for end in [&c.a, &c.b] {
            if !ids.contains(end.as_str()) {
                report.push(&label, format!("unknown endpoint `{end}`"));
            }
        }
        if c.a == c.b {
            report.push(&label, "endpoints must be distinct");
        }
        let key = if c.a <= c.b {
            (c.a.as_str(), c.b.as_str())
        } else {
            (c.b.as_str(), c.a.as_str())
        };
        if !pairs.insert(key) {
            report.push(&label, "duplicate connection for device pair");
        }
        if !(c.bandwidth > 0.0 && c.bandwidth.is_finite()) {
            report.push(&label, format!("bandwidth must be positive, got {}", c.bandwidth));
        }
        if !(c.latency >= 0.0 && c.latency.is_finite()) {
            report.push(&label, format!("latency must be non-negative, got {}", c.latency));
        }
    }
    report
}

/// A validated operator graph and device topology with lookup indices.
///
/// Immutable after construction; share it freely between search chains.
#[derive(Clone, Debug)]
pub struct Problem {
    graph: OperatorGraph,
    topology: DeviceTopology,
    op_index: HashMap<String, usize>,
    device_index: HashMap<String, usize>,
    edge_src: Vec<usize>,
    edge_dst: Vec<usize>,
    edge_slot: Vec<usize>,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    topo_order: Vec<usize>,
    link_matrix: Vec<Option<u32>>,
    digests: Vec<Arc<str>>,
    device_kinds: Vec<Arc<str>>,
}

impl Problem {
    pub fn new(graph: OperatorGraph, topology: DeviceTopology) -> Result<Self> {
        let report = validate_graph(&graph);
        if !report.is_valid() {
            return Err(Error::InvalidGraph(report));
        }
        let report = validate_topology(&topology);
        if !report.is_valid() {
            return Err(Error::InvalidTopology(report));
        }
        if topology.devices.is_empty() {
            let mut report = ValidationReport::default();
            report.push("topology", "no devices");
            return Err(Error::InvalidTopology(report));
        }

        let op_index: HashMap<String, usize> = graph
            .ops
            .iter()
            .enumerate()
            .map(|(i, o)| (o.id.clone(), i))
            .collect();
        let device_index: HashMap<String, usize> = topology
            .devices
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();

        let n = graph.ops.len();
        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        let mut edge_src = Vec::with_capacity(graph.edges.len());
        let mut edge_dst = Vec::with_capacity(graph.edges.len());
        let mut edge_slot = Vec::with_capacity(graph.edges.len());
        let mut succ = vec![Vec::new(); n];
        for (i, e) in graph.edges.iter().enumerate() {
            let s = op_index[&e.src];
            let d = op_index[&e.dst];
            edge_src.push(s);
            edge_dst.push(d);
            edge_slot.push(in_edges[d].len());
            in_edges[d].push(i);
            out_edges[s].push(i);
            succ[s].push(d);
        }
        let topo_order = topo_sort(&succ).expect("validated graph is acyclic");

        let nd = topology.devices.len();
        let mut link_matrix = vec![None; nd * nd];
        for (i, c) in topology.connections.iter().enumerate() {
            let a = device_index[&c.a];
            let b = device_index[&c.b];
            link_matrix[a * nd + b] = Some(i as u32);
            link_matrix[b * nd + a] = Some(i as u32);
        }
        let digests = graph
            .ops
            .iter()
            .map(|o| Arc::from(format!("{};{}", o.kind.tag(), o.kind.digest())))
            .collect();
        let device_kinds = topology
            .devices
            .iter()
            .map(|d| Arc::from(d.kind.as_str()))
            .collect();

        Ok(Problem {
            graph,
            topology,
            op_index,
            device_index,
            edge_src,
            edge_dst,
            edge_slot,
            in_edges,
            out_edges,
            topo_order,
            link_matrix,
            digests,
            device_kinds,
        })
    }

    pub fn graph(&self) -> &OperatorGraph {
        &self.graph
    }

    pub fn topology(&self) -> &DeviceTopology {
        &self.topology
    }

    pub fn num_ops(&self) -> usize {
        self.graph.ops.len()
    }

    pub fn num_devices(&self) -> usize {
        self.topology.devices.len()
    }

    pub fn num_links(&self) -> usize {
        self.topology.connections.len()
    }

    pub fn op(&self, i: usize) -> &Operation {
        &self.graph.ops[i]
    }

    pub fn op_index(&self, id: &str) -> Result<usize> {
        self.op_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownOp(id.to_string()))
    }

    pub fn device_index(&self, id: &str) -> Result<usize> {
        self.device_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownDevice(id.to_string()))
    }

    pub fn device(&self, i: usize) -> &Device {
        &self.topology.devices[i]
    }

    pub fn connection(&self, link: usize) -> &Connection {
        &self.topology.connections[link]
    }

    /// Endpoints of a link as device indices.
    pub fn link_endpoints(&self, link: usize) -> (usize, usize) {
        let c = &self.topology.connections[link];
        (self.device_index[&c.a], self.device_index[&c.b])
    }

    pub fn link_between(&self, a: usize, b: usize) -> Option<usize> {
        self.link_matrix[a * self.num_devices() + b].map(|l| l as usize)
    }

    pub fn route(&self, a: usize, b: usize) -> Result<usize> {
        self.link_between(a, b).ok_or_else(|| Error::NoRoute {
            a: self.device(a).id.clone(),
            b: self.device(b).id.clone(),
        })
    }

    pub fn num_edges(&self) -> usize {
        self.graph.edges.len()
    }

    /// (source op, destination op, destination input slot) of an edge.
    pub fn edge(&self, e: usize) -> (usize, usize, usize) {
        (self.edge_src[e], self.edge_dst[e], self.edge_slot[e])
    }

    pub fn edge_shape(&self, e: usize) -> &TensorShape {
        &self.graph.edges[e].shape
    }

    pub fn in_edges(&self, op: usize) -> &[usize] {
        &self.in_edges[op]
    }

    pub fn out_edges(&self, op: usize) -> &[usize] {
        &self.out_edges[op]
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub(crate) fn digest(&self, op: usize) -> &Arc<str> {
        &self.digests[op]
    }

    pub(crate) fn device_kind(&self, d: usize) -> &Arc<str> {
        &self.device_kinds[d]
    }
}
