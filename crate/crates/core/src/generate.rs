//! Benchmark operator graphs and device topologies.
//!
//! Recurrent models are unrolled: every step gets its own operations, and the
//! parameters of a recurrent layer are spread evenly over its steps. An LSTM
//! step is approximated as `Concat(x_t, h_{t-1}) -> MatMul -> ElementWise`
//! (the first step has no concat).

use crate::error::{Error, Result};
use crate::model::{
    Connection, Device, DeviceTopology, Dim, OperatorGraph, OperatorKind, Operation, Padding,
    TensorEdge, TensorShape,
};

pub const MODELS: &[&str] = &[
    "rnn3",
    "rnnlm-like",
    "rnntc-like",
    "nmt-like",
    "alexnet-like",
    "lenet-like",
    "inception-like",
    "resnet-like",
];

pub const TOPOLOGIES: &[&str] = &["full-mesh", "p100-node", "k80-cluster"];

/// Size knobs shared by all model generators. Each generator reads the fields it needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub batch: u64,
    /// Unroll steps of recurrent models.
    pub steps: usize,
    /// Recurrent hidden size, or the width of dense layers in CNNs.
    pub hidden: u64,
    /// Embedding vocabulary and output classes of language models.
    pub vocab: u64,
    /// Square input image extent of CNNs.
    pub image: u64,
    /// Base channel count of CNNs.
    pub channels: u64,
    /// Output classes of classifiers.
    pub classes: u64,
    pub element_size: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            batch: 64,
            steps: 10,
            hidden: 1024,
            vocab: 8192,
            image: 224,
            channels: 64,
            classes: 1000,
            element_size: 4,
        }
    }
}

pub fn generate_model(name: &str, p: &ModelParams) -> Result<OperatorGraph> {
    let g = match name {
        "rnn3" => rnn3(p),
        "rnnlm-like" => rnnlm(p),
        "rnntc-like" => rnntc(p),
        "nmt-like" => nmt(p),
        "alexnet-like" => alexnet(p),
        "lenet-like" => lenet(p),
        "inception-like" => inception(p),
        "resnet-like" => resnet(p),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(g)
}

struct Builder {
    ops: Vec<Operation>,
    edges: Vec<TensorEdge>,
    elem: u64,
}

impl Builder {
    fn new(elem: u64) -> Self {
        Builder {
            ops: Vec::new(),
            edges: Vec::new(),
            elem,
        }
    }

    fn shape(&self, id: &str) -> TensorShape {
        self.ops
            .iter()
            .find(|o| o.id == id)
            .unwrap_or_else(|| panic!("generator references unknown op {id}"))
            .output
            .clone()
    }

    fn push(
        &mut self,
        id: String,
        kind: OperatorKind,
        srcs: &[&str],
        output: TensorShape,
        param_bytes: u64,
    ) -> String {
        let inputs: Vec<TensorShape> = srcs.iter().map(|s| self.shape(s)).collect();
        for (s, shape) in srcs.iter().zip(&inputs) {
            self.edges.push(TensorEdge {
                src: s.to_string(),
                dst: id.clone(),
                shape: shape.clone(),
            });
        }
        self.ops.push(Operation {
            id: id.clone(),
            kind,
            inputs,
            output,
            param_bytes,
        });
        id
    }

    /// Embedding of external token ids of shape `[sample]`.
    fn embedding(&mut self, id: String, batch: u64, vocab: u64, dim: u64, share: u64) -> String {
        let tokens = TensorShape::new([(Dim::Sample, batch)], 4);
        let output = TensorShape::new([(Dim::Sample, batch), (Dim::Channel, dim)], self.elem);
        self.ops.push(Operation {
            id: id.clone(),
            kind: OperatorKind::Embedding { vocab },
            inputs: vec![tokens],
            output,
            param_bytes: vocab * dim * self.elem / share,
        });
        id
    }

    fn matmul(&mut self, id: String, src: &str, cout: u64, share: u64) -> String {
        let x = self.shape(src);
        let cin = x.size(Dim::Channel).expect("matmul input has channels");
        let out = x.with(Dim::Channel, cout);
        let params = cin * cout * self.elem / share;
        self.push(id, OperatorKind::MatMul { in_channels: cin }, &[src], out, params)
    }

    fn elementwise(&mut self, id: String, srcs: &[&str]) -> String {
        let out = self.shape(srcs[0]);
        self.push(id, OperatorKind::ElementWise, srcs, out, 0)
    }

    fn concat(&mut self, id: String, srcs: &[&str], axis: Dim) -> String {
        let first = self.shape(srcs[0]);
        let total = srcs.iter().map(|s| self.shape(s).size(axis).unwrap_or(0)).sum();
        self.push(id, OperatorKind::Concat { axis }, srcs, first.with(axis, total), 0)
    }

    fn conv2d(&mut self, id: String, src: &str, cout: u64, k: u64, s: u64, pad: Padding) -> String {
        let x = self.shape(src);
        let cin = x.size(Dim::Channel).expect("conv input has channels");
        let h = pad.output_len(x.size(Dim::Height).unwrap(), k, s).expect("conv fits");
        let w = pad.output_len(x.size(Dim::Width).unwrap(), k, s).expect("conv fits");
        let out = x
            .with(Dim::Height, h)
            .with(Dim::Width, w)
            .with(Dim::Channel, cout);
        self.push(
            id,
            OperatorKind::Conv2D {
                in_channels: cin,
                kernel: [k, k],
                stride: [s, s],
                padding: pad,
            },
            &[src],
            out,
            cout * cin * k * k * self.elem,
        )
    }

    fn pool2d(&mut self, id: String, src: &str, k: u64, s: u64, pad: Padding) -> String {
        let x = self.shape(src);
        let h = pad.output_len(x.size(Dim::Height).unwrap(), k, s).expect("pool fits");
        let w = pad.output_len(x.size(Dim::Width).unwrap(), k, s).expect("pool fits");
        let out = x.with(Dim::Height, h).with(Dim::Width, w);
        self.push(
            id,
            OperatorKind::Pool2D {
                kernel: [k, k],
                stride: [s, s],
                padding: pad,
            },
            &[src],
            out,
            0,
        )
    }

    /// Dense layer over the whole spatial extent, as a valid convolution.
    fn dense2d(&mut self, id: String, src: &str, cout: u64) -> String {
        let x = self.shape(src);
        let k = x.size(Dim::Height).unwrap();
        debug_assert_eq!(Some(k), x.size(Dim::Width));
        self.conv2d(id, src, cout, k, 1, Padding::Valid)
    }

    /// One unrolled LSTM layer; returns the hidden-state op of every step.
    fn lstm_layer(&mut self, name: &str, xs: &[String], hidden: u64) -> Vec<String> {
        let steps = xs.len() as u64;
        let mut hs: Vec<String> = Vec::with_capacity(xs.len());
        for (t, x) in xs.iter().enumerate() {
            let input = match hs.last() {
                Some(prev) => {
                    let prev = prev.clone();
                    self.concat(format!("{name}_cat{t}"), &[x, &prev], Dim::Channel)
                }
                None => x.clone(),
            };
            // weights of all four gates over input and recurrent state
            let cin = self.shape(x).size(Dim::Channel).unwrap() + hidden;
            let mm = self.matmul(format!("{name}_mm{t}"), &input, hidden, 1);
            let op = self.ops.last_mut().expect("just pushed");
            op.param_bytes = 4 * cin * hidden * self.elem / steps;
            let h = self.elementwise(format!("{name}_h{t}"), &[&mm]);
            hs.push(h);
        }
        hs
    }

    fn finish(self) -> OperatorGraph {
        OperatorGraph {
            ops: self.ops,
            edges: self.edges,
        }
    }
}

/// Embedding, one LSTM layer and a per-step linear output layer.
pub fn rnn3(p: &ModelParams) -> OperatorGraph {
    let mut b = Builder::new(p.element_size);
    let steps = p.steps as u64;
    let xs: Vec<String> = (0..p.steps)
        .map(|t| b.embedding(format!("embed{t}"), p.batch, p.vocab, p.hidden, steps))
        .collect();
    let hs = b.lstm_layer("lstm", &xs, p.hidden);
    for (t, h) in hs.iter().enumerate() {
        b.matmul(format!("linear{t}"), h, p.vocab, steps);
    }
    b.finish()
}

/// Two-layer LSTM language model.
pub fn rnnlm(p: &ModelParams) -> OperatorGraph {
    let mut b = Builder::new(p.element_size);
    let steps = p.steps as u64;
    let xs: Vec<String> = (0..p.steps)
        .map(|t| b.embedding(format!("embed{t}"), p.batch, p.vocab, p.hidden, steps))
        .collect();
    let h1 = b.lstm_layer("lstm1", &xs, p.hidden);
    let h2 = b.lstm_layer("lstm2", &h1, p.hidden);
    for (t, h) in h2.iter().enumerate() {
        b.matmul(format!("softmax{t}"), h, p.vocab, steps);
    }
    b.finish()
}

/// Two-layer LSTM text classifier reading the last hidden state.
pub fn rnntc(p: &ModelParams) -> OperatorGraph {
    let mut b = Builder::new(p.element_size);
    let steps = p.steps as u64;
    let xs: Vec<String> = (0..p.steps)
        .map(|t| b.embedding(format!("embed{t}"), p.batch, p.vocab, p.hidden, steps))
        .collect();
    let h1 = b.lstm_layer("lstm1", &xs, p.hidden);
    let h2 = b.lstm_layer("lstm2", &h1, p.hidden);
    let last = h2.last().expect("at least one step").clone();
    b.matmul("classify".into(), &last, p.classes, 1);
    b.finish()
}

/// Two-layer encoder and decoder with a concat-and-project attention stand-in.
pub fn nmt(p: &ModelParams) -> OperatorGraph {
    let mut b = Builder::new(p.element_size);
    let steps = p.steps as u64;
    let src: Vec<String> = (0..p.steps)
        .map(|t| b.embedding(format!("enc_embed{t}"), p.batch, p.vocab, p.hidden, steps))
        .collect();
    let e1 = b.lstm_layer("enc1", &src, p.hidden);
    let e2 = b.lstm_layer("enc2", &e1, p.hidden);
    let context = e2.last().expect("at least one step").clone();
    let tgt: Vec<String> = (0..p.steps)
        .map(|t| b.embedding(format!("dec_embed{t}"), p.batch, p.vocab, p.hidden, steps))
        .collect();
    let d1 = b.lstm_layer("dec1", &tgt, p.hidden);
    let d2 = b.lstm_layer("dec2", &d1, p.hidden);
    for (t, h) in d2.iter().enumerate() {
        let cat = b.concat(format!("attn_cat{t}"), &[h, &context], Dim::Channel);
        let mm = b.matmul(format!("attn{t}"), &cat, p.hidden, steps);
        let act = b.elementwise(format!("attn_act{t}"), &[&mm]);
        b.matmul(format!("softmax{t}"), &act, p.vocab, steps);
    }
    b.finish()
}

fn image_input(b: &mut Builder, p: &ModelParams) -> String {
    // identity op standing in for the input pipeline
    let x = TensorShape::new(
        [
            (Dim::Sample, p.batch),
            (Dim::Height, p.image),
            (Dim::Width, p.image),
            (Dim::Channel, 3),
        ],
        p.element_size,
    );
    b.ops.push(Operation {
        id: "image".into(),
        kind: OperatorKind::ElementWise,
        inputs: vec![x.clone()],
        output: x,
        param_bytes: 0,
    });
    "image".into()
}

/// Five convolutions, three pools and three dense layers in a single chain.
pub fn alexnet(p: &ModelParams) -> OperatorGraph {
    let mut b = Builder::new(p.element_size);
    let c = p.channels;
    let x = image_input(&mut b, p);
    let x = b.conv2d("conv1".into(), &x, c, 11.min(p.image), 4, Padding::Same);
    let x = b.pool2d("pool1".into(), &x, 3, 2, Padding::Same);
    let x = b.conv2d("conv2".into(), &x, 3 * c, 5, 1, Padding::Same);
    let x = b.pool2d("pool2".into(), &x, 3, 2, Padding::Same);
    let x = b.conv2d("conv3".into(), &x, 6 * c, 3, 1, Padding::Same);
    let x = b.conv2d("conv4".into(), &x, 4 * c, 3, 1, Padding::Same);
    let x = b.conv2d("conv5".into(), &x, 4 * c, 3, 1, Padding::Same);
    let x = b.pool2d("pool5".into(), &x, 3, 2, Padding::Same);
    let x = b.dense2d("fc6".into(), &x, p.hidden);
    let x = b.matmul("fc7".into(), &x, p.hidden, 1);
    b.matmul("fc8".into(), &x, p.classes, 1);
    b.finish()
}

/// Two convolution/pool pairs and two dense layers.
pub fn lenet(p: &ModelParams) -> OperatorGraph {
    let mut b = Builder::new(p.element_size);
    let x = TensorShape::new(
        [
            (Dim::Sample, p.batch),
            (Dim::Height, p.image),
            (Dim::Width, p.image),
            (Dim::Channel, 1),
        ],
        p.element_size,
    );
    let c = p.channels;
    b.ops.push(Operation {
        id: "conv1".into(),
        kind: OperatorKind::Conv2D {
            in_channels: 1,
            kernel: [5, 5],
            stride: [1, 1],
            padding: Padding::Same,
        },
        inputs: vec![x.clone()],
        output: x.with(Dim::Channel, c),
        param_bytes: c * 25 * p.element_size,
    });
    let y = b.pool2d("pool1".into(), "conv1", 2, 2, Padding::Valid);
    let y = b.conv2d("conv2".into(), &y, p.hidden.max(c), 5, 1, Padding::Same);
    let y = b.pool2d("pool2".into(), &y, 2, 2, Padding::Valid);
    let y = b.dense2d("fc1".into(), &y, p.hidden);
    b.matmul("fc2".into(), &y, p.classes, 1);
    b.finish()
}

/// Stem followed by inception blocks of four parallel branches joined by concat.
pub fn inception(p: &ModelParams) -> OperatorGraph {
    let mut b = Builder::new(p.element_size);
    let c = p.channels;
    let x = image_input(&mut b, p);
    let mut x = b.conv2d("stem".into(), &x, c, 3, 2, Padding::Same);
    for blk in 0..p.steps.max(1) {
        let n = |s: &str| format!("inc{blk}_{s}");
        let a = b.conv2d(n("1x1"), &x, c, 1, 1, Padding::Same);
        let r3 = b.conv2d(n("3x3_reduce"), &x, c, 1, 1, Padding::Same);
        let b3 = b.conv2d(n("3x3"), &r3, c, 3, 1, Padding::Same);
        let r5 = b.conv2d(n("5x5_reduce"), &x, c, 1, 1, Padding::Same);
        let b5 = b.conv2d(n("5x5"), &r5, c, 5, 1, Padding::Same);
        let pl = b.pool2d(n("pool"), &x, 3, 1, Padding::Same);
        let pp = b.conv2d(n("pool_proj"), &pl, c, 1, 1, Padding::Same);
        x = b.concat(n("concat"), &[&a, &b3, &b5, &pp], Dim::Channel);
    }
    let size = b.shape(&x).size(Dim::Height).unwrap();
    let x = b.pool2d("avgpool".into(), &x, size, size, Padding::Valid);
    b.matmul("fc".into(), &x, p.classes, 1);
    b.finish()
}

/// Stem followed by residual blocks of two convolutions and an add.
pub fn resnet(p: &ModelParams) -> OperatorGraph {
    let mut b = Builder::new(p.element_size);
    let c = p.channels;
    let x = image_input(&mut b, p);
    let mut x = b.conv2d("stem".into(), &x, c, 3, 2, Padding::Same);
    for blk in 0..p.steps.max(1) {
        let n = |s: &str| format!("res{blk}_{s}");
        let a = b.conv2d(n("conv_a"), &x, c, 3, 1, Padding::Same);
        let r = b.elementwise(n("relu"), &[&a]);
        let bb = b.conv2d(n("conv_b"), &r, c, 3, 1, Padding::Same);
        x = b.elementwise(n("add"), &[&bb, &x]);
    }
    let size = b.shape(&x).size(Dim::Height).unwrap();
    let x = b.pool2d("avgpool".into(), &x, size, size, Padding::Valid);
    b.matmul("fc".into(), &x, p.classes, 1);
    b.finish()
}

/// Link parameters of generated topologies. The defaults are placeholders of
/// plausible magnitude, not measurements of any particular machine.
#[derive(Clone, Debug, PartialEq)]
pub struct TopologyParams {
    /// Device count of `full-mesh`.
    pub devices: usize,
    /// Node count of `k80-cluster`.
    pub nodes: usize,
    pub gpus_per_node: usize,
    /// Bytes/s between GPUs of one node.
    pub intra_bandwidth: f64,
    /// Bytes/s between GPUs of different nodes.
    pub inter_bandwidth: f64,
    /// Seconds per transfer.
    pub latency: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            devices: 4,
            nodes: 4,
            gpus_per_node: 4,
            intra_bandwidth: 20e9,
            inter_bandwidth: 1.25e9,
            latency: 0.0,
        }
    }
}

pub fn generate_topology(name: &str, p: &TopologyParams) -> Result<DeviceTopology> {
    match name {
        "full-mesh" => Ok(cluster(1, p.devices, "gpu", p)),
        "p100-node" => Ok(cluster(1, p.gpus_per_node, "p100", p)),
        "k80-cluster" => Ok(cluster(p.nodes, p.gpus_per_node, "k80", p)),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// `nodes × per_node` devices with a direct logical connection between every pair.
pub fn cluster(nodes: usize, per_node: usize, kind: &str, p: &TopologyParams) -> DeviceTopology {
    let mut devices = Vec::new();
    for n in 0..nodes {
        for g in 0..per_node {
            let id = if nodes == 1 {
                format!("gpu{g}")
            } else {
                format!("n{n}g{g}")
            };
            devices.push(Device {
                id,
                kind: kind.into(),
                node: format!("node{n}"),
            });
        }
    }
    let mut connections = Vec::new();
    for i in 0..devices.len() {
        for j in i + 1..devices.len() {
            let same = devices[i].node == devices[j].node;
            connections.push(Connection {
                a: devices[i].id.clone(),
                b: devices[j].id.clone(),
                bandwidth: if same { p.intra_bandwidth } else { p.inter_bandwidth },
                latency: p.latency,
            });
        }
    }
    DeviceTopology {
        devices,
        connections,
    }
}

/// Uniform full mesh of `n` devices.
pub fn full_mesh(n: usize, bandwidth: f64) -> DeviceTopology {
    cluster(
        1,
        n,
        "gpu",
        &TopologyParams {
            intra_bandwidth: bandwidth,
            ..Default::default()
        },
    )
}
