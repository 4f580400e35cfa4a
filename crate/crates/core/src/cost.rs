//! Task execution and transfer times.
//!
//! Execution times come from a measured profile when one has an entry for the
//! task's [`CostKey`], otherwise from an analytic FLOP count. Fallback values are
//! cached so every later lookup with the same key returns the same number.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::error::{Error, Result};
use crate::model::{Connection, Dim, OperatorKind, Operation};
use crate::soap::TensorRegion;

/// Identifies tasks that must share an execution time.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CostKey {
    /// `Tag;digest`, e.g. `MatMul;in=1024`.
    pub kind: Arc<str>,
    /// Output region extent per dimension, in output-shape order.
    pub dims: Vec<(Dim, u64)>,
    pub device_kind: Arc<str>,
}

impl CostKey {
    pub fn new(op: &Operation, out: &TensorRegion, device_kind: &str) -> Self {
        CostKey {
            kind: Arc::from(format!("{};{}", op.kind.tag(), op.kind.digest())),
            dims: op
                .output
                .dims
                .iter()
                .zip(&out.spans)
                .map(|(&(d, _), s)| (d, s.len()))
                .collect(),
            device_kind: Arc::from(device_kind),
        }
    }

    fn render(&self, seconds: f64) -> String {
        let dims: Vec<String> = self.dims.iter().map(|(d, n)| format!("{d}={n}")).collect();
        format!(
            "{};{};{};{:e}",
            self.kind,
            dims.join(","),
            self.device_kind,
            seconds
        )
    }
}

/// FLOP-count based execution time estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticCostModel {
    /// FLOP/s per device kind.
    pub throughput: HashMap<String, f64>,
    /// FLOP/s for device kinds missing from `throughput`.
    pub default_throughput: f64,
    /// Seconds added to every task.
    pub overhead: f64,
}

impl Default for AnalyticCostModel {
    fn default() -> Self {
        AnalyticCostModel {
            throughput: HashMap::new(),
            default_throughput: 1e12,
            overhead: 5e-6,
        }
    }
}

impl AnalyticCostModel {
    pub fn uniform(throughput: f64, overhead: f64) -> Self {
        AnalyticCostModel {
            throughput: HashMap::new(),
            default_throughput: throughput,
            overhead,
        }
    }

    pub fn throughput_of(&self, device_kind: &str) -> f64 {
        self.throughput
            .get(device_kind)
            .copied()
            .unwrap_or(self.default_throughput)
    }

    pub fn time(&self, op: &Operation, dims: &[(Dim, u64)], device_kind: &str) -> f64 {
        flops(op, dims) / self.throughput_of(device_kind) + self.overhead
    }
}

/// Floating-point operations to produce an output block with the given extents.
pub fn flops(op: &Operation, dims: &[(Dim, u64)]) -> f64 {
    let volume: f64 = dims.iter().map(|&(_, n)| n as f64).product();
    match &op.kind {
        // 2·s·cin·cout with s the product of the non-channel extents
        OperatorKind::MatMul { in_channels } => 2.0 * volume * *in_channels as f64,
        OperatorKind::Conv1D {
            in_channels,
            kernel,
            ..
        } => 2.0 * volume * (*in_channels * *kernel) as f64,
        OperatorKind::Conv2D {
            in_channels,
            kernel,
            ..
        } => 2.0 * volume * (*in_channels * kernel[0] * kernel[1]) as f64,
        OperatorKind::Pool1D { kernel, .. } => volume * *kernel as f64,
        OperatorKind::Pool2D { kernel, .. } => volume * (kernel[0] * kernel[1]) as f64,
        OperatorKind::Embedding { .. } | OperatorKind::ElementWise | OperatorKind::Concat { .. } => {
            volume
        }
    }
}

/// Profiled execution times plus a cached analytic fallback.
///
/// Safe to share between threads; a key's value never changes once present.
#[derive(Debug, Default)]
pub struct CostProfile {
    entries: RwLock<HashMap<CostKey, f64>>,
    pub fallback: AnalyticCostModel,
    fallback_calls: AtomicU64,
}

impl Clone for CostProfile {
    fn clone(&self) -> Self {
        CostProfile {
            entries: RwLock::new(self.entries.read().clone()),
            fallback: self.fallback.clone(),
            fallback_calls: AtomicU64::new(0),
        }
    }
}

impl CostProfile {
    pub fn new(fallback: AnalyticCostModel) -> Self {
        CostProfile {
            fallback,
            ..Default::default()
        }
    }

    pub fn insert(&self, key: CostKey, seconds: f64) {
        self.entries.write().insert(key, seconds);
    }

    pub fn get(&self, key: &CostKey) -> Option<f64> {
        self.entries.read().get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// How many times the analytic fallback has been evaluated.
    pub fn fallback_calls(&self) -> u64 {
        self.fallback_calls.load(Ordering::Relaxed)
    }

    /// Execution time of a task computing `out` of `op` on a device of `device_kind`.
    pub fn task_exe_time(&self, op: &Operation, out: &TensorRegion, device_kind: &str) -> f64 {
        self.lookup(CostKey::new(op, out, device_kind), op)
    }

    /// Same as [`task_exe_time`](Self::task_exe_time) with a pre-rendered kind string.
    pub(crate) fn exe_time_keyed(
        &self,
        kind: &Arc<str>,
        op: &Operation,
        out: &TensorRegion,
        device_kind: &Arc<str>,
    ) -> f64 {
        let key = CostKey {
            kind: kind.clone(),
            dims: op
                .output
                .dims
                .iter()
                .zip(&out.spans)
                .map(|(&(d, _), s)| (d, s.len()))
                .collect(),
            device_kind: device_kind.clone(),
        };
        self.lookup(key, op)
    }

    fn lookup(&self, key: CostKey, op: &Operation) -> f64 {
        if let Some(t) = self.entries.read().get(&key) {
            return *t;
        }
        self.fallback_calls.fetch_add(1, Ordering::Relaxed);
        let t = self.fallback.time(op, &key.dims, &key.device_kind);
        *self.entries.write().entry(key).or_insert(t)
    }

    /// Parses the line-oriented profile format.
    ///
    /// Each record is `kind;digest;dim=size,...;device-kind;seconds`. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn parse(text: &str, fallback: AnalyticCostModel) -> Result<Self> {
        let profile = CostProfile::new(fallback);
        {
            let mut entries = profile.entries.write();
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, t) = parse_record(line).map_err(|message| Error::ProfileParse {
                    line: i + 1,
                    message,
                })?;
                entries.insert(key, t);
            }
        }
        Ok(profile)
    }

    pub fn load(path: &std::path::Path, fallback: AnalyticCostModel) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, fallback).map_err(|e| e.chain(path.display().to_string()))
    }

    /// Renders every entry, sorted by key, in the format accepted by [`parse`](Self::parse).
    pub fn render(&self) -> String {
        let entries = self.entries.read();
        let mut keys: Vec<&CostKey> = entries.keys().collect();
        keys.sort();
        let mut out = String::from("# kind;digest;dims;device-kind;seconds\n");
        for k in keys {
            let _ = writeln!(out, "{}", k.render(entries[k]));
        }
        out
    }

    pub fn entries(&self) -> HashMap<CostKey, f64> {
        self.entries.read().clone()
    }
}

fn parse_record(line: &str) -> std::result::Result<(CostKey, f64), String> {
    let fields: Vec<&str> = line.split(';').map(str::trim).collect();
    let [tag, digest, dims, device_kind, seconds] = fields[..] else {
        return Err(format!("expected 5 `;`-separated fields, found {}", fields.len()));
    };
    if tag.is_empty() || device_kind.is_empty() {
        return Err("empty kind or device kind".into());
    }
    let dims = dims
        .split(',')
        .map(|pair| {
            let (d, n) = pair
                .split_once('=')
                .ok_or_else(|| format!("bad dimension entry `{pair}`"))?;
            let d = Dim::parse(d.trim()).ok_or_else(|| format!("unknown dimension `{d}`"))?;
            let n = n
                .trim()
                .parse::<u64>()
                .map_err(|_| format!("bad extent in `{pair}`"))?;
            Ok((d, n))
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let t: f64 = seconds
        .parse()
        .map_err(|_| format!("bad time `{seconds}`"))?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(format!(
            "time must be positive and finite for key `{tag};{digest}`, got {seconds}"
        ));
    }
    Ok((
        CostKey {
            kind: Arc::from(format!("{tag};{digest}")),
            dims,
            device_kind: Arc::from(device_kind),
        },
        t,
    ))
}

/// Union of both profiles' entries; `b` wins on conflicting keys and supplies the fallback.
pub fn merge_profiles(a: &CostProfile, b: &CostProfile) -> CostProfile {
    let mut entries = a.entries();
    entries.extend(b.entries());
    CostProfile {
        entries: RwLock::new(entries),
        fallback: b.fallback.clone(),
        fallback_calls: AtomicU64::new(0),
    }
}

/// Seconds to move `bytes` over `conn`.
pub fn comm_time(conn: &Connection, bytes: u64) -> f64 {
    conn.latency + bytes as f64 / conn.bandwidth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TensorShape;
    use crate::soap::{output_region, Degrees, Span};

    fn matmul(s: u64, cin: u64, cout: u64) -> Operation {
        Operation {
            id: "mm".into(),
            kind: OperatorKind::MatMul { in_channels: cin },
            inputs: vec![TensorShape::new([(Dim::Sample, s), (Dim::Channel, cin)], 4)],
            output: TensorShape::new([(Dim::Sample, s), (Dim::Channel, cout)], 4),
            param_bytes: cin * cout * 4,
        }
    }

    fn conn(bandwidth: f64, latency: f64) -> Connection {
        Connection {
            a: "a".into(),
            b: "b".into(),
            bandwidth,
            latency,
        }
    }

    #[test]
    fn matmul_fallback_formula() {
        let p = CostProfile::new(AnalyticCostModel::uniform(1e12, 0.0));
        let op = matmul(32, 1024, 1024);
        let r = TensorRegion::full(op.output.sizes());
        let t = p.task_exe_time(&op, &r, "gpu");
        assert_eq!(t, 2.0 * 32.0 * 1024.0 * 1024.0 / 1e12);
        assert!((t - 6.71e-5).abs() < 1e-7);
    }

    #[test]
    fn halving_samples_halves_time() {
        let p = CostProfile::new(AnalyticCostModel::uniform(1e12, 0.0));
        let op = matmul(64, 256, 256);
        let full = p.task_exe_time(&op, &TensorRegion::full(op.output.sizes()), "gpu");
        let half = output_region(&op, &Degrees::new([(Dim::Sample, 2)]), 1).unwrap();
        assert_eq!(p.task_exe_time(&op, &half, "gpu") * 2.0, full);
    }

    #[test]
    fn cache_hit_skips_fallback() {
        let p = CostProfile::default();
        let op = matmul(8, 8, 8);
        let r = TensorRegion::full(op.output.sizes());
        let a = p.task_exe_time(&op, &r, "gpu");
        assert_eq!(p.fallback_calls(), 1);
        let b = p.task_exe_time(&op, &r, "gpu");
        assert_eq!(p.fallback_calls(), 1);
        assert_eq!(a.to_bits(), b.to_bits());
        // same extents at a different offset share the key
        let shifted = TensorRegion {
            spans: vec![Span::new(0, 8), Span::new(0, 8)],
        };
        p.task_exe_time(&op, &shifted, "gpu");
        assert_eq!(p.fallback_calls(), 1);
        p.task_exe_time(&op, &r, "cpu");
        assert_eq!(p.fallback_calls(), 2);
    }

    #[test]
    fn comm_time_examples() {
        assert_eq!(comm_time(&conn(1e9, 0.0), 4_000_000), 0.004);
        assert_eq!(comm_time(&conn(1e9, 3e-6), 0), 3e-6);
        let slow = comm_time(&conn(1e9, 0.0), 1 << 20);
        let fast = comm_time(&conn(2e9, 0.0), 1 << 20);
        assert_eq!(fast * 2.0, slow);
    }

    #[test]
    fn profile_entry_bypasses_fallback() {
        let text = "# measured\nMatMul;in=8;sample=8,channel=8;gpu;0.25\n\n";
        let p = CostProfile::parse(text, AnalyticCostModel::default()).unwrap();
        assert_eq!(p.len(), 1);
        let op = matmul(8, 8, 8);
        assert_eq!(p.task_exe_time(&op, &TensorRegion::full(op.output.sizes()), "gpu"), 0.25);
        assert_eq!(p.fallback_calls(), 0);
    }

    #[test]
    fn empty_profile_has_only_fallback() {
        let p = CostProfile::parse("", AnalyticCostModel::default()).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn parse_errors_carry_line() {
        let bad = "# x\nMatMul;in=8;sample=8;gpu;-1\n";
        match CostProfile::parse(bad, AnalyticCostModel::default()) {
            Err(Error::ProfileParse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("MatMul;in=8"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(CostProfile::parse("MatMul;in=8;gpu;1", AnalyticCostModel::default()).is_err());
        assert!(
            CostProfile::parse("MatMul;in=8;depth=3;gpu;1", AnalyticCostModel::default()).is_err()
        );
    }

    #[test]
    fn render_round_trips() {
        let p = CostProfile::default();
        let op = matmul(8, 16, 4);
        p.task_exe_time(&op, &TensorRegion::full(op.output.sizes()), "gpu");
        p.task_exe_time(&op, &TensorRegion::full(op.output.sizes()), "cpu");
        let q = CostProfile::parse(&p.render(), AnalyticCostModel::default()).unwrap();
        assert_eq!(p.entries(), q.entries());
    }

    #[test]
    fn merge_prefers_right() {
        let a = CostProfile::parse(
            "MatMul;in=8;sample=8,channel=8;gpu;1\nMatMul;in=8;sample=4,channel=8;gpu;2",
            AnalyticCostModel::default(),
        )
        .unwrap();
        let b = CostProfile::parse(
            "MatMul;in=8;sample=8,channel=8;gpu;3",
            AnalyticCostModel::default(),
        )
        .unwrap();
        let m = merge_profiles(&a, &b);
        assert_eq!(m.len(), 2);
        let op = matmul(8, 8, 8);
        assert_eq!(m.task_exe_time(&op, &TensorRegion::full(op.output.sizes()), "gpu"), 3.0);
    }
}
