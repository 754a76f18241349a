//! Observability records: spans, logs and metric samples, grouped per request.
//!
//! Records travel as line-delimited JSON (see [`jsonl`]) and are laid out on
//! disk per trace (see [`dataset`]).

pub mod dataset;
pub mod jsonl;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{parse_logs, parse_metrics, parse_spans};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Platform,
    Application,
}

/// Component kind of a node. Platform kinds form the creation chain of a
/// function instance; `Function` is the instance itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Deployment,
    Replicaset,
    Pod,
    Function,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [
        NodeKind::Deployment,
        NodeKind::Replicaset,
        NodeKind::Pod,
        NodeKind::Function,
    ];

    /// The platform creation chain, in ownership order.
    pub const PLATFORM_CHAIN: [NodeKind; 3] =
        [NodeKind::Deployment, NodeKind::Replicaset, NodeKind::Pod];

    pub fn side(self) -> Side {
        match self {
            NodeKind::Function => Side::Application,
            _ => Side::Platform,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Deployment => "deployment",
            NodeKind::Replicaset => "replicaset",
            NodeKind::Pod => "pod",
            NodeKind::Function => "function",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NodeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown node kind `{s}`")))
    }
}

/// One timed operation of a platform component or a function instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub trace_id: String,
    pub span_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_span_id: Option<String>,
    pub side: Side,
    pub node_kind: NodeKind,
    pub node_name: String,
    pub start_us: i64,
    pub duration_us: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub request_params: BTreeMap<String, String>,
}

impl Span {
    pub fn node_key(&self) -> NodeKey {
        NodeKey::new(self.node_kind, self.node_name.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogStream {
    Audit,
    Event,
    App,
}

impl LogStream {
    pub const ALL: [LogStream; 3] = [LogStream::Audit, LogStream::Event, LogStream::App];
}

/// A raw log line attributed to a node within a trace.
///
/// `node_kind` is optional on the wire. When absent, `app` records attach to
/// the function node and `audit`/`event` records to the pod of the named
/// function's creation chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub trace_id: String,
    pub node_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_kind: Option<NodeKind>,
    pub stream: LogStream,
    pub timestamp_us: i64,
    pub message: String,
}

impl LogRecord {
    pub fn target_kind(&self) -> NodeKind {
        self.node_kind.unwrap_or(match self.stream {
            LogStream::App => NodeKind::Function,
            LogStream::Audit | LogStream::Event => NodeKind::Pod,
        })
    }

    pub fn node_key(&self) -> NodeKey {
        NodeKey::new(self.target_kind(), self.node_name.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricChannel {
    Cpu,
    Memory,
}

impl MetricChannel {
    pub const ALL: [MetricChannel; 2] = [MetricChannel::Cpu, MetricChannel::Memory];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricChannel::Cpu => "cpu",
            MetricChannel::Memory => "memory",
        }
    }
}

/// Instantaneous resource reading of a function instance: CPU as a fraction
/// of its limit, memory in bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub trace_id: String,
    pub node_name: String,
    pub channel: MetricChannel,
    pub value: f64,
}

/// Identity of a graph node: `(node_kind, node_name)`.
///
/// Ordering is lexicographic on the rendered `kind:name` form, which is the
/// tie-break used by root cause rankings.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub node_kind: NodeKind,
    pub node_name: String,
}

impl NodeKey {
    pub fn new(node_kind: NodeKind, node_name: impl Into<String>) -> Self {
        NodeKey {
            node_kind,
            node_name: node_name.into(),
        }
    }

    pub fn side(&self) -> Side {
        self.node_kind.side()
    }
}

impl Ord for NodeKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.node_kind
            .as_str()
            .cmp(other.node_kind.as_str())
            .then_with(|| self.node_name.cmp(&other.node_name))
    }
}

impl PartialOrd for NodeKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node_kind, self.node_name)
    }
}

/// All telemetry of one request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestBundle {
    pub trace_id: String,
    pub spans: Vec<Span>,
    pub logs: Vec<LogRecord>,
    pub metrics: Vec<MetricSample>,
    /// Root cause labels; present iff the bundle is labeled faulty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<NodeKey>>,
}

impl RequestBundle {
    pub fn new(trace_id: impl Into<String>) -> Self {
        RequestBundle {
            trace_id: trace_id.into(),
            spans: Vec::new(),
            logs: Vec::new(),
            metrics: Vec::new(),
            ground_truth: None,
        }
    }

    pub fn record_count(&self) -> usize {
        self.spans.len() + self.logs.len() + self.metrics.len()
    }

    pub fn is_faulty(&self) -> bool {
        self.ground_truth.is_some()
    }
}

/// Partition parsed records into one bundle per trace, ordered by trace id.
///
/// Logs and metrics whose trace has no span are rejected, as are duplicate
/// span ids within a trace.
pub fn group_into_bundles(
    spans: Vec<Span>,
    logs: Vec<LogRecord>,
    metrics: Vec<MetricSample>,
) -> Result<Vec<RequestBundle>> {
    let mut bundles: BTreeMap<String, RequestBundle> = BTreeMap::new();
    let mut seen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();

    for span in spans {
        if !seen
            .entry(span.trace_id.clone())
            .or_default()
            .insert(span.span_id.clone())
        {
            return Err(Error::Invalid(format!(
                "duplicate span id `{}` in trace `{}`",
                span.span_id, span.trace_id
            )));
        }
        bundles
            .entry(span.trace_id.clone())
            .or_insert_with(|| RequestBundle::new(span.trace_id.clone()))
            .spans
            .push(span);
    }
    for log in logs {
        match bundles.get_mut(&log.trace_id) {
            Some(bundle) => bundle.logs.push(log),
            None => {
                return Err(Error::DanglingTelemetry {
                    trace_id: log.trace_id,
                    kind: "log",
                })
            }
        }
    }
    for metric in metrics {
        match bundles.get_mut(&metric.trace_id) {
            Some(bundle) => bundle.metrics.push(metric),
            None => {
                return Err(Error::DanglingTelemetry {
                    trace_id: metric.trace_id,
                    kind: "metric",
                })
            }
        }
    }
    Ok(bundles.into_values().collect())
}
