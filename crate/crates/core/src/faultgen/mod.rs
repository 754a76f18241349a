//! Synthetic serverless workload and fault injection.
//!
//! A [`WorkloadSpec`] describes request types as function call trees with base
//! latencies, resource levels and a log repertoire per node kind. The
//! simulator turns it into labeled normal and faulty request bundles.

mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::{LogStream, NodeKind};

pub use sim::{
    generate_dataset, generate_faulty, generate_normal, inject_fault, normal_bundle, plan_faults,
    spec_hash, Manifest, MANIFEST_FILE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultCategory {
    PodFailure,
    ReplicasetFailure,
    KubeSchedulerDelay,
    KubeletDelay,
    NetworkFailure,
    CodeDefect,
    MemoryStress,
    CpuContention,
}

impl FaultCategory {
    pub const ALL: [FaultCategory; 8] = [
        FaultCategory::PodFailure,
        FaultCategory::ReplicasetFailure,
        FaultCategory::KubeSchedulerDelay,
        FaultCategory::KubeletDelay,
        FaultCategory::NetworkFailure,
        FaultCategory::CodeDefect,
        FaultCategory::MemoryStress,
        FaultCategory::CpuContention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultCategory::PodFailure => "pod_failure",
            FaultCategory::ReplicasetFailure => "replicaset_failure",
            FaultCategory::KubeSchedulerDelay => "kube_scheduler_delay",
            FaultCategory::KubeletDelay => "kubelet_delay",
            FaultCategory::NetworkFailure => "network_failure",
            FaultCategory::CodeDefect => "code_defect",
            FaultCategory::MemoryStress => "memory_stress",
            FaultCategory::CpuContention => "cpu_contention",
        }
    }

    /// Node kind of the root cause this category produces.
    pub fn target_kind(self) -> NodeKind {
        match self {
            FaultCategory::PodFailure | FaultCategory::KubeletDelay | FaultCategory::NetworkFailure => {
                NodeKind::Pod
            }
            FaultCategory::ReplicasetFailure => NodeKind::Replicaset,
            FaultCategory::KubeSchedulerDelay => NodeKind::Deployment,
            FaultCategory::CodeDefect | FaultCategory::MemoryStress | FaultCategory::CpuContention => {
                NodeKind::Function
            }
        }
    }

    pub fn is_platform(self) -> bool {
        self.target_kind() != NodeKind::Function
    }

    pub fn is_metric(self) -> bool {
        matches!(self, FaultCategory::MemoryStress | FaultCategory::CpuContention)
    }
}

impl fmt::Display for FaultCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FaultCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown fault category `{s}`")))
    }
}

/// One fault to inject into one request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub category: FaultCategory,
    pub request_type: String,
    pub function: String,
    /// Multiplier applied to the perturbed channel.
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub name: String,
    /// Calling function; absent for the entry function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caller: Option<String>,
    pub latency_ms: f64,
    /// CPU usage as a fraction of the limit.
    pub cpu: f64,
    pub memory_mb: f64,
    /// App log lines only this function emits, on top of the shared
    /// function repertoire.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logs: Vec<LogLine>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestTypeSpec {
    pub name: String,
    /// Parameters carried by the entry span; they determine the request type.
    pub params: BTreeMap<String, String>,
    /// Call tree in caller-before-callee order.
    pub functions: Vec<FunctionSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformLatency {
    pub deployment_ms: f64,
    pub replicaset_ms: f64,
    pub pod_ms: f64,
    /// Sigma of the lognormal noise on creation-chain durations; container
    /// startup varies far more than function execution.
    pub sigma: f64,
}

impl Default for PlatformLatency {
    fn default() -> Self {
        PlatformLatency {
            deployment_ms: 4.0,
            replicaset_ms: 2.0,
            pod_ms: 25.0,
            sigma: 0.15,
        }
    }
}

impl PlatformLatency {
    pub fn of(&self, kind: NodeKind) -> Option<f64> {
        match kind {
            NodeKind::Deployment => Some(self.deployment_ms),
            NodeKind::Replicaset => Some(self.replicaset_ms),
            NodeKind::Pod => Some(self.pod_ms),
            NodeKind::Function => None,
        }
    }
}

/// A log line template. `{name}` expands to the function name and `{n}` to
/// a random integer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLine {
    pub stream: LogStream,
    pub message: String,
    /// Chance that a request emits this line.
    #[serde(default = "always", skip_serializing_if = "is_always")]
    pub probability: f64,
}

fn always() -> f64 {
    1.0
}

fn is_always(p: &f64) -> bool {
    *p == 1.0
}

fn line(stream: LogStream, message: &str) -> LogLine {
    sometimes(stream, message, 1.0)
}

fn sometimes(stream: LogStream, message: &str, probability: f64) -> LogLine {
    LogLine {
        stream,
        message: message.to_string(),
        probability,
    }
}

/// Log lines emitted by every node of a kind on each request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRepertoire {
    pub deployment: Vec<LogLine>,
    pub replicaset: Vec<LogLine>,
    pub pod: Vec<LogLine>,
    pub function: Vec<LogLine>,
}

impl Default for LogRepertoire {
    fn default() -> Self {
        use LogStream::{App, Audit, Event};
        LogRepertoire {
            deployment: vec![
                line(Audit, "audit get deployments {name} namespace default verb patch"),
                line(Event, "ScalingReplicaSet Scaled up replica set {name}-{n} to 1"),
                sometimes(Audit, "audit update deployments status {name} resourceVersion {n}", 0.5),
            ],
            replicaset: vec![
                line(Audit, "audit create replicasets {name}-{n} namespace default"),
                line(Event, "SuccessfulCreate Created pod {name}-{n}-{n}"),
                sometimes(Audit, "audit update replicasets status {name}-{n} observedGeneration {n}", 0.5),
            ],
            pod: vec![
                line(Audit, "audit create pods binding {name}-{n} node worker-{n}"),
                line(Event, "Scheduled Successfully assigned default/{name}-{n} to worker-{n}"),
                line(Event, "Pulled Container image already present on machine"),
                line(Event, "Created Created container {name}"),
                line(Event, "Started Started container {name}"),
            ],
            function: vec![
                line(App, "handling request {n} for {name}"),
                line(App, "request {n} completed with status 200 after {n} ms"),
            ],
        }
    }
}

impl LogRepertoire {
    pub fn of(&self, kind: NodeKind) -> &[LogLine] {
        match kind {
            NodeKind::Deployment => &self.deployment,
            NodeKind::Replicaset => &self.replicaset,
            NodeKind::Pod => &self.pod,
            NodeKind::Function => &self.function,
        }
    }
}

/// Multiplier ranges `[low, high]` drawn uniformly per injected fault.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultMagnitudes {
    /// Pod and replicaset failures: duration inflation of the failing node.
    pub component_failure: [f64; 2],
    /// Scheduler and kubelet delays.
    pub platform_delay: [f64; 2],
    /// Network failures: inflation of every span of the creation chain.
    pub network: [f64; 2],
    pub code_defect: [f64; 2],
    /// Memory stress and CPU contention.
    pub resource: [f64; 2],
}

impl Default for FaultMagnitudes {
    fn default() -> Self {
        FaultMagnitudes {
            component_failure: [3.0, 8.0],
            platform_delay: [5.0, 20.0],
            network: [3.0, 8.0],
            code_defect: [3.0, 10.0],
            resource: [3.0, 8.0],
        }
    }
}

impl FaultMagnitudes {
    pub fn range(&self, category: FaultCategory) -> [f64; 2] {
        match category {
            FaultCategory::PodFailure | FaultCategory::ReplicasetFailure => self.component_failure,
            FaultCategory::KubeSchedulerDelay | FaultCategory::KubeletDelay => self.platform_delay,
            FaultCategory::NetworkFailure => self.network,
            FaultCategory::CodeDefect => self.code_defect,
            FaultCategory::MemoryStress | FaultCategory::CpuContention => self.resource,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub n_normal_train: usize,
    pub n_normal_fit: usize,
    pub n_faulty: usize,
    /// Sigma of the multiplicative lognormal latency noise.
    pub latency_sigma: f64,
    /// Relative sigma of the Gaussian metric noise.
    pub metric_sigma: f64,
    pub platform_latency: PlatformLatency,
    pub request_types: Vec<RequestTypeSpec>,
    pub logs: LogRepertoire,
    pub magnitudes: FaultMagnitudes,
    /// Relative share of each fault category among faulty requests.
    pub fault_mix: BTreeMap<FaultCategory, f64>,
}

fn function(name: &str, caller: Option<&str>, latency_ms: f64, cpu: f64, memory_mb: f64) -> FunctionSpec {
    FunctionSpec {
        name: name.to_string(),
        caller: caller.map(str::to_string),
        latency_ms,
        cpu,
        memory_mb,
        logs: Vec::new(),
    }
}

/// A function with a variable, data-dependent app log stream.
fn chatty(mut f: FunctionSpec) -> FunctionSpec {
    use LogStream::App;
    f.logs = vec![
        sometimes(App, "query returned {n} rows from table {name} in {n} ms", 0.5),
        sometimes(App, "slow query warning full scan on {name} took {n} ms", 0.5),
        sometimes(App, "retrying downstream call attempt {n} of 3", 0.5),
        sometimes(App, "connection pool resized to {n} connections", 0.5),
        sometimes(App, "cache miss for key {n} loading from store", 0.5),
        sometimes(App, "feature flag evaluation took {n} us", 0.5),
    ];
    f
}

fn params(host: &str, target: &str) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("http.host".to_string(), host.to_string()),
        ("http.target".to_string(), target.to_string()),
    ])
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            seed: 7,
            n_normal_train: 500,
            n_normal_fit: 500,
            n_faulty: 400,
            latency_sigma: 0.1,
            metric_sigma: 0.05,
            platform_latency: PlatformLatency::default(),
            request_types: vec![
                RequestTypeSpec {
                    name: "query-orders".into(),
                    params: params("query-orders", "/api/orders"),
                    functions: vec![
                        function("order-gateway", None, 15.0, 0.20, 128.0),
                        function("order-service", Some("order-gateway"), 40.0, 0.35, 256.0),
                        function("inventory-service", Some("order-service"), 25.0, 0.25, 192.0),
                    ],
                },
                RequestTypeSpec {
                    name: "create-ticket".into(),
                    params: params("create-ticket", "/api/tickets"),
                    functions: vec![
                        function("ticket-gateway", None, 12.0, 0.15, 128.0),
                        function("auth-service", Some("ticket-gateway"), 8.0, 0.10, 96.0),
                        chatty(function("ticket-service", Some("ticket-gateway"), 50.0, 0.45, 320.0)),
                        function("notify-service", Some("ticket-service"), 20.0, 0.20, 128.0),
                    ],
                },
            ],
            logs: LogRepertoire::default(),
            magnitudes: FaultMagnitudes::default(),
            fault_mix: FaultCategory::ALL.iter().map(|&c| (c, 1.0)).collect(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1]) {
        return Err(Error::Config(format!("magnitude range {name} must satisfy 0 < low <= high, got {r:?}")));
    }
    Ok(())
}

fn check_probability(l: &LogLine) -> Result<()> {
    if !(0.0..=1.0).contains(&l.probability) {
        return Err(Error::Config(format!(
            "log `{}` has probability {} outside [0, 1]",
            l.message, l.probability
        )));
    }
    Ok(())
}

impl WorkloadSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: WorkloadSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn request_type(&self, name: &str) -> Option<&RequestTypeSpec> {
        self.request_types.iter().find(|t| t.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        for (name, v) in [("latency_sigma", self.latency_sigma), ("metric_sigma", self.metric_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        positive("platform_latency.deployment_ms", self.platform_latency.deployment_ms)?;
        positive("platform_latency.replicaset_ms", self.platform_latency.replicaset_ms)?;
        positive("platform_latency.pod_ms", self.platform_latency.pod_ms)?;
        if !(self.platform_latency.sigma.is_finite() && self.platform_latency.sigma >= 0.0) {
            return Err(Error::Config(format!(
                "platform_latency.sigma must be nonnegative, got {}",
                self.platform_latency.sigma
            )));
        }
        if self.request_types.is_empty() {
            return Err(Error::Config("at least one request type is required".into()));
        }
        let mut type_names = BTreeSet::new();
        for rt in &self.request_types {
            if !type_names.insert(&rt.name) {
                return Err(Error::Config(format!("duplicate request type `{}`", rt.name)));
            }
            if rt.params.is_empty() {
                return Err(Error::Config(format!("request type `{}` has no params", rt.name)));
            }
            if !(1..=6).contains(&rt.functions.len()) {
                return Err(Error::Config(format!(
                    "request type `{}` must have 1 to 6 functions, has {}",
                    rt.name,
                    rt.functions.len()
                )));
            }
            let mut seen = BTreeSet::new();
            for (i, f) in rt.functions.iter().enumerate() {
                let ctx = format!("function `{}` of `{}`", f.name, rt.name);
                if f.name.is_empty() || f.name.contains(char::is_whitespace) {
                    return Err(Error::Config(format!("{ctx}: name must be a non-empty word")));
                }
                if f.name.bytes().any(|b| b.is_ascii_digit()) {
                    return Err(Error::Config(format!("{ctx}: name must not contain digits")));
                }
                match (&f.caller, i) {
                    (None, 0) => {}
                    (None, _) => return Err(Error::Config(format!("{ctx}: only the first function may lack a caller"))),
                    (Some(_), 0) => return Err(Error::Config(format!("{ctx}: the entry function has no caller"))),
                    (Some(c), _) if !seen.contains(c) => {
                        return Err(Error::Config(format!("{ctx}: caller `{c}` must be listed earlier")))
                    }
                    _ => {}
                }
                if !seen.insert(&f.name) {
                    return Err(Error::Config(format!("{ctx}: duplicate function name")));
                }
                positive(&format!("{ctx}: latency_ms"), f.latency_ms)?;
                positive(&format!("{ctx}: cpu"), f.cpu)?;
                positive(&format!("{ctx}: memory_mb"), f.memory_mb)?;
                for l in &f.logs {
                    if l.stream != LogStream::App {
                        return Err(Error::Config(format!("{ctx}: function logs must use the app stream")));
                    }
                    check_probability(l)?;
                }
            }
        }
        for kind in NodeKind::ALL {
            for l in self.logs.of(kind) {
                let app = l.stream == LogStream::App;
                if app != (kind == NodeKind::Function) {
                    return Err(Error::Config(format!(
                        "{kind} log `{}` uses a stream that does not belong to that node kind",
                        l.message
                    )));
                }
                check_probability(l)?;
            }
        }
        let m = &self.magnitudes;
        check_range("component_failure", m.component_failure)?;
        check_range("platform_delay", m.platform_delay)?;
        check_range("network", m.network)?;
        check_range("code_defect", m.code_defect)?;
        check_range("resource", m.resource)?;
        if self.n_faulty > 0 {
            if self.fault_mix.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::Config("fault_mix weights must be nonnegative".into()));
            }
            if self.fault_mix.values().sum::<f64>() <= 0.0 {
                return Err(Error::Config("fault_mix must have a positive weight".into()));
            }
        }
        Ok(())
    }
}
