use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{FaultCategory, FaultSpec, LogLine, WorkloadSpec};
use crate::artifact::sha256_hex;
use crate::error::{Error, Result};
use crate::obs::dataset::{
    write_bundle_dir, write_labels, LabelRecord, FAULTY_DIR, LABELS_FILE, NORMAL_FIT_DIR,
    NORMAL_TRAIN_DIR,
};
use crate::obs::{LogRecord, LogStream, MetricChannel, MetricSample, NodeKey, NodeKind, RequestBundle, Span};
use crate::rng::keyed_rng;

pub const MANIFEST_FILE: &str = "manifest.json";
const BYTES_PER_MB: f64 = 1024.0 * 1024.0;
/// Offset between a caller's start and its callee's creation chain.
const CALL_OFFSET_US: i64 = 500;

fn expand(template: &str, name: &str, rng: &mut ChaCha20Rng) -> String {
    let with_name = template.replace("{name}", name);
    let mut out = String::with_capacity(with_name.len());
    let mut parts = with_name.split("{n}");
    out.push_str(parts.next().unwrap_or_default());
    for part in parts {
        out.push_str(&rng.random_range(1..100_000u32).to_string());
        out.push_str(part);
    }
    out
}

fn span_id(trace_id: &str, name: &str, kind: NodeKind) -> String {
    format!("{trace_id}-{name}-{kind}")
}

fn noisy_duration_us(base_ms: f64, noise: &LogNormal<f64>, rng: &mut ChaCha20Rng) -> u64 {
    ((base_ms * 1000.0 * noise.sample(rng)).round() as u64).max(1)
}

/// One fault-free request of type `type_index`.
pub fn normal_bundle(spec: &WorkloadSpec, type_index: usize, trace_id: &str, rng: &mut ChaCha20Rng) -> RequestBundle {
    let rt = &spec.request_types[type_index];
    let latency_noise = LogNormal::new(0.0, spec.latency_sigma).expect("validated sigma");
    let platform_noise = LogNormal::new(0.0, spec.platform_latency.sigma).expect("validated sigma");
    let metric_noise = Normal::new(0.0, spec.metric_sigma).expect("validated sigma");
    let mut bundle = RequestBundle::new(trace_id);
    let mut function_start: BTreeMap<&str, i64> = BTreeMap::new();

    for f in &rt.functions {
        let mut start = match &f.caller {
            Some(c) => function_start[c.as_str()] + CALL_OFFSET_US,
            None => 0,
        };
        let mut parent = f.caller.as_ref().map(|c| span_id(trace_id, c, NodeKind::Function));
        for kind in NodeKind::ALL {
            let duration_us = match spec.platform_latency.of(kind) {
                Some(base) => noisy_duration_us(base, &platform_noise, rng),
                None => noisy_duration_us(f.latency_ms, &latency_noise, rng),
            };
            let id = span_id(trace_id, &f.name, kind);
            let request_params = if kind == NodeKind::Function && f.caller.is_none() {
                rt.params.clone()
            } else {
                BTreeMap::new()
            };
            if kind == NodeKind::Function {
                function_start.insert(&f.name, start);
            }
            bundle.spans.push(Span {
                trace_id: trace_id.to_string(),
                span_id: id.clone(),
                parent_span_id: parent.take(),
                side: kind.side(),
                node_kind: kind,
                node_name: f.name.clone(),
                start_us: start,
                duration_us,
                request_params,
            });
            let own: &[LogLine] = if kind == NodeKind::Function { &f.logs } else { &[] };
            for line in spec.logs.of(kind).iter().chain(own) {
                if line.probability < 1.0 && !rng.random_bool(line.probability) {
                    continue;
                }
                bundle.logs.push(LogRecord {
                    trace_id: trace_id.to_string(),
                    node_name: f.name.clone(),
                    node_kind: Some(kind),
                    stream: line.stream,
                    timestamp_us: start,
                    message: expand(&line.message, &f.name, rng),
                });
            }
            parent = Some(id);
            start += duration_us as i64;
        }
        for (channel, base) in [
            (MetricChannel::Cpu, f.cpu),
            (MetricChannel::Memory, f.memory_mb * BYTES_PER_MB),
        ] {
            let value = (base * (1.0 + metric_noise.sample(rng))).max(0.0);
            bundle.metrics.push(MetricSample {
                trace_id: trace_id.to_string(),
                node_name: f.name.clone(),
                channel,
                value,
            });
        }
    }
    bundle
}

/// `n` fault-free requests with trace ids `<split>-000000`, ...
pub fn generate_normal(spec: &WorkloadSpec, split: &str, n: usize) -> Vec<RequestBundle> {
    (0..n)
        .map(|i| {
            let mut rng = keyed_rng(spec.seed, &format!("{split}/{i}"));
            let type_index = rng.random_range(0..spec.request_types.len());
            normal_bundle(spec, type_index, &format!("{split}-{i:06}"), &mut rng)
        })
        .collect()
}

fn fault_logs(category: FaultCategory) -> Vec<(NodeKind, LogLine)> {
    let event = |kind, message: &str| {
        (
            kind,
            LogLine {
                stream: LogStream::Event,
                message: message.to_string(),
                probability: 1.0,
            },
        )
    };
    match category {
        FaultCategory::PodFailure => vec![
            event(NodeKind::Pod, "BackOff Back-off restarting failed container {name} in pod {name}-{n}"),
            event(NodeKind::Pod, "Failed Error container terminated with exit code {n} reason OOMKilled"),
        ],
        FaultCategory::ReplicasetFailure => vec![event(
            NodeKind::Replicaset,
            "FailedCreate Error creating pod {name}-{n} forbidden exceeded quota limits",
        )],
        FaultCategory::KubeSchedulerDelay => vec![event(
            NodeKind::Deployment,
            "FailedScheduling {n}/{n} nodes are available insufficient cpu preemption pending",
        )],
        FaultCategory::KubeletDelay => vec![event(
            NodeKind::Pod,
            "SyncLoop kubelet delayed pod sync for {name}-{n} by {n} ms",
        )],
        FaultCategory::NetworkFailure => vec![
            event(NodeKind::Pod, "Failed Failed to pull image {name} dial tcp {n} i/o timeout"),
            event(NodeKind::Pod, "ErrImagePull image pull failed network unreachable"),
        ],
        FaultCategory::CodeDefect | FaultCategory::MemoryStress | FaultCategory::CpuContention => Vec::new(),
    }
}

/// Node kinds whose span durations a category inflates.
fn inflated_kinds(category: FaultCategory) -> &'static [NodeKind] {
    match category {
        FaultCategory::PodFailure | FaultCategory::KubeletDelay => &[NodeKind::Pod],
        FaultCategory::ReplicasetFailure => &[NodeKind::Replicaset],
        FaultCategory::KubeSchedulerDelay => &[NodeKind::Deployment],
        FaultCategory::NetworkFailure => &NodeKind::PLATFORM_CHAIN,
        FaultCategory::CodeDefect => &[NodeKind::Function],
        FaultCategory::MemoryStress | FaultCategory::CpuContention => &[],
    }
}

/// Perturb a normal request per the fault's category and label the
/// affected node.
pub fn inject_fault(
    bundle: &RequestBundle,
    fault: &FaultSpec,
    spec: &WorkloadSpec,
    rng: &mut ChaCha20Rng,
) -> Result<RequestBundle> {
    let rt = spec
        .request_type(&fault.request_type)
        .ok_or_else(|| Error::Invalid(format!("unknown request type `{}`", fault.request_type)))?;
    if !rt.functions.iter().any(|f| f.name == fault.function) {
        return Err(Error::Invalid(format!(
            "function `{}` is not part of request type `{}`",
            fault.function, fault.request_type
        )));
    }
    let present = |kind: NodeKind| {
        bundle
            .spans
            .iter()
            .any(|s| s.node_kind == kind && s.node_name == fault.function)
    };
    if !NodeKind::ALL.into_iter().all(present) {
        return Err(Error::Invalid(format!(
            "trace `{}` has no spans for target `{}`",
            bundle.trace_id, fault.function
        )));
    }
    if !(fault.magnitude.is_finite() && fault.magnitude > 0.0) {
        return Err(Error::Invalid(format!("fault magnitude {} must be positive", fault.magnitude)));
    }

    let mut out = bundle.clone();
    let kinds = inflated_kinds(fault.category);
    for span in out.spans.iter_mut() {
        if span.node_name == fault.function && kinds.contains(&span.node_kind) {
            span.duration_us = ((span.duration_us as f64) * fault.magnitude).round() as u64;
        }
    }
    let channel = match fault.category {
        FaultCategory::MemoryStress => Some(MetricChannel::Memory),
        FaultCategory::CpuContention => Some(MetricChannel::Cpu),
        _ => None,
    };
    if let Some(channel) = channel {
        for m in out.metrics.iter_mut() {
            if m.node_name == fault.function && m.channel == channel {
                m.value *= fault.magnitude;
            }
        }
    }
    for (kind, line) in fault_logs(fault.category) {
        let timestamp_us = out
            .spans
            .iter()
            .find(|s| s.node_kind == kind && s.node_name == fault.function)
            .map_or(0, |s| s.start_us);
        out.logs.push(LogRecord {
            trace_id: out.trace_id.clone(),
            node_name: fault.function.clone(),
            node_kind: Some(kind),
            stream: line.stream,
            timestamp_us,
            message: expand(&line.message, &fault.function, rng),
        });
    }
    out.ground_truth = Some(vec![NodeKey::new(fault.category.target_kind(), fault.function.clone())]);
    Ok(out)
}

/// Split `n` into per-category counts proportional to the mix (largest
/// remainder, ties by category order).
fn allocate(mix: &BTreeMap<FaultCategory, f64>, n: usize) -> Vec<(FaultCategory, usize)> {
    let total: f64 = mix.values().sum();
    let mut shares: Vec<(FaultCategory, usize, f64)> = mix
        .iter()
        .map(|(&c, &w)| {
            let exact = n as f64 * w / total;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = shares.iter().map(|s| s.1).sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].2.total_cmp(&shares[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        shares[i].1 += 1;
    }
    shares.into_iter().map(|(c, k, _)| (c, k)).collect()
}

/// Categories, targets and magnitudes of every faulty request.
pub fn plan_faults(spec: &WorkloadSpec) -> Vec<FaultSpec> {
    let mut categories: Vec<FaultCategory> = allocate(&spec.fault_mix, spec.n_faulty)
        .into_iter()
        .flat_map(|(c, k)| std::iter::repeat_n(c, k))
        .collect();
    let mut rng = keyed_rng(spec.seed, "faults/plan");
    categories.shuffle(&mut rng);
    categories
        .into_iter()
        .map(|category| {
            let rt = &spec.request_types[rng.random_range(0..spec.request_types.len())];
            let f = &rt.functions[rng.random_range(0..rt.functions.len())];
            let [lo, hi] = spec.magnitudes.range(category);
            FaultSpec {
                category,
                request_type: rt.name.clone(),
                function: f.name.clone(),
                magnitude: rng.random_range(lo..=hi),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub spec_sha256: String,
    pub n_normal_train: usize,
    pub n_normal_fit: usize,
    pub n_faulty: usize,
    pub category_counts: BTreeMap<String, usize>,
    pub spec: WorkloadSpec,
}

/// Faulty requests and their labels.
pub fn generate_faulty(spec: &WorkloadSpec) -> Result<(Vec<RequestBundle>, Vec<LabelRecord>)> {
    let mut bundles = Vec::with_capacity(spec.n_faulty);
    let mut labels = Vec::with_capacity(spec.n_faulty);
    for (i, fault) in plan_faults(spec).iter().enumerate() {
        let mut rng = keyed_rng(spec.seed, &format!("faulty/{i}"));
        let type_index = spec
            .request_types
            .iter()
            .position(|t| t.name == fault.request_type)
            .expect("planned from spec");
        let base = normal_bundle(spec, type_index, &format!("faulty-{i:06}"), &mut rng);
        let faulty = inject_fault(&base, fault, spec, &mut rng)?;
        labels.push(LabelRecord {
            trace_id: faulty.trace_id.clone(),
            root_causes: faulty.ground_truth.clone().unwrap_or_default(),
            category: Some(fault.category.as_str().to_string()),
        });
        bundles.push(faulty);
    }
    Ok((bundles, labels))
}

/// Write a complete dataset under `out_dir`. An existing directory must be
/// empty or hold a previously generated dataset, whose splits are replaced.
pub fn generate_dataset(spec: &WorkloadSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    if out_dir.exists() {
        let mut entries = fs::read_dir(out_dir).map_err(|e| Error::io(out_dir, e))?;
        if entries.next().is_some() && !out_dir.join(MANIFEST_FILE).is_file() {
            return Err(Error::Invalid(format!(
                "`{}` is not empty and holds no generated dataset; refusing to overwrite",
                out_dir.display()
            )));
        }
        for sub in ["normal", FAULTY_DIR] {
            let p = out_dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    let train = generate_normal(spec, "train", spec.n_normal_train);
    let fit = generate_normal(spec, "fit", spec.n_normal_fit);
    let (faulty, labels) = generate_faulty(spec)?;
    write_bundle_dir(&out_dir.join(NORMAL_TRAIN_DIR), &train)?;
    write_bundle_dir(&out_dir.join(NORMAL_FIT_DIR), &fit)?;
    let faulty_dir = out_dir.join(FAULTY_DIR);
    write_bundle_dir(&faulty_dir, &faulty)?;
    write_labels(&faulty_dir.join(LABELS_FILE), &labels)?;

    let mut category_counts = BTreeMap::new();
    for l in &labels {
        *category_counts.entry(l.category.clone().unwrap_or_default()).or_insert(0) += 1;
    }
    let manifest = Manifest {
        seed: spec.seed,
        spec_sha256: spec_hash(spec),
        n_normal_train: train.len(),
        n_normal_fit: fit.len(),
        n_faulty: faulty.len(),
        category_counts,
        spec: spec.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    json.push('\n');
    crate::io::write_atomic(&out_dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

pub fn spec_hash(spec: &WorkloadSpec) -> String {
    sha256_hex(&serde_json::to_vec(spec).expect("spec serializes"))
}
