//! On-disk dataset layout.
//!
//! ```text
//! <root>/normal/train/<trace_id>.{spans,logs,metrics}.jsonl
//! <root>/normal/fit/<trace_id>.{spans,logs,metrics}.jsonl
//! <root>/faulty/<trace_id>.{spans,logs,metrics}.jsonl
//! <root>/faulty/labels.jsonl
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::jsonl::{parse_file, write_file};
use super::{group_into_bundles, LogRecord, MetricSample, NodeKey, RequestBundle, Span};
use crate::error::{Error, Result};

pub const NORMAL_TRAIN_DIR: &str = "normal/train";
pub const NORMAL_FIT_DIR: &str = "normal/fit";
pub const FAULTY_DIR: &str = "faulty";
pub const LABELS_FILE: &str = "labels.jsonl";

const SPANS_SUFFIX: &str = ".spans.jsonl";
const LOGS_SUFFIX: &str = ".logs.jsonl";
const METRICS_SUFFIX: &str = ".metrics.jsonl";

/// One line of `faulty/labels.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub trace_id: String,
    pub root_causes: Vec<NodeKey>,
    /// Injected fault category, when the dataset was produced by the simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl super::jsonl::Validate for LabelRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.root_causes.is_empty() {
            return Err(format!("label for `{}` has no root causes", self.trace_id));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<RequestBundle>,
    pub fit: Vec<RequestBundle>,
    pub faulty: Vec<RequestBundle>,
    pub labels: Vec<LabelRecord>,
}

impl Dataset {
    pub fn read(root: &Path) -> Result<Self> {
        let faulty_dir = root.join(FAULTY_DIR);
        let labels = read_labels(&faulty_dir.join(LABELS_FILE))?;
        Ok(Dataset {
            train: read_bundle_dir(&root.join(NORMAL_TRAIN_DIR))?,
            fit: read_bundle_dir(&root.join(NORMAL_FIT_DIR))?,
            faulty: read_labeled_dir(&faulty_dir, &labels)?,
            labels,
        })
    }
}

/// Trace ids present in `dir`, one per `<trace_id>.spans.jsonl`, sorted.
pub fn trace_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut spans = BTreeSet::new();
    let mut telemetry = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(SPANS_SUFFIX) {
            spans.insert(id.to_string());
        } else if let Some(id) = name
            .strip_suffix(LOGS_SUFFIX)
            .or_else(|| name.strip_suffix(METRICS_SUFFIX))
        {
            telemetry.insert(id.to_string());
        }
    }
    if let Some(orphan) = telemetry.difference(&spans).next() {
        return Err(Error::DanglingTelemetry {
            trace_id: orphan.clone(),
            kind: "telemetry file",
        });
    }
    Ok(spans.into_iter().collect())
}

/// Load one trace's files. Log and metric files are optional.
pub fn read_bundle(dir: &Path, trace_id: &str) -> Result<RequestBundle> {
    let spans: Vec<Span> = parse_file(&dir.join(format!("{trace_id}{SPANS_SUFFIX}")))?;
    let logs: Vec<LogRecord> = parse_optional(&dir.join(format!("{trace_id}{LOGS_SUFFIX}")))?;
    let metrics: Vec<MetricSample> =
        parse_optional(&dir.join(format!("{trace_id}{METRICS_SUFFIX}")))?;
    let mut bundles = group_into_bundles(spans, logs, metrics)?;
    match bundles.len() {
        1 if bundles[0].trace_id == trace_id => Ok(bundles.remove(0)),
        0 => Err(Error::Invalid(format!("trace file `{trace_id}` contains no spans"))),
        _ => Err(Error::Invalid(format!(
            "trace files for `{trace_id}` contain records of other traces"
        ))),
    }
}

fn parse_optional<T>(path: &Path) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned + super::jsonl::Validate,
{
    if path.exists() {
        parse_file(path)
    } else {
        Ok(Vec::new())
    }
}

pub fn read_bundle_dir(dir: &Path) -> Result<Vec<RequestBundle>> {
    trace_ids(dir)?
        .iter()
        .map(|id| read_bundle(dir, id))
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    parse_file(path)
}

/// Read a directory of faulty traces and attach their labels. Every trace
/// must be labeled and every label must name a present trace.
pub fn read_labeled_dir(dir: &Path, labels: &[LabelRecord]) -> Result<Vec<RequestBundle>> {
    let mut by_id: BTreeMap<&str, &LabelRecord> = BTreeMap::new();
    for label in labels {
        if by_id.insert(label.trace_id.as_str(), label).is_some() {
            return Err(Error::Invalid(format!(
                "duplicate label for trace `{}`",
                label.trace_id
            )));
        }
    }
    let mut bundles = read_bundle_dir(dir)?;
    for bundle in &mut bundles {
        let label = by_id.remove(bundle.trace_id.as_str()).ok_or_else(|| {
            Error::Invalid(format!("faulty trace `{}` has no label", bundle.trace_id))
        })?;
        bundle.ground_truth = Some(label.root_causes.clone());
    }
    if let Some(id) = by_id.keys().next() {
        return Err(Error::DanglingTelemetry {
            trace_id: id.to_string(),
            kind: "label",
        });
    }
    Ok(bundles)
}

/// Write bundles as per-trace files under `dir`, creating it if needed.
pub fn write_bundle_dir(dir: &Path, bundles: &[RequestBundle]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for bundle in bundles {
        let id = &bundle.trace_id;
        write_file(&dir.join(format!("{id}{SPANS_SUFFIX}")), &bundle.spans)?;
        write_file(&dir.join(format!("{id}{LOGS_SUFFIX}")), &bundle.logs)?;
        write_file(&dir.join(format!("{id}{METRICS_SUFFIX}")), &bundle.metrics)?;
    }
    Ok(())
}

pub fn write_labels(path: &Path, labels: &[LabelRecord]) -> Result<()> {
    write_file(path, labels)
}

/// Resolve a directory of traces for analysis: `<root>/faulty` when `root` is
/// a dataset root, otherwise `root` itself.
pub fn analysis_dir(root: &Path) -> PathBuf {
    let faulty = root.join(FAULTY_DIR);
    if faulty.is_dir() {
        faulty
    } else {
        root.to_path_buf()
    }
}
