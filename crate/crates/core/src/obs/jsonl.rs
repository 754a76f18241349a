//! Line-delimited JSON reading and writing for observability records.
//!
//! Every malformed line is a hard error carrying its 1-based line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{LogRecord, LogStream, MetricSample, NodeKind, Span};
use crate::error::{Error, Result};

/// Record-level invariants checked after deserialization.
pub trait Validate {
    fn validate(&self) -> std::result::Result<(), String>;
}

impl Validate for Span {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.trace_id.is_empty() || self.span_id.is_empty() {
            return Err("trace_id and span_id must be non-empty".into());
        }
        if self.node_name.is_empty() {
            return Err("node_name must be non-empty".into());
        }
        if self.node_kind.side() != self.side {
            return Err(format!(
                "node_kind `{}` is not valid on the {:?} side",
                self.node_kind, self.side
            ));
        }
        Ok(())
    }
}

impl Validate for LogRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.message.trim().is_empty() {
            return Err("message must be non-empty".into());
        }
        if let Some(kind) = self.node_kind {
            let app = self.stream == LogStream::App;
            if app != (kind == NodeKind::Function) {
                return Err(format!(
                    "stream `{:?}` cannot attach to a {kind} node",
                    self.stream
                ));
            }
        }
        Ok(())
    }
}

impl Validate for MetricSample {
    fn validate(&self) -> std::result::Result<(), String> {
        if !self.value.is_finite() {
            return Err("value must be finite".into());
        }
        if self.value < 0.0 {
            return Err(format!("negative value {}", self.value));
        }
        Ok(())
    }
}

/// Parse records from any reader. `origin` names the source in errors.
pub fn parse_reader<T, R>(reader: R, origin: &Path) -> Result<Vec<T>>
where
    T: DeserializeOwned + Validate,
    R: BufRead,
{
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| Error::Schema {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        let record: T = serde_json::from_str(&line).map_err(|e| schema_err(e.to_string()))?;
        record.validate().map_err(schema_err)?;
        out.push(record);
    }
    Ok(out)
}

pub fn parse_file<T>(path: &Path) -> Result<Vec<T>>
where
    T: DeserializeOwned + Validate,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(BufReader::new(file), path)
}

pub fn parse_spans(path: impl AsRef<Path>) -> Result<Vec<Span>> {
    parse_file(path.as_ref())
}

pub fn parse_logs(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    parse_file(path.as_ref())
}

pub fn parse_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricSample>> {
    parse_file(path.as_ref())
}

pub fn write_records<T: Serialize>(writer: &mut impl Write, records: &[T]) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut *writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_file<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_records(&mut writer, records)
        .and_then(|_| writer.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::MetricChannel;
    use proptest::prelude::*;

    fn parse<T: DeserializeOwned + Validate>(text: &str) -> Result<Vec<T>> {
        parse_reader(text.as_bytes(), Path::new("mem.jsonl"))
    }

    #[test]
    fn empty_input_yields_nothing() {
        assert!(parse::<Span>("").unwrap().is_empty());
        assert!(parse::<LogRecord>("").unwrap().is_empty());
        assert!(parse::<MetricSample>("").unwrap().is_empty());
    }

    #[test]
    fn maps_span_fields() {
        let spans: Vec<Span> = parse(
            r#"{"trace_id":"t1","span_id":"s1","side":"platform","node_kind":"pod","node_name":"fn-a","start_us":0,"duration_us":1200}"#,
        )
        .unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].duration_us, 1200);
        assert_eq!(spans[0].node_kind, NodeKind::Pod);
        assert_eq!(spans[0].parent_span_id, None);
    }

    #[test]
    fn missing_field_names_field_and_line() {
        let err = parse::<Span>(
            r#"{"trace_id":"t1","span_id":"s1","side":"platform","node_kind":"pod","node_name":"fn-a","start_us":0}"#,
        )
        .unwrap_err();
        match &err {
            Error::Schema { line, message, .. } => {
                assert_eq!(*line, 1);
                assert!(message.contains("duration_us"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = concat!(
            r#"{"trace_id":"t","node_name":"f","stream":"app","timestamp_us":1,"message":"ok"}"#,
            "\n{not json\n"
        );
        let err = parse::<LogRecord>(text).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 2, .. }));
    }

    #[test]
    fn event_log_line() {
        let logs: Vec<LogRecord> = parse(
            r#"{"trace_id":"t","node_name":"fn-a","stream":"event","timestamp_us":5,"message":"Created pod: fn-a-1"}"#,
        )
        .unwrap();
        assert_eq!(logs[0].stream, LogStream::Event);
    }

    #[test]
    fn negative_metric_rejected() {
        let err = parse::<MetricSample>(
            r#"{"trace_id":"t","node_name":"f","channel":"cpu","value":-1.0}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("negative value"), "{err}");
    }

    #[test]
    fn side_kind_mismatch_rejected() {
        let err = parse::<Span>(
            r#"{"trace_id":"t","span_id":"s","side":"application","node_kind":"pod","node_name":"f","start_us":0,"duration_us":1}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }));
    }

    fn arb_span() -> impl Strategy<Value = Span> {
        (
            "[a-f0-9]{1,12}",
            "[a-z0-9]{1,8}",
            proptest::option::of("[a-z0-9]{1,8}"),
            0usize..4,
            "[a-z][a-z-]{0,10}",
            any::<i64>(),
            any::<u64>(),
            proptest::collection::btree_map("[a-z.]{1,8}", "[ -~]{0,12}", 0..3),
        )
            .prop_map(|(trace_id, span_id, parent, kind, name, start, dur, params)| {
                let node_kind = NodeKind::ALL[kind];
                Span {
                    trace_id,
                    span_id,
                    parent_span_id: parent,
                    side: node_kind.side(),
                    node_kind,
                    node_name: name,
                    start_us: start,
                    duration_us: dur,
                    request_params: params,
                }
            })
    }

    proptest! {
        #[test]
        fn span_round_trip(spans in proptest::collection::vec(arb_span(), 0..8)) {
            let mut buf = Vec::new();
            write_records(&mut buf, &spans).unwrap();
            let back: Vec<Span> = parse_reader(buf.as_slice(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, spans);
        }

        #[test]
        fn metric_round_trip_is_bit_exact(values in proptest::collection::vec(0.0f64..1e12, 0..8)) {
            let samples: Vec<MetricSample> = values
                .iter()
                .map(|&value| MetricSample {
                    trace_id: "t".into(),
                    node_name: "f".into(),
                    channel: MetricChannel::Memory,
                    value,
                })
                .collect();
            let mut buf = Vec::new();
            write_records(&mut buf, &samples).unwrap();
            let back: Vec<MetricSample> = parse_reader(buf.as_slice(), Path::new("mem")).unwrap();
            for (a, b) in back.iter().zip(&samples) {
                prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
            }
        }
    }
}
