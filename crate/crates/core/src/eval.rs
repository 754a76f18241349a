//! Hit rate and NDCG over labeled faulty graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gat::GatAutoEncoder;
use crate::graph::GlobalCallGraph;
use crate::obs::NodeKey;
use crate::rca::{localize, localize_direct, Method, NormalPatternStore};

pub const ALL_TYPES: &str = "ALL";

/// 1 if any ground-truth node is within the first `k` entries, else 0.
/// `k` is clamped to the ranking length.
pub fn hr_at_k(ranking: &[NodeKey], truth: &BTreeSet<NodeKey>, k: usize) -> f64 {
    let k = k.min(ranking.len());
    if ranking[..k].iter().any(|n| truth.contains(n)) {
        1.0
    } else {
        0.0
    }
}

/// DCG@k over binary relevance divided by the ideal DCG, which places
/// `min(k, |truth|)` relevant items first.
pub fn ndcg_at_k(ranking: &[NodeKey], truth: &BTreeSet<NodeKey>, k: usize) -> f64 {
    let k = k.min(ranking.len());
    let gain = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg: f64 = ranking[..k]
        .iter()
        .enumerate()
        .filter(|(_, n)| truth.contains(n))
        .map(|(i, _)| gain(i))
        .sum();
    let idcg: f64 = (0..k.min(truth.len())).map(gain).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Per-graph metrics with `k = |truth|`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GraphMetrics {
    pub hr_k: f64,
    pub hr_k2: f64,
    pub ndcg_k: f64,
    pub ndcg_k2: f64,
}

pub fn graph_metrics(ranking: &[NodeKey], truth: &BTreeSet<NodeKey>) -> GraphMetrics {
    let k = truth.len();
    GraphMetrics {
        hr_k: hr_at_k(ranking, truth, k),
        hr_k2: hr_at_k(ranking, truth, k + 2),
        ndcg_k: ndcg_at_k(ranking, truth, k),
        ndcg_k2: ndcg_at_k(ranking, truth, k + 2),
    }
}

/// One report row; metric values are percentages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: Method,
    pub request_type: String,
    pub n: usize,
    pub hr_k: f64,
    pub hr_k2: f64,
    pub ndcg_k: f64,
    pub ndcg_k2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_graphs: usize,
    /// Per method: the `ALL` row first, then one row per request type.
    pub rows: Vec<MetricRow>,
}

/// One ranked graph awaiting aggregation.
#[derive(Clone, Debug)]
pub struct RankedCase {
    pub method: Method,
    pub request_type: String,
    pub ranking: Vec<NodeKey>,
    pub truth: BTreeSet<NodeKey>,
}

fn mean_row(method: Method, request_type: &str, metrics: &[GraphMetrics]) -> MetricRow {
    let n = metrics.len();
    let avg = |f: fn(&GraphMetrics) -> f64| 100.0 * metrics.iter().map(f).sum::<f64>() / n as f64;
    MetricRow {
        method,
        request_type: request_type.to_string(),
        n,
        hr_k: avg(|m| m.hr_k),
        hr_k2: avg(|m| m.hr_k2),
        ndcg_k: avg(|m| m.ndcg_k),
        ndcg_k2: avg(|m| m.ndcg_k2),
    }
}

/// Aggregate ranked cases into report rows, weighting graphs equally.
pub fn aggregate(cases: &[RankedCase]) -> EvalReport {
    let mut by_method: BTreeMap<Method, BTreeMap<&str, Vec<GraphMetrics>>> = BTreeMap::new();
    let mut all: BTreeMap<Method, Vec<GraphMetrics>> = BTreeMap::new();
    for c in cases {
        let m = graph_metrics(&c.ranking, &c.truth);
        by_method
            .entry(c.method)
            .or_default()
            .entry(c.request_type.as_str())
            .or_default()
            .push(m);
        all.entry(c.method).or_default().push(m);
    }
    let mut rows = Vec::new();
    for (method, types) in &by_method {
        rows.push(mean_row(*method, ALL_TYPES, &all[method]));
        for (rt, metrics) in types {
            rows.push(mean_row(*method, rt, metrics));
        }
    }
    let n_graphs = all.values().next().map_or(0, Vec::len);
    EvalReport { n_graphs, rows }
}

/// Rank every labeled graph with each method and aggregate.
pub fn evaluate(
    model: &GatAutoEncoder,
    store: &NormalPatternStore,
    graphs: &[GlobalCallGraph],
    methods: &[Method],
) -> Result<EvalReport> {
    let mut cases = Vec::with_capacity(graphs.len() * methods.len());
    for g in graphs {
        let truth = g.truth_keys().ok_or_else(|| {
            Error::Invalid(format!("trace `{}` has no ground-truth label", g.trace_id))
        })?;
        if truth.is_empty() {
            return Err(Error::Invalid(format!("trace `{}` has an empty label", g.trace_id)));
        }
        for &method in methods {
            let ranked = match method {
                Method::Faasrca => localize(model, store, g)?,
                Method::Direct => localize_direct(model, g)?,
            };
            cases.push(RankedCase {
                method,
                request_type: g.request_type.clone(),
                ranking: ranked.nodes(),
                truth: truth.clone(),
            });
        }
    }
    Ok(aggregate(&cases))
}

impl EvalReport {
    pub fn row(&self, method: Method, request_type: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.request_type == request_type)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,request_type,n,hr_k,hr_k2,ndcg_k,ndcg_k2\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.2},{:.2},{:.2},{:.2}",
                r.method.as_str(),
                csv_field(&r.request_type),
                r.n,
                r.hr_k,
                r.hr_k2,
                r.ndcg_k,
                r.ndcg_k2
            );
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let headers = ["method", "request_type", "n", "HR@k", "HR@k+2", "NDCG@k", "NDCG@k+2"];
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.as_str().to_string(),
                    r.request_type.clone(),
                    r.n.to_string(),
                    format!("{:.2}", r.hr_k),
                    format!("{:.2}", r.hr_k2),
                    format!("{:.2}", r.ndcg_k),
                    format!("{:.2}", r.ndcg_k2),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |fields: Vec<&str>| {
            let parts: Vec<String> = fields
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    if i < 2 {
                        format!("{f:<w$}", w = widths[i])
                    } else {
                        format!("{f:>w$}", w = widths[i])
                    }
                })
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(headers.to_vec());
        for row in &cells {
            line(row.iter().map(String::as_str).collect());
        }
        out
    }

    /// Long-form per-type values for charting: `request_type,metric,<method>...`.
    pub fn to_plot_csv(&self) -> String {
        let methods: BTreeSet<Method> = self.rows.iter().map(|r| r.method).collect();
        let types: BTreeSet<&str> = self
            .rows
            .iter()
            .map(|r| r.request_type.as_str())
            .filter(|t| *t != ALL_TYPES)
            .collect();
        let mut out = String::from("request_type,metric");
        for m in &methods {
            out.push(',');
            out.push_str(m.as_str());
        }
        out.push('\n');
        let metrics: [(&str, fn(&MetricRow) -> f64); 4] = [
            ("hr_k", |r| r.hr_k),
            ("hr_k2", |r| r.hr_k2),
            ("ndcg_k", |r| r.ndcg_k),
            ("ndcg_k2", |r| r.ndcg_k2),
        ];
        for t in types {
            for (name, get) in &metrics {
                let _ = write!(out, "{},{name}", csv_field(t));
                for m in &methods {
                    match self.row(*m, t) {
                        Some(r) => {
                            let _ = write!(out, ",{:.2}", get(r));
                        }
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
