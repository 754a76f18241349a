//! Normal score patterns per request type and root cause ranking.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gat::GatAutoEncoder;
use crate::graph::GlobalCallGraph;
use crate::obs::{NodeKey, NodeKind};

pub const SIGMA_FLOOR: f64 = 1e-6;
const FINGERPRINT_PREFIX: &str = "# model_fingerprint=";

/// Score distribution of one node identity under one request type.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalPattern {
    pub request_type: String,
    pub node: NodeKey,
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormalPatternStore {
    /// SHA-256 of the model the scores came from.
    pub model_fingerprint: String,
    patterns: BTreeMap<String, BTreeMap<NodeKey, NormalPattern>>,
}

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn population_std(&self) -> f64 {
        (self.m2 / self.n as f64).max(0.0).sqrt()
    }
}

/// Reconstruction scores of every node of `graph`.
pub fn score_graph(model: &GatAutoEncoder, graph: &GlobalCallGraph) -> Result<Vec<f64>> {
    Ok(model.node_scores(&graph.x, &graph.neighborhoods())?.0)
}

/// Fit patterns from per-graph scores `(request_type, node keys, scores)`.
///
/// Every graph of a type must contain the same node identities.
pub fn fit_from_scores<'a, I>(scored: I, model_fingerprint: &str) -> Result<NormalPatternStore>
where
    I: IntoIterator<Item = (&'a str, &'a [NodeKey], &'a [f64])>,
{
    let mut acc: BTreeMap<String, BTreeMap<NodeKey, Welford>> = BTreeMap::new();
    for (request_type, keys, scores) in scored {
        if keys.len() != scores.len() {
            return Err(Error::shape("node scores", keys.len(), scores.len()));
        }
        let entry = acc.entry(request_type.to_string()).or_default();
        if !entry.is_empty() {
            let expected: BTreeSet<&NodeKey> = entry.keys().collect();
            let found: BTreeSet<&NodeKey> = keys.iter().collect();
            if expected != found {
                let odd = expected
                    .symmetric_difference(&found)
                    .next()
                    .map(|k| k.to_string())
                    .unwrap_or_default();
                return Err(Error::Invalid(format!(
                    "inconsistent topology within request type `{request_type}`: node `{odd}` \
                     is not present in every graph"
                )));
            }
        }
        for (key, &s) in keys.iter().zip(scores) {
            entry.entry(key.clone()).or_default().push(s);
        }
    }
    let patterns = acc
        .into_iter()
        .map(|(rt, nodes)| {
            let inner = nodes
                .into_iter()
                .map(|(node, w)| {
                    let p = NormalPattern {
                        request_type: rt.clone(),
                        node: node.clone(),
                        mu: w.mean,
                        sigma: w.population_std(),
                        n_samples: w.n,
                    };
                    (node, p)
                })
                .collect();
            (rt, inner)
        })
        .collect();
    Ok(NormalPatternStore {
        model_fingerprint: model_fingerprint.to_string(),
        patterns,
    })
}

/// Score fault-free graphs and fit one pattern per (request type, node).
pub fn fit_normal_patterns(
    model: &GatAutoEncoder,
    graphs: &[GlobalCallGraph],
    model_fingerprint: &str,
) -> Result<NormalPatternStore> {
    let mut scored = Vec::with_capacity(graphs.len());
    for g in graphs {
        if g.ground_truth.is_some() {
            return Err(Error::Invalid(format!(
                "trace `{}` is labeled faulty and cannot be used to fit normal patterns",
                g.trace_id
            )));
        }
        scored.push((g.request_type.as_str(), g.keys(), score_graph(model, g)?));
    }
    fit_from_scores(
        scored.iter().map(|(t, k, s)| (*t, k.as_slice(), s.as_slice())),
        model_fingerprint,
    )
}

/// `(score − μ) / max(σ, 1e-6)`.
pub fn zscore(score: f64, pattern: &NormalPattern) -> f64 {
    (score - pattern.mu) / pattern.sigma.max(SIGMA_FLOOR)
}

impl NormalPatternStore {
    pub fn get(&self, request_type: &str, node: &NodeKey) -> Option<&NormalPattern> {
        self.patterns.get(request_type)?.get(node)
    }

    pub fn contains_type(&self, request_type: &str) -> bool {
        self.patterns.contains_key(request_type)
    }

    pub fn request_types(&self) -> impl Iterator<Item = &str> {
        self.patterns.keys().map(String::as_str)
    }

    pub fn patterns(&self) -> impl Iterator<Item = &NormalPattern> {
        self.patterns.values().flat_map(|m| m.values())
    }

    pub fn len(&self) -> usize {
        self.patterns.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tab-separated records `request_type node_kind node_name mu sigma
    /// n_samples`, preceded by a fingerprint comment line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{FINGERPRINT_PREFIX}{}\n", self.model_fingerprint);
        for p in self.patterns() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:?}\t{:?}\t{}",
                p.request_type, p.node.node_kind, p.node.node_name, p.mu, p.sigma, p.n_samples
            );
        }
        out
    }

    pub fn from_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut store = NormalPatternStore::default();
        for (idx, line) in text.lines().enumerate() {
            let schema = |message: String| Error::Schema {
                path: origin.to_path_buf(),
                line: idx + 1,
                message,
            };
            if let Some(fp) = line.strip_prefix(FINGERPRINT_PREFIX) {
                store.model_fingerprint = fp.trim().to_string();
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(schema(format!("expected 6 tab-separated fields, found {}", fields.len())));
            }
            let kind = NodeKind::from_str(fields[1]).map_err(|e| schema(e.to_string()))?;
            let num = |i: usize, name: &str| -> Result<f64> {
                fields[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| schema(format!("{name} `{}` is not a finite number", fields[i])))
            };
            let mu = num(3, "mu")?;
            let sigma = num(4, "sigma")?;
            if sigma < 0.0 {
                return Err(schema("sigma must be nonnegative".into()));
            }
            let n_samples: usize = fields[5]
                .parse()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| schema(format!("n_samples `{}` must be a positive integer", fields[5])))?;
            let node = NodeKey::new(kind, fields[2]);
            let pattern = NormalPattern {
                request_type: fields[0].to_string(),
                node: node.clone(),
                mu,
                sigma,
                n_samples,
            };
            if store
                .patterns
                .entry(fields[0].to_string())
                .or_default()
                .insert(node, pattern)
                .is_some()
            {
                return Err(schema("duplicate pattern".into()));
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// z-score against the normal pattern of the request type.
    Faasrca,
    /// Raw reconstruction score.
    Direct,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Faasrca, Method::Direct];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Faasrca => "faasrca",
            Method::Direct => "direct",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "faasrca" => Ok(Method::Faasrca),
            "direct" => Ok(Method::Direct),
            other => Err(format!("unknown method `{other}` (expected faasrca or direct)")),
        }
    }
}

fn serialize_z<S: Serializer>(z: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if z.is_finite() {
        s.serialize_f64(*z)
    } else if *z > 0.0 {
        s.serialize_str("+inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedNode {
    pub node: NodeKey,
    /// z-score, or the raw score for [`Method::Direct`]. `+inf` marks a node
    /// with no normal pattern.
    #[serde(serialize_with = "serialize_z")]
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedRootCauses {
    pub trace_id: String,
    pub method: Method,
    pub ranking: Vec<RankedNode>,
}

impl RankedRootCauses {
    pub fn nodes(&self) -> Vec<NodeKey> {
        self.ranking.iter().map(|r| r.node.clone()).collect()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("ranking serializes")
    }
}

/// Descending by value, ties by node identity.
pub fn rank(trace_id: &str, method: Method, keys: Vec<NodeKey>, values: Vec<f64>) -> RankedRootCauses {
    let mut ranking: Vec<RankedNode> = keys
        .into_iter()
        .zip(values)
        .map(|(node, z)| RankedNode { node, z })
        .collect();
    ranking.sort_by(|a, b| {
        b.z.partial_cmp(&a.z)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.node.cmp(&b.node))
    });
    RankedRootCauses {
        trace_id: trace_id.to_string(),
        method,
        ranking,
    }
}

/// z-scores of precomputed node scores against the store.
pub fn zscores(
    store: &NormalPatternStore,
    graph: &GlobalCallGraph,
    scores: &[f64],
) -> Result<Vec<f64>> {
    if !store.contains_type(&graph.request_type) {
        return Err(Error::UnknownRequestType(graph.request_type.clone()));
    }
    Ok(graph
        .nodes
        .iter()
        .zip(scores)
        .map(|(n, &s)| match store.get(&graph.request_type, &n.key()) {
            Some(p) => zscore(s, p),
            None => f64::INFINITY,
        })
        .collect())
}

pub fn localize(
    model: &GatAutoEncoder,
    store: &NormalPatternStore,
    graph: &GlobalCallGraph,
) -> Result<RankedRootCauses> {
    if !store.contains_type(&graph.request_type) {
        return Err(Error::UnknownRequestType(graph.request_type.clone()));
    }
    let scores = score_graph(model, graph)?;
    let z = zscores(store, graph, &scores)?;
    Ok(rank(&graph.trace_id, Method::Faasrca, graph.keys(), z))
}

pub fn localize_direct(model: &GatAutoEncoder, graph: &GlobalCallGraph) -> Result<RankedRootCauses> {
    let scores = score_graph(model, graph)?;
    Ok(rank(&graph.trace_id, Method::Direct, graph.keys(), scores))
}
