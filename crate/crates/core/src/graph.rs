//! Global Call Graph construction.
//!
//! Each function contributes a platform creation chain
//! `deployment → replicaset → pod` and an application node. The pod hosts the
//! function (`pod(F) → F`), and a call `A → B` enters the callee's platform
//! side first (`A → deployment(B)`):
//!
//! ```text
//! dep(A) → rs(A) → pod(A) → A → dep(B) → rs(B) → pod(B) → B
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gat::Neighborhoods;
use crate::linalg::Matrix;
use crate::obs::{NodeKey, NodeKind, Side, Span};

pub const DEFAULT_CLASSIFICATION_KEYS: [&str; 3] = ["http.host", "http.target", "branch"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Creation,
    Execution,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeIdentity {
    pub side: Side,
    pub node_kind: NodeKind,
    pub node_name: String,
    pub stage: Stage,
}

impl NodeIdentity {
    pub fn new(node_kind: NodeKind, node_name: impl Into<String>) -> Self {
        let side = node_kind.side();
        NodeIdentity {
            side,
            node_kind,
            node_name: node_name.into(),
            stage: match side {
                Side::Platform => Stage::Creation,
                Side::Application => Stage::Execution,
            },
        }
    }

    pub fn key(&self) -> NodeKey {
        NodeKey::new(self.node_kind, self.node_name.clone())
    }
}

impl From<&NodeKey> for NodeIdentity {
    fn from(key: &NodeKey) -> Self {
        NodeIdentity::new(key.node_kind, key.node_name.clone())
    }
}

/// Node set and directed edges, before attributes are attached.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Topology {
    pub nodes: Vec<NodeKey>,
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    fn from_keyed(nodes: BTreeSet<(NodeKind, String)>, edges: BTreeSet<(NodeKey, NodeKey)>) -> Self {
        let nodes: Vec<NodeKey> = nodes.into_iter().map(|(k, n)| NodeKey::new(k, n)).collect();
        let index: HashMap<&NodeKey, usize> = nodes.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let mut edges: Vec<(usize, usize)> = edges
            .iter()
            .map(|(a, b)| (index[a], index[b]))
            .filter(|(a, b)| a != b)
            .collect();
        edges.sort_unstable();
        edges.dedup();
        Topology { nodes, edges }
    }

    pub fn index_of(&self, key: &NodeKey) -> Option<usize> {
        self.nodes.iter().position(|k| k == key)
    }

    pub fn is_weakly_connected(&self) -> bool {
        weakly_connected(self.nodes.len(), &self.edges)
    }
}

pub(crate) fn weakly_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == n
}

fn graph_err(spans: &[Span], message: String) -> Error {
    Error::Graph {
        trace_id: spans.first().map(|s| s.trace_id.clone()).unwrap_or_default(),
        message,
    }
}

/// Creation chains from the platform spans of one trace. Application spans
/// in the input are ignored.
pub fn build_platform_edges(spans: &[Span]) -> Result<Topology> {
    let mut chains: BTreeMap<&str, BTreeSet<NodeKind>> = BTreeMap::new();
    for span in spans.iter().filter(|s| s.side == Side::Platform) {
        chains.entry(&span.node_name).or_default().insert(span.node_kind);
    }
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for (name, kinds) in &chains {
        if let Some(missing) = NodeKind::PLATFORM_CHAIN.iter().find(|k| !kinds.contains(k)) {
            return Err(graph_err(
                spans,
                format!("function `{name}` has no {missing} in its creation chain"),
            ));
        }
        for pair in NodeKind::PLATFORM_CHAIN.windows(2) {
            edges.insert((NodeKey::new(pair[0], *name), NodeKey::new(pair[1], *name)));
        }
        for kind in NodeKind::PLATFORM_CHAIN {
            nodes.insert((kind, name.to_string()));
        }
    }
    Ok(Topology::from_keyed(nodes, edges))
}

/// Function call edges. A span's caller is its nearest application-side
/// ancestor, so platform spans may sit between caller and callee.
pub fn build_application_edges(spans: &[Span]) -> Result<Topology> {
    let by_id: HashMap<&str, &Span> = spans.iter().map(|s| (s.span_id.as_str(), s)).collect();
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for span in spans.iter().filter(|s| s.side == Side::Application) {
        nodes.insert((NodeKind::Function, span.node_name.clone()));
        if let Some(caller) = app_ancestor(span, &by_id, spans)? {
            edges.insert((
                NodeKey::new(NodeKind::Function, caller.node_name.clone()),
                NodeKey::new(NodeKind::Function, span.node_name.clone()),
            ));
        }
    }
    Ok(Topology::from_keyed(nodes, edges))
}

fn app_ancestor<'a>(
    span: &Span,
    by_id: &HashMap<&str, &'a Span>,
    spans: &[Span],
) -> Result<Option<&'a Span>> {
    let mut current = span.parent_span_id.as_deref();
    let mut hops = 0;
    while let Some(id) = current {
        let parent = by_id.get(id).ok_or_else(|| {
            graph_err(
                spans,
                format!("span `{}` references unknown parent `{id}`", span.span_id),
            )
        })?;
        if parent.side == Side::Application {
            return Ok(Some(parent));
        }
        hops += 1;
        if hops > spans.len() {
            return Err(graph_err(spans, format!("parent cycle above span `{}`", span.span_id)));
        }
        current = parent.parent_span_id.as_deref();
    }
    Ok(None)
}

/// Join the platform chains and the call graph on function names.
pub fn merge_global(platform: &Topology, application: &Topology) -> Result<Topology> {
    let err = |message: String| Error::Graph {
        trace_id: String::new(),
        message,
    };
    let platform_fns: BTreeSet<&str> = platform
        .nodes
        .iter()
        .filter(|k| k.node_kind == NodeKind::Pod)
        .map(|k| k.node_name.as_str())
        .collect();
    let app_fns: BTreeSet<&str> = application
        .nodes
        .iter()
        .map(|k| k.node_name.as_str())
        .collect();
    if let Some(f) = app_fns.difference(&platform_fns).next() {
        return Err(err(format!("function `{f}` has no platform creation chain")));
    }
    if let Some(f) = platform_fns.difference(&app_fns).next() {
        return Err(err(format!("platform chain `{f}` has no function span")));
    }

    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for topo in [platform, application] {
        for key in &topo.nodes {
            nodes.insert((key.node_kind, key.node_name.clone()));
        }
    }
    for &(a, b) in &platform.edges {
        edges.insert((platform.nodes[a].clone(), platform.nodes[b].clone()));
    }
    for f in &app_fns {
        edges.insert((NodeKey::new(NodeKind::Pod, *f), NodeKey::new(NodeKind::Function, *f)));
    }
    for &(a, b) in &application.edges {
        let callee = &application.nodes[b].node_name;
        edges.insert((
            application.nodes[a].clone(),
            NodeKey::new(NodeKind::Deployment, callee.clone()),
        ));
    }
    let merged = Topology::from_keyed(nodes, edges);
    if !merged.is_weakly_connected() {
        return Err(err("merged call graph is not connected".into()));
    }
    Ok(merged)
}

/// Canonical request type: the sorted `k=v` pairs of the classification keys
/// present in `params`, joined by `&`.
pub fn classify_request<K: AsRef<str>>(
    params: &BTreeMap<String, String>,
    keys: &[K],
) -> Result<String> {
    let mut pairs: Vec<String> = keys
        .iter()
        .filter_map(|k| params.get(k.as_ref()).map(|v| format!("{}={v}", k.as_ref())))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Unclassifiable {
            keys: keys.iter().map(|k| k.as_ref().to_string()).collect(),
        });
    }
    pairs.sort();
    pairs.dedup();
    Ok(pairs.join("&"))
}

/// Parameters of the request's entry span: the earliest application span
/// with no application-side ancestor.
pub fn root_request_params(spans: &[Span]) -> Result<&BTreeMap<String, String>> {
    let by_id: HashMap<&str, &Span> = spans.iter().map(|s| (s.span_id.as_str(), s)).collect();
    let mut best: Option<&Span> = None;
    for span in spans.iter().filter(|s| s.side == Side::Application) {
        if app_ancestor(span, &by_id, spans)?.is_none() {
            let earlier = best.is_none_or(|b| (span.start_us, &span.span_id) < (b.start_us, &b.span_id));
            if earlier {
                best = Some(span);
            }
        }
    }
    best.map(|s| &s.request_params)
        .ok_or_else(|| graph_err(spans, "trace has no application entry span".into()))
}

/// One request's attributed call graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalCallGraph {
    pub request_type: String,
    pub trace_id: String,
    pub nodes: Vec<NodeIdentity>,
    pub edges: Vec<(usize, usize)>,
    /// `|V| × D` attribute matrix, row `i` belongs to `nodes[i]`.
    pub x: Matrix,
    pub ground_truth: Option<Vec<usize>>,
}

impl GlobalCallGraph {
    pub fn new(
        request_type: String,
        trace_id: String,
        nodes: Vec<NodeIdentity>,
        edges: Vec<(usize, usize)>,
        x: Matrix,
    ) -> Result<Self> {
        let n = nodes.len();
        let fail = |message: String| Error::Graph {
            trace_id: trace_id.clone(),
            message,
        };
        if x.rows() != n {
            return Err(fail(format!("{} attribute rows for {n} nodes", x.rows())));
        }
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
            return Err(fail(format!("invalid edge ({a}, {b})")));
        }
        let keys: BTreeSet<NodeKey> = nodes.iter().map(NodeIdentity::key).collect();
        if keys.len() != n {
            return Err(fail("duplicate node identity".into()));
        }
        if !weakly_connected(n, &edges) {
            return Err(fail("graph is not connected".into()));
        }
        Ok(GlobalCallGraph {
            request_type,
            trace_id,
            nodes,
            edges,
            x,
            ground_truth: None,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn keys(&self) -> Vec<NodeKey> {
        self.nodes.iter().map(NodeIdentity::key).collect()
    }

    pub fn index_of(&self, key: &NodeKey) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.node_kind == key.node_kind && n.node_name == key.node_name)
    }

    /// Attach root cause labels, resolving each to a node index.
    pub fn with_ground_truth(mut self, labels: &[NodeKey]) -> Result<Self> {
        let mut idx = Vec::with_capacity(labels.len());
        for key in labels {
            let i = self.index_of(key).ok_or_else(|| Error::Graph {
                trace_id: self.trace_id.clone(),
                message: format!("ground-truth node `{key}` is not in the graph"),
            })?;
            idx.push(i);
        }
        idx.sort_unstable();
        idx.dedup();
        self.ground_truth = Some(idx);
        Ok(self)
    }

    pub fn truth_keys(&self) -> Option<BTreeSet<NodeKey>> {
        self.ground_truth
            .as_ref()
            .map(|idx| idx.iter().map(|&i| self.nodes[i].key()).collect())
    }

    pub fn neighborhoods(&self) -> Neighborhoods {
        Neighborhoods::from_edges(self.len(), &self.edges)
    }

    /// Tab-separated node table followed by the edge list.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# trace {}\trequest_type {}\n", self.trace_id, self.request_type);
        out.push_str("# nodes: index side node_kind node_name stage\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let side = match n.side {
                Side::Platform => "platform",
                Side::Application => "application",
            };
            let stage = match n.stage {
                Stage::Creation => "creation",
                Stage::Execution => "execution",
            };
            let _ = writeln!(out, "{i}\t{side}\t{}\t{}\t{stage}", n.node_kind, n.node_name);
        }
        out.push_str("# edges: src dst\n");
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a}\t{b}");
        }
        out
    }
}

/// Build topology for the spans of one trace and return it with node
/// identities in canonical order.
pub fn build_topology(spans: &[Span]) -> Result<Topology> {
    let platform = build_platform_edges(spans)?;
    let application = build_application_edges(spans)?;
    merge_global(&platform, &application).map_err(|e| match e {
        Error::Graph { message, .. } => graph_err(spans, message),
        other => other,
    })
}
