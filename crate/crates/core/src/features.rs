//! Bundle to attributed graph: topology plus one fused attribute row per node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_topology, classify_request, root_request_params, GlobalCallGraph, NodeIdentity,
    DEFAULT_CLASSIFICATION_KEYS,
};
use crate::linalg::Matrix;
use crate::logs::{embed_log_sequence, DrainConfig, TemplateStore};
use crate::obs::{LogStream, MetricChannel, NodeKey, NodeKind, RequestBundle};
use crate::scalar::{
    duration_ms, fuse_attributes, AttributeLayout, ScalarProjector, Standardizer, LATENCY_CHANNEL,
};

/// Population over which scalar standardizers are fitted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeScope {
    /// One mean and std per channel over all nodes.
    Channel,
    /// One per channel and node kind.
    Kind,
    /// One per channel and node identity; unseen nodes fall back to the
    /// channel statistics.
    #[default]
    Node,
}

impl StandardizeScope {
    fn key(self, channel: &str, node: &NodeKey) -> Option<String> {
        match self {
            StandardizeScope::Channel => None,
            StandardizeScope::Kind => Some(format!("{channel}/{}", node.node_kind)),
            StandardizeScope::Node => Some(format!("{channel}/{node}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub d_log: usize,
    /// Softmax width of each scalar projector.
    pub p: usize,
    /// Width of each metric and latency segment.
    pub d: usize,
    pub classification_keys: Vec<String>,
    pub drain: DrainConfig,
    pub standardize: StandardizeScope,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            d_log: 32,
            p: 16,
            d: 32,
            classification_keys: DEFAULT_CLASSIFICATION_KEYS.iter().map(|k| k.to_string()).collect(),
            drain: DrainConfig::default(),
            standardize: StandardizeScope::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_log < crate::logs::MIN_LOG_DIM {
            return Err(Error::Config(format!("d_log must be at least 8, got {}", self.d_log)));
        }
        if self.p < 2 {
            return Err(Error::Config(format!("p must be at least 2, got {}", self.p)));
        }
        if self.d < 8 {
            return Err(Error::Config(format!("d must be at least 8, got {}", self.d)));
        }
        if self.classification_keys.is_empty() {
            return Err(Error::Config("classification_keys must not be empty".into()));
        }
        self.drain.validate().map_err(Error::Config)
    }

    pub fn layout(&self) -> AttributeLayout {
        AttributeLayout::new(self.d_log, MetricChannel::ALL.to_vec(), self.d)
    }
}

/// Frozen state that turns bundles into graphs: template store, projectors
/// and their standardizers.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub config: FeatureConfig,
    pub layout: AttributeLayout,
    /// One projector per metric channel, in layout order.
    pub metric_projectors: Vec<ScalarProjector>,
    pub latency_projector: ScalarProjector,
    pub templates: TemplateStore,
    /// Standardizers below channel scope, keyed `<channel>/<scope>`.
    pub scoped_standardizers: BTreeMap<String, Standardizer>,
}

/// Durations of spans sharing a node identity are summed.
fn node_latencies(bundle: &RequestBundle) -> BTreeMap<NodeKey, u64> {
    let mut out: BTreeMap<NodeKey, u64> = BTreeMap::new();
    for span in &bundle.spans {
        *out.entry(span.node_key()).or_default() += span.duration_us;
    }
    out
}

fn log_slot(stream: LogStream) -> usize {
    match stream {
        LogStream::Audit => 0,
        LogStream::Event => 1,
        LogStream::App => 2,
    }
}

impl FeatureExtractor {
    /// Projectors with identity standardizers and an empty template store.
    pub fn new(config: FeatureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let metric_projectors = layout
            .metric_channels
            .iter()
            .map(|c| ScalarProjector::init(c.as_str(), config.p, config.d, seed))
            .collect();
        let latency_projector = ScalarProjector::init(LATENCY_CHANNEL, config.p, config.d, seed);
        let templates = TemplateStore::new(config.drain.clone());
        Ok(FeatureExtractor {
            config,
            layout,
            metric_projectors,
            latency_projector,
            templates,
            scoped_standardizers: BTreeMap::new(),
        })
    }

    /// Mine templates from every training log and fit the standardizers on
    /// the training values.
    pub fn fit(bundles: &[RequestBundle], config: FeatureConfig, seed: u64) -> Result<Self> {
        let mut fx = FeatureExtractor::new(config, seed)?;
        let scope = fx.config.standardize;
        let mut channel_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut scoped_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut record = |channel: &str, node: &NodeKey, value: f64| {
            channel_values.entry(channel.to_string()).or_default().push(value);
            if let Some(k) = scope.key(channel, node) {
                scoped_values.entry(k).or_default().push(value);
            }
        };
        for bundle in bundles {
            for log in &bundle.logs {
                fx.templates.mine(&log.message);
            }
            for m in &bundle.metrics {
                if fx.layout.metric_channels.contains(&m.channel) {
                    let node = NodeKey::new(NodeKind::Function, m.node_name.clone());
                    record(m.channel.as_str(), &node, m.value);
                }
            }
            for (node, us) in node_latencies(bundle) {
                record(LATENCY_CHANNEL, &node, duration_ms(us));
            }
        }
        for proj in fx.metric_projectors.iter_mut().chain(std::iter::once(&mut fx.latency_projector)) {
            let values = channel_values.get(&proj.channel_id).map_or(&[][..], Vec::as_slice);
            proj.standardizer = Standardizer::fit(values);
        }
        fx.scoped_standardizers = scoped_values
            .into_iter()
            .map(|(k, v)| (k, Standardizer::fit(&v)))
            .collect();
        Ok(fx)
    }

    /// Standardize `x` for `node` and project it.
    fn project(&self, proj: &ScalarProjector, node: &NodeKey, x: f64) -> Result<Vec<f64>> {
        let scoped = self
            .config
            .standardize
            .key(&proj.channel_id, node)
            .and_then(|k| self.scoped_standardizers.get(&k));
        match scoped {
            Some(st) if x.is_finite() => Ok(proj.project_standardized(st.apply(x))),
            _ => proj.project(x),
        }
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn request_type(&self, bundle: &RequestBundle) -> Result<String> {
        classify_request(root_request_params(&bundle.spans)?, &self.config.classification_keys)
    }

    /// Build the attributed graph of one request. Labels on the bundle become
    /// node indices.
    pub fn assemble(&self, bundle: &RequestBundle) -> Result<GlobalCallGraph> {
        let topology = build_topology(&bundle.spans)?;
        let request_type = self.request_type(bundle)?;
        let n = topology.nodes.len();
        let graph_err = |message: String| Error::Graph {
            trace_id: bundle.trace_id.clone(),
            message,
        };

        let mut messages: Vec<[Vec<&str>; 3]> = vec![Default::default(); n];
        for log in &bundle.logs {
            let key = log.node_key();
            let i = topology
                .index_of(&key)
                .ok_or_else(|| graph_err(format!("log record targets unknown node `{key}`")))?;
            messages[i][log_slot(log.stream)].push(&log.message);
        }

        let channels = &self.layout.metric_channels;
        let mut metrics: Vec<Vec<Option<f64>>> = vec![vec![None; channels.len()]; n];
        for m in &bundle.metrics {
            let key = NodeKey::new(NodeKind::Function, m.node_name.clone());
            let i = topology
                .index_of(&key)
                .ok_or_else(|| graph_err(format!("metric sample targets unknown node `{key}`")))?;
            let Some(c) = channels.iter().position(|c| *c == m.channel) else {
                continue;
            };
            if metrics[i][c].replace(m.value).is_some() {
                return Err(graph_err(format!(
                    "duplicate {} sample for `{key}`",
                    m.channel.as_str()
                )));
            }
        }

        let latencies = node_latencies(bundle);
        let zero_metric = vec![0.0; self.layout.d];
        let mut data = Vec::with_capacity(n * self.dim());
        for (i, key) in topology.nodes.iter().enumerate() {
            let logs: Vec<Vec<f64>> = LogStream::ALL
                .iter()
                .map(|&stream| {
                    embed_log_sequence(
                        messages[i][log_slot(stream)].iter().copied(),
                        stream,
                        self.layout.d_log,
                        &self.templates,
                    )
                    .values
                })
                .collect();
            let metric_vecs = metrics[i]
                .iter()
                .zip(&self.metric_projectors)
                .map(|(v, proj)| match v {
                    Some(x) => self.project(proj, key, *x),
                    None => Ok(zero_metric.clone()),
                })
                .collect::<Result<Vec<_>>>()?;
            let latency = self.project(
                &self.latency_projector,
                key,
                duration_ms(latencies.get(key).copied().unwrap_or(0)),
            )?;
            let metric_refs: Vec<&[f64]> = metric_vecs.iter().map(Vec::as_slice).collect();
            data.extend(fuse_attributes(
                &self.layout,
                [&logs[0], &logs[1], &logs[2]],
                &metric_refs,
                &latency,
            )?);
        }

        let nodes = topology.nodes.iter().map(NodeIdentity::from).collect();
        let graph = GlobalCallGraph::new(
            request_type,
            bundle.trace_id.clone(),
            nodes,
            topology.edges,
            Matrix::from_vec(n, self.dim(), data),
        )?;
        match &bundle.ground_truth {
            Some(labels) => graph.with_ground_truth(labels),
            None => Ok(graph),
        }
    }

    pub fn assemble_all(&self, bundles: &[RequestBundle]) -> Result<Vec<GlobalCallGraph>> {
        bundles.iter().map(|b| self.assemble(b)).collect()
    }
}

/// Zero every metric segment of `graph`'s attribute rows.
pub fn zero_metric_segments(graph: &mut GlobalCallGraph, layout: &AttributeLayout) {
    let range = layout.metrics_range();
    for i in 0..graph.len() {
        graph.x.row_mut(i)[range.clone()].fill(0.0);
    }
}
