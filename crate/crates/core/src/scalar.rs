//! Scalar telemetry to vectors, and fusion of all channels into node rows.
//!
//! A scalar `x` is standardized, lifted to `p` logits by a frozen random
//! affine map, squashed with softmax, and used to weight the `p` rows of a
//! frozen random `p × d` embedding table.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{softmax, Matrix};
use crate::obs::MetricChannel;
use crate::rng::keyed_rng;

pub const STD_FLOOR: f64 = 1e-6;
pub const LATENCY_CHANNEL: &str = "latency";

/// Mean and population standard deviation of a raw channel over training data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Default for Standardizer {
    fn default() -> Self {
        Standardizer { mean: 0.0, std: 1.0 }
    }
}

impl Standardizer {
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Standardizer::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Standardizer {
            mean,
            std: var.sqrt(),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std.max(STD_FLOOR)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarProjector {
    pub channel_id: String,
    /// `W`, length `p`.
    pub weights: Vec<f64>,
    /// `b`, length `p`.
    pub bias: Vec<f64>,
    /// `E_s`, `p × d`.
    pub table: Matrix,
    pub standardizer: Standardizer,
}

impl ScalarProjector {
    /// Draw `W`, `b` and `E_s` i.i.d. uniform on [-0.5, 0.5] from the stream
    /// keyed by `(master_seed, channel_id)`.
    pub fn init(channel_id: &str, p: usize, d: usize, master_seed: u64) -> Self {
        assert!(p >= 2 && d >= 8, "projector needs p >= 2 and d >= 8");
        let mut rng = keyed_rng(master_seed, &format!("projector/{channel_id}"));
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-0.5..=0.5)).collect()
        };
        let weights = draw(p);
        let bias = draw(p);
        let table = Matrix::from_vec(p, d, draw(p * d));
        ScalarProjector {
            channel_id: channel_id.to_string(),
            weights,
            bias,
            table,
            standardizer: Standardizer::default(),
        }
    }

    pub fn with_standardizer(mut self, standardizer: Standardizer) -> Self {
        self.standardizer = standardizer;
        self
    }

    pub fn p(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.table.cols()
    }

    /// `softmax(W·x' + b)` for an already standardized `x'`.
    pub fn weights_for(&self, standardized: f64) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w * standardized + b)
            .collect();
        softmax(&logits)
    }

    /// `s · E_s` for an already standardized `x'`.
    pub fn project_standardized(&self, standardized: f64) -> Vec<f64> {
        let s = self.weights_for(standardized);
        let mut out = vec![0.0; self.d()];
        for (k, &sk) in s.iter().enumerate() {
            for (o, e) in out.iter_mut().zip(self.table.row(k)) {
                *o += sk * e;
            }
        }
        out
    }

    /// Standardize a raw scalar and project it.
    pub fn project(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::Invalid(format!(
                "non-finite input {x} to projector `{}`",
                self.channel_id
            )));
        }
        Ok(self.project_standardized(self.standardizer.apply(x)))
    }
}

pub fn duration_ms(duration_us: u64) -> f64 {
    duration_us as f64 / 1000.0
}

/// Latency embedding of a span duration, projected in milliseconds.
pub fn embed_latency(duration_us: u64, projector: &ScalarProjector) -> Result<Vec<f64>> {
    projector.project(duration_ms(duration_us))
}

/// Column layout of a node attribute row:
///
/// ```text
/// [ audit | event | app | metric[0] | … | metric[m-1] | latency ]
///   d_log   d_log  d_log     d              d            d
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeLayout {
    pub d_log: usize,
    pub metric_channels: Vec<MetricChannel>,
    pub d: usize,
}

impl AttributeLayout {
    pub fn new(d_log: usize, metric_channels: Vec<MetricChannel>, d: usize) -> Self {
        AttributeLayout {
            d_log,
            metric_channels,
            d,
        }
    }

    pub fn dim(&self) -> usize {
        3 * self.d_log + (self.metric_channels.len() + 1) * self.d
    }

    /// Range of one log channel (`0` audit, `1` event, `2` app).
    pub fn log_range(&self, channel: usize) -> Range<usize> {
        assert!(channel < 3);
        channel * self.d_log..(channel + 1) * self.d_log
    }

    pub fn metric_range(&self, index: usize) -> Range<usize> {
        let start = 3 * self.d_log + index * self.d;
        start..start + self.d
    }

    /// All metric segments together.
    pub fn metrics_range(&self) -> Range<usize> {
        let start = 3 * self.d_log;
        start..start + self.metric_channels.len() * self.d
    }

    pub fn latency_range(&self) -> Range<usize> {
        let end = self.dim();
        end - self.d..end
    }

    /// Human-readable segment table, one `name start end` line per segment.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (i, name) in ["log.audit", "log.event", "log.app"].iter().enumerate() {
            let r = self.log_range(i);
            out.push_str(&format!("{name} {} {}\n", r.start, r.end));
        }
        for (i, ch) in self.metric_channels.iter().enumerate() {
            let r = self.metric_range(i);
            out.push_str(&format!("metric.{} {} {}\n", ch.as_str(), r.start, r.end));
        }
        let r = self.latency_range();
        out.push_str(&format!("latency {} {}\n", r.start, r.end));
        out
    }
}

/// Concatenate per-modality vectors into one attribute row in layout order.
pub fn fuse_attributes(
    layout: &AttributeLayout,
    log_vecs: [&[f64]; 3],
    metric_vecs: &[&[f64]],
    latency: &[f64],
) -> Result<Vec<f64>> {
    for (i, v) in log_vecs.iter().enumerate() {
        if v.len() != layout.d_log {
            return Err(Error::shape(format!("log segment {i}"), layout.d_log, v.len()));
        }
    }
    if metric_vecs.len() != layout.metric_channels.len() {
        return Err(Error::shape(
            "metric segment count",
            layout.metric_channels.len(),
            metric_vecs.len(),
        ));
    }
    for (i, v) in metric_vecs.iter().enumerate() {
        if v.len() != layout.d {
            return Err(Error::shape(format!("metric segment {i}"), layout.d, v.len()));
        }
    }
    if latency.len() != layout.d {
        return Err(Error::shape("latency segment", layout.d, latency.len()));
    }
    let mut row = Vec::with_capacity(layout.dim());
    for v in log_vecs {
        row.extend_from_slice(v);
    }
    for v in metric_vecs {
        row.extend_from_slice(v);
    }
    row.extend_from_slice(latency);
    Ok(row)
}
