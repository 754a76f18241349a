//! Versioned on-disk container for a trained model and its frozen feature
//! state.
//!
//! ```text
//! magic     8 bytes   "LRCAMDL\0"
//! version   u32 LE
//! input_dim u64 LE
//! hidden    u64 LE
//! layers    u64 LE
//! header    u64 LE length + UTF-8 JSON (configs, layout, templates, standardizers)
//! per layer W (in·out f64 LE, row-major) then a (2·out f64 LE)
//! per projector (metric channels in layout order, then latency):
//!           W (p f64 LE), b (p f64 LE), E_s (p·d f64 LE, row-major)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::gat::{Activation, GatAutoEncoder, GatLayer, TrainConfig};
use crate::linalg::Matrix;
use crate::logs::TemplateStore;
use crate::scalar::{AttributeLayout, ScalarProjector, Standardizer};

pub const MAGIC: &[u8; 8] = b"LRCAMDL\0";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to turn raw bundles into node scores.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub train_config: TrainConfig,
    pub features: FeatureExtractor,
    pub network: GatAutoEncoder,
    /// Per-epoch training loss, kept for inspection.
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    in_dim: usize,
    out_dim: usize,
    leaky_slope: f64,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct ProjectorMeta {
    channel_id: String,
    p: usize,
    d: usize,
    standardizer: Standardizer,
}

#[derive(Serialize, Deserialize)]
struct Header {
    train_config: TrainConfig,
    feature_config: FeatureConfig,
    layout: AttributeLayout,
    layout_description: String,
    templates: String,
    layers: Vec<LayerMeta>,
    projectors: Vec<ProjectorMeta>,
    scoped_standardizers: BTreeMap<String, Standardizer>,
    epoch_losses: Vec<f64>,
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Artifact("file is truncated".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Artifact("length overflows usize".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Artifact("array length overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl TrainedModel {
    pub fn projectors(&self) -> impl Iterator<Item = &ScalarProjector> {
        self.features
            .metric_projectors
            .iter()
            .chain(std::iter::once(&self.features.latency_projector))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            train_config: self.train_config.clone(),
            feature_config: self.features.config.clone(),
            layout: self.features.layout.clone(),
            layout_description: self.features.layout.describe(),
            templates: self.features.templates.to_json(),
            layers: self
                .network
                .layers
                .iter()
                .map(|l| LayerMeta {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    leaky_slope: l.leaky_slope,
                    activation: l.activation,
                })
                .collect(),
            projectors: self
                .projectors()
                .map(|p| ProjectorMeta {
                    channel_id: p.channel_id.clone(),
                    p: p.p(),
                    d: p.d(),
                    standardizer: p.standardizer,
                })
                .collect(),
            scoped_standardizers: self.features.scoped_standardizers.clone(),
            epoch_losses: self.epoch_losses.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Artifact(e.to_string()))?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.network.input_dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.network.hidden_dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.network.layers.len() as u64).to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for layer in &self.network.layers {
            put_f64s(&mut out, layer.weight.as_slice());
            put_f64s(&mut out, &layer.attention);
        }
        for proj in self.projectors() {
            put_f64s(&mut out, &proj.weights);
            put_f64s(&mut out, &proj.bias);
            put_f64s(&mut out, proj.table.as_slice());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Artifact("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let input_dim = r.usize()?;
        let hidden = r.usize()?;
        let n_layers = r.usize()?;
        let header_len = r.usize()?;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Artifact(format!("header: {e}")))?;
        if header.layers.len() != n_layers || n_layers != 4 {
            return Err(Error::Artifact(format!("expected 4 layers, found {n_layers}")));
        }
        if header.layers[0].in_dim != input_dim || header.layers[0].out_dim != hidden {
            return Err(Error::Artifact("layer dimensions disagree with header".into()));
        }
        if header.layout.dim() != input_dim {
            return Err(Error::Artifact(format!(
                "attribute layout has {} columns but the network expects {input_dim}",
                header.layout.dim()
            )));
        }

        let mut layers = Vec::with_capacity(n_layers);
        for meta in &header.layers {
            let w = r.f64s(meta.in_dim * meta.out_dim)?;
            let a = r.f64s(2 * meta.out_dim)?;
            layers.push(GatLayer {
                weight: Matrix::from_vec(meta.in_dim, meta.out_dim, w),
                attention: a,
                leaky_slope: meta.leaky_slope,
                activation: meta.activation,
            });
        }
        let mut projectors = Vec::with_capacity(header.projectors.len());
        for meta in &header.projectors {
            let weights = r.f64s(meta.p)?;
            let bias = r.f64s(meta.p)?;
            let table = Matrix::from_vec(meta.p, meta.d, r.f64s(meta.p * meta.d)?);
            projectors.push(ScalarProjector {
                channel_id: meta.channel_id.clone(),
                weights,
                bias,
                table,
                standardizer: meta.standardizer,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Artifact("trailing bytes after projector data".into()));
        }
        let n_metrics = header.layout.metric_channels.len();
        if projectors.len() != n_metrics + 1 {
            return Err(Error::Artifact(format!(
                "expected {} projectors, found {}",
                n_metrics + 1,
                projectors.len()
            )));
        }
        let latency_projector = projectors.pop().expect("checked length");
        let templates = TemplateStore::from_json(&header.templates)
            .map_err(|e| Error::Artifact(format!("template store: {e}")))?;
        Ok(TrainedModel {
            train_config: header.train_config,
            features: FeatureExtractor {
                config: header.feature_config,
                layout: header.layout,
                metric_projectors: projectors,
                latency_projector,
                templates,
                scoped_standardizers: header.scoped_standardizers,
            },
            network: GatAutoEncoder { layers },
            epoch_losses: header.epoch_losses,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized model; ties fitted stores to the model
    /// they were scored with.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
