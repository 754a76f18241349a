use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::GatAutoEncoder;
use super::Neighborhoods;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::keyed_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.004,
            batch_size: 128,
            hidden_dim: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("learning_rate", self.learning_rate),
            ("batch_size", self.batch_size as f64),
            ("hidden_dim", self.hidden_dim as f64),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// One training graph: attribute matrix plus attention neighborhoods.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub x: Matrix,
    pub neighborhoods: Neighborhoods,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Per-epoch loss summed over batches and divided by the number of graphs.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(config: &TrainConfig, shapes: &[usize]) -> Self {
        Adam {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            lr: config.learning_rate,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

fn batch_inputs(samples: &[&TrainingSample]) -> (Matrix, Neighborhoods) {
    let cols = samples[0].x.cols();
    let x = Matrix::vstack(samples.iter().map(|s| &s.x), cols);
    let nb = Neighborhoods::disjoint_union(samples.iter().map(|s| &s.neighborhoods));
    (x, nb)
}

/// Train a fresh auto-encoder with Adam on disjoint-union mini-batches.
pub fn train(samples: &[TrainingSample], config: &TrainConfig) -> Result<(GatAutoEncoder, TrainReport)> {
    config.validate()?;
    let first = samples.first().ok_or(Error::EmptyTrainingSet)?;
    let dim = first.x.cols();
    for s in samples {
        if s.x.cols() != dim {
            return Err(Error::shape("training graph attributes", dim, s.x.cols()));
        }
        if s.x.rows() != s.neighborhoods.len() {
            return Err(Error::shape("training graph nodes", s.neighborhoods.len(), s.x.rows()));
        }
    }

    let mut model = GatAutoEncoder::new(dim, config.hidden_dim, config.seed);
    let shapes: Vec<usize> = model.parameters_mut().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(config, &shapes);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = keyed_rng(config.seed, "gat/shuffle");
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let members: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, nb) = batch_inputs(&members);
            let (loss, grads) = match model.loss_and_gradients(&x, &nb) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => return Err(Error::NanLoss { epoch, batch }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch });
            }
            total += loss;
            adam.update(model.parameters_mut(), grads.slices());
        }
        report.epoch_losses.push(total / samples.len() as f64);
    }
    Ok((model, report))
}
