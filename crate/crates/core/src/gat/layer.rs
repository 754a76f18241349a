//! One single-head graph attention layer with an analytic backward pass.
//!
//! For node `i` with neighborhood `N_i` (itself plus in-neighbors):
//!
//! ```text
//! g_k    = W·h_k
//! e_ij   = LeakyReLU(a_c·g_i + a_n·g_j)        a = [a_c ‖ a_n]
//! α_ij   = softmax_{j ∈ N_i}(e_ij)
//! h'_i   = σ(Σ_j α_ij g_j)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Neighborhoods;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatLayer {
    /// `in_dim × out_dim`.
    pub weight: Matrix,
    /// Length `2·out_dim`: center half then neighbor half.
    pub attention: Vec<f64>,
    pub leaky_slope: f64,
    pub activation: Activation,
}

/// Values kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct LayerCache {
    input: Matrix,
    projected: Matrix,
    /// Pre-LeakyReLU logits, one per neighborhood entry.
    logits: Vec<f64>,
    /// Attention weights, one per neighborhood entry.
    pub alpha: Vec<f64>,
    pre_activation: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub attention: Vec<f64>,
}

impl GatLayer {
    /// Uniform init on ±sqrt(6 / (fan_in + fan_out)) for `W` and for `a`
    /// (treated as a `2·out × 1` matrix).
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let w_bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-w_bound..=w_bound))
            .collect();
        let a_bound = (6.0 / (2 * out_dim + 1) as f64).sqrt();
        let attention = (0..2 * out_dim)
            .map(|_| rng.random_range(-a_bound..=a_bound))
            .collect();
        GatLayer {
            weight: Matrix::from_vec(in_dim, out_dim, weight),
            attention,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.as_slice().len() + self.attention.len()
    }

    fn leaky(&self, u: f64) -> f64 {
        if u > 0.0 {
            u
        } else {
            self.leaky_slope * u
        }
    }

    pub fn forward(&self, h: &Matrix, nb: &Neighborhoods, layer: usize) -> Result<(Matrix, LayerCache)> {
        if h.cols() != self.in_dim() {
            return Err(Error::shape(format!("GAT layer {layer} input"), self.in_dim(), h.cols()));
        }
        if h.rows() != nb.len() {
            return Err(Error::shape(format!("GAT layer {layer} nodes"), nb.len(), h.rows()));
        }
        let out = self.out_dim();
        let (a_center, a_neighbor) = self.attention.split_at(out);
        let projected = h.matmul(&self.weight);
        let n = h.rows();
        let center: Vec<f64> = (0..n).map(|i| dot(a_center, projected.row(i))).collect();
        let neighbor: Vec<f64> = (0..n).map(|j| dot(a_neighbor, projected.row(j))).collect();

        let mut logits = vec![0.0; nb.entries()];
        let mut alpha = vec![0.0; nb.entries()];
        let mut pre = Matrix::zeros(n, out);
        for i in 0..n {
            let range = nb.range(i);
            let members = nb.of(i);
            let mut max = f64::NEG_INFINITY;
            for (e, &j) in range.clone().zip(members) {
                logits[e] = center[i] + neighbor[j];
                max = max.max(self.leaky(logits[e]));
            }
            let mut total = 0.0;
            for e in range.clone() {
                alpha[e] = (self.leaky(logits[e]) - max).exp();
                total += alpha[e];
            }
            let row = pre.row_mut(i);
            for (e, &j) in range.zip(members) {
                alpha[e] /= total;
                for (r, g) in row.iter_mut().zip(projected.row(j)) {
                    *r += alpha[e] * g;
                }
            }
        }
        if !pre.is_finite() || alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite { layer, stage: "forward" });
        }
        let mut output = pre.clone();
        if self.activation == Activation::Relu {
            for v in output.as_mut_slice() {
                *v = v.max(0.0);
            }
        }
        let cache = LayerCache {
            input: h.clone(),
            projected,
            logits,
            alpha,
            pre_activation: pre,
        };
        Ok((output, cache))
    }

    /// Gradients of the parameters and of the layer input given the gradient
    /// of the layer output.
    pub fn backward(&self, cache: &LayerCache, nb: &Neighborhoods, d_out: &Matrix) -> (LayerGrad, Matrix) {
        let n = cache.input.rows();
        let out = self.out_dim();
        let (a_center, a_neighbor) = self.attention.split_at(out);

        let mut d_pre = d_out.clone();
        if self.activation == Activation::Relu {
            for (d, p) in d_pre.as_mut_slice().iter_mut().zip(cache.pre_activation.as_slice()) {
                if *p <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        let g = &cache.projected;
        let mut d_g = Matrix::zeros(n, out);
        let mut d_center = vec![0.0; n];
        let mut d_neighbor = vec![0.0; n];
        let mut d_alpha = vec![0.0; nb.entries()];
        for i in 0..n {
            let dp = d_pre.row(i);
            let range = nb.range(i);
            let members = nb.of(i);
            let mut weighted = 0.0;
            for (e, &j) in range.clone().zip(members) {
                let a = cache.alpha[e];
                for (dg, v) in d_g.row_mut(j).iter_mut().zip(dp) {
                    *dg += a * v;
                }
                d_alpha[e] = dot(dp, g.row(j));
                weighted += a * d_alpha[e];
            }
            for (e, &j) in range.zip(members) {
                let d_e = cache.alpha[e] * (d_alpha[e] - weighted);
                let slope = if cache.logits[e] > 0.0 { 1.0 } else { self.leaky_slope };
                let d_u = d_e * slope;
                d_center[i] += d_u;
                d_neighbor[j] += d_u;
            }
        }

        let mut d_attention = vec![0.0; 2 * out];
        for k in 0..n {
            let gk = g.row(k);
            let (da_c, da_n) = d_attention.split_at_mut(out);
            for c in 0..out {
                da_c[c] += d_center[k] * gk[c];
                da_n[c] += d_neighbor[k] * gk[c];
            }
            let row = d_g.row_mut(k);
            for c in 0..out {
                row[c] += d_center[k] * a_center[c] + d_neighbor[k] * a_neighbor[c];
            }
        }

        let d_weight = cache.input.t_matmul(&d_g);
        let d_input = d_g.matmul_t(&self.weight);
        (
            LayerGrad {
                weight: d_weight,
                attention: d_attention,
            },
            d_input,
        )
    }
}
