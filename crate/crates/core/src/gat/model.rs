use super::layer::{Activation, GatLayer, LayerCache, LayerGrad};
use super::Neighborhoods;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::keyed_rng;

/// Two GAT encoder layers (`D → h → h`) and two decoder layers (`h → h → D`).
/// Interior layers use ReLU; the output layer is linear so signed attributes
/// can be reconstructed.
#[derive(Clone, Debug, PartialEq)]
pub struct GatAutoEncoder {
    pub layers: Vec<GatLayer>,
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `H¹ … H⁴`.
    pub hidden: Vec<Matrix>,
    pub caches: Vec<LayerCache>,
}

impl ForwardPass {
    /// Latent node representation `Z = H²`.
    pub fn latent(&self) -> &Matrix {
        &self.hidden[1]
    }

    /// Reconstruction `X̂ = H⁴`.
    pub fn reconstruction(&self) -> &Matrix {
        &self.hidden[3]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weight.as_slice(), g.attention.as_slice()])
            .collect()
    }
}

/// Per-node reconstruction error `‖x_i − x̂_i‖₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeScores(pub Vec<f64>);

impl GatAutoEncoder {
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = keyed_rng(seed, "gat/init");
        let dims = [
            (input_dim, hidden_dim, Activation::Relu),
            (hidden_dim, hidden_dim, Activation::Relu),
            (hidden_dim, hidden_dim, Activation::Relu),
            (hidden_dim, input_dim, Activation::Identity),
        ];
        let layers = dims
            .iter()
            .map(|&(i, o, act)| GatLayer::init(i, o, act, &mut rng))
            .collect();
        GatAutoEncoder { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(GatLayer::parameter_count).sum()
    }

    /// Mutable views of every trainable parameter, in the same order as
    /// [`Gradients::slices`].
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.attention.as_mut_slice()])
            .collect()
    }

    pub fn forward(&self, x: &Matrix, nb: &Neighborhoods) -> Result<ForwardPass> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("auto-encoder input", self.input_dim(), x.cols()));
        }
        let mut hidden = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let (next, cache) = layer.forward(&h, nb, idx)?;
            hidden.push(next.clone());
            caches.push(cache);
            h = next;
        }
        Ok(ForwardPass { hidden, caches })
    }

    /// `(Z, X̂)`.
    pub fn encode_decode(&self, x: &Matrix, nb: &Neighborhoods) -> Result<(Matrix, Matrix)> {
        let mut pass = self.forward(x, nb)?;
        let x_hat = pass.hidden.pop().expect("four layers");
        let z = pass.hidden.swap_remove(1);
        Ok((z, x_hat))
    }

    pub fn backward(&self, pass: &ForwardPass, nb: &Neighborhoods, x: &Matrix) -> Gradients {
        let x_hat = pass.reconstruction();
        let mut d = Matrix::from_vec(
            x.rows(),
            x.cols(),
            x_hat
                .as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(xh, xv)| 2.0 * (xh - xv))
                .collect(),
        );
        let mut grads = Vec::with_capacity(self.layers.len());
        for (layer, cache) in self.layers.iter().zip(&pass.caches).rev() {
            let (g, d_in) = layer.backward(cache, nb, &d);
            grads.push(g);
            d = d_in;
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Reconstruction loss and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, x: &Matrix, nb: &Neighborhoods) -> Result<(f64, Gradients)> {
        let pass = self.forward(x, nb)?;
        let loss = reconstruction_loss(x, pass.reconstruction())?;
        Ok((loss, self.backward(&pass, nb, x)))
    }

    pub fn node_scores(&self, x: &Matrix, nb: &Neighborhoods) -> Result<NodeScores> {
        let (_, x_hat) = self.encode_decode(x, nb)?;
        row_distances(x, &x_hat).map(NodeScores)
    }
}

/// Squared Frobenius norm of `X − X̂`.
pub fn reconstruction_loss(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("loss", format!("{:?}", x.shape()), format!("{:?}", x_hat.shape())));
    }
    Ok(x.squared_distance(x_hat))
}

/// Row-wise Euclidean distances.
pub fn row_distances(x: &Matrix, x_hat: &Matrix) -> Result<Vec<f64>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("scores", format!("{:?}", x.shape()), format!("{:?}", x_hat.shape())));
    }
    Ok((0..x.rows())
        .map(|i| {
            x.row(i)
                .iter()
                .zip(x_hat.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}
