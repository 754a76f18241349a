//! Graph attention auto-encoder.

mod layer;
mod model;
mod neighbors;
mod train;

pub use layer::{Activation, GatLayer, LayerCache, LayerGrad, DEFAULT_LEAKY_SLOPE};
pub use model::{reconstruction_loss, row_distances, ForwardPass, GatAutoEncoder, Gradients, NodeScores};
pub use neighbors::Neighborhoods;
pub use train::{train, TrainConfig, TrainReport, TrainingSample};
