pub mod artifact;
pub mod error;
pub mod eval;
pub mod faultgen;
pub mod features;
pub mod gat;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod logs;
pub mod obs;
pub mod pipeline;
pub mod rca;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
