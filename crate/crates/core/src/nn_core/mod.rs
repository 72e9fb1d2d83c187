//! Dense `f64` tensors, a reverse-mode tape, transformer blocks and AdamW.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod mat;
pub mod optim;
pub mod params;

pub use graph::{Graph, Mask, Var};
pub use layers::{
    sinusoidal_pe, Attended, DecoderLayer, EncoderLayer, FeedForward, LayerCache, LayerNorm, Linear, MultiHeadAttention,
};
pub use mat::{matmul, Mat};
pub use optim::{lr_at_step, AdamW, AdamWConfig};
pub use params::{Grads, ParamId, ParamStore};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
}
