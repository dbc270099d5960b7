//! Minimal dense-tensor engine: reverse-mode differentiation, Adam,
//! gradient clipping and finite-difference verification. Everything the
//! model modules compute runs through [`Graph`].

pub mod attention;
pub mod fdcheck;
pub mod graph;
pub mod optim;
pub mod store;
pub mod tensor;

pub use attention::{causal_mask, key_mask, AttnParams, MASK_NEG};
pub use fdcheck::{check_gradients, finite_diff_check, FiniteDiffReport};
pub use graph::{Graph, NodeId, Reduction};
pub use optim::{adam_step, clip_gradients, AdamState};
pub use store::{ParamId, ParamStore};
pub use tensor::Tensor;
