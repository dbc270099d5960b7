//! Multi-head scaled dot-product attention, composed from primitive graph
//! ops so gradients come for free.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Additive mask value for excluded positions. Large enough to zero the
/// softmax weight at f64 precision, small enough to stay finite.
pub const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AttnParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub b_q: ParamId,
    pub b_k: ParamId,
    pub b_v: ParamId,
    pub b_o: ParamId,
}

impl AttnParams {
    pub fn alloc(store: &mut ParamStore, rng: &mut ChaCha20Rng, prefix: &str, dim: usize) -> AttnParams {
        AttnParams {
            w_q: store.alloc_weight(format!("{prefix}.w_q"), rng, dim, dim),
            w_k: store.alloc_weight(format!("{prefix}.w_k"), rng, dim, dim),
            w_v: store.alloc_weight(format!("{prefix}.w_v"), rng, dim, dim),
            w_o: store.alloc_weight(format!("{prefix}.w_o"), rng, dim, dim),
            b_q: store.alloc_bias(format!("{prefix}.b_q"), dim),
            b_k: store.alloc_bias(format!("{prefix}.b_k"), dim),
            b_v: store.alloc_bias(format!("{prefix}.b_v"), dim),
            b_o: store.alloc_bias(format!("{prefix}.b_o"), dim),
        }
    }

    /// Attend queries over keys/values. `mask`, when given, is an additive
    /// [n_q, n_k] node (0 for allowed, [`MASK_NEG`] for excluded).
    pub fn attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: NodeId,
        keys: NodeId,
        values: NodeId,
        n_heads: usize,
        mask: Option<NodeId>,
    ) -> Result<NodeId> {
        let dim = g.value(queries).cols();
        if dim % n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden dim {dim} not divisible by {n_heads} heads"
            )));
        }
        let head_dim = dim / n_heads;

        let (w_q, b_q) = (g.param(store, self.w_q), g.param(store, self.b_q));
        let (w_k, b_k) = (g.param(store, self.w_k), g.param(store, self.b_k));
        let (w_v, b_v) = (g.param(store, self.w_v), g.param(store, self.b_v));
        let (w_o, b_o) = (g.param(store, self.w_o), g.param(store, self.b_o));

        let q_proj = g.matmul(queries, w_q)?;
        let q_proj = g.add_row(q_proj, b_q)?;
        let k_proj = g.matmul(keys, w_k)?;
        let k_proj = g.add_row(k_proj, b_k)?;
        let v_proj = g.matmul(values, w_v)?;
        let v_proj = g.add_row(v_proj, b_v)?;

        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let (s, e) = (h * head_dim, (h + 1) * head_dim);
            let q_h = g.slice_cols(q_proj, s, e)?;
            let k_h = g.slice_cols(k_proj, s, e)?;
            let v_h = g.slice_cols(v_proj, s, e)?;
            let k_t = g.transpose(k_h)?;
            let scores = g.matmul(q_h, k_t)?;
            let scores = g.scale(scores, scale)?;
            let scores = match mask {
                Some(m) => g.add(scores, m)?,
                None => scores,
            };
            let weights = g.softmax(scores)?;
            head_outputs.push(g.matmul(weights, v_h)?);
        }
        let combined = if head_outputs.len() == 1 {
            head_outputs[0]
        } else {
            g.concat(1, &head_outputs)?
        };
        let out = g.matmul(combined, w_o)?;
        g.add_row(out, b_o)
    }
}

/// Causal (strictly lower-triangular-allowed) additive mask for self
/// attention over a length-`n` prefix.
pub fn causal_mask(n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            t.set(i, j, MASK_NEG);
        }
    }
    t
}

/// Additive mask excluding the keys where `allowed` is false, for `n_q`
/// query rows.
pub fn key_mask(n_q: usize, allowed: &[bool]) -> Tensor {
    let mut t = Tensor::zeros(&[n_q, allowed.len()]);
    for i in 0..n_q {
        for (j, &ok) in allowed.iter().enumerate() {
            if !ok {
                t.set(i, j, MASK_NEG);
            }
        }
    }
    t
}
