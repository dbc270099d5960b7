//! From-scratch transformer encoder: learned token + position embeddings,
//! pre-norm-free residual blocks (attention, feed-forward) with affine layer
//! norms. A zero-layer configuration is the identity path over embeddings.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{key_mask, AttnParams, Graph, NodeId, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn alloc(store: &mut ParamStore, prefix: &str, dim: usize) -> LayerNormParams {
        let gain = store.alloc(format!("{prefix}.gain"), crate::numerics::Tensor::ones(&[1, dim]));
        let bias = store.alloc_bias(format!("{prefix}.bias"), dim);
        LayerNormParams { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let normed = g.layer_norm(x, LAYER_NORM_EPS)?;
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let scaled = g.mul_row(normed, gain)?;
        g.add_row(scaled, bias)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderLayerParams {
    pub attn: AttnParams,
    pub ln_attn: LayerNormParams,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub ln_ff: LayerNormParams,
}

impl EncoderLayerParams {
    fn alloc(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        dim: usize,
        ff_dim: usize,
    ) -> EncoderLayerParams {
        EncoderLayerParams {
            attn: AttnParams::alloc(store, rng, &format!("{prefix}.attn"), dim),
            ln_attn: LayerNormParams::alloc(store, &format!("{prefix}.ln_attn"), dim),
            ff_w1: store.alloc_weight(format!("{prefix}.ff_w1"), rng, dim, ff_dim),
            ff_b1: store.alloc_bias(format!("{prefix}.ff_b1"), ff_dim),
            ff_w2: store.alloc_weight(format!("{prefix}.ff_w2"), rng, ff_dim, dim),
            ff_b2: store.alloc_bias(format!("{prefix}.ff_b2"), dim),
            ln_ff: LayerNormParams::alloc(store, &format!("{prefix}.ln_ff"), dim),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        n_heads: usize,
        mask: Option<NodeId>,
    ) -> Result<NodeId> {
        let attended = self.attn.attend(g, store, x, x, x, n_heads, mask)?;
        let x = {
            let sum = g.add(x, attended)?;
            self.ln_attn.forward(g, store, sum)?
        };
        let w1 = g.param(store, self.ff_w1);
        let b1 = g.param(store, self.ff_b1);
        let w2 = g.param(store, self.ff_w2);
        let b2 = g.param(store, self.ff_b2);
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h)?;
        let h = g.matmul(h, w2)?;
        let h = g.add_row(h, b2)?;
        let sum = g.add(x, h)?;
        self.ln_ff.forward(g, store, sum)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformerParams {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub layers: Vec<EncoderLayerParams>,
    pub n_heads: usize,
    pub max_len: usize,
}

impl TransformerParams {
    pub fn alloc(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        vocab_size: usize,
        max_len: usize,
        dim: usize,
        n_layers: usize,
        n_heads: usize,
    ) -> TransformerParams {
        let token_embedding = store.alloc_weight(format!("{prefix}.token_emb"), rng, vocab_size, dim);
        let position_embedding = store.alloc_weight(format!("{prefix}.pos_emb"), rng, max_len, dim);
        let layers = (0..n_layers)
            .map(|l| EncoderLayerParams::alloc(store, rng, &format!("{prefix}.layer{l}"), dim, 2 * dim))
            .collect();
        TransformerParams {
            token_embedding,
            position_embedding,
            layers,
            n_heads,
            max_len,
        }
    }

    /// Token + position embeddings: the layer-zero representation.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, token_ids: &[u32]) -> Result<NodeId> {
        if token_ids.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
        }
        if token_ids.len() > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence length {} exceeds maximum {}",
                token_ids.len(),
                self.max_len
            )));
        }
        let emb = g.param(store, self.token_embedding);
        let indices: Vec<usize> = token_ids.iter().map(|&t| t as usize).collect();
        let tokens = g.gather_rows(emb, &indices)?;
        let pos_emb = g.param(store, self.position_embedding);
        let positions: Vec<usize> = (0..token_ids.len()).collect();
        let pos = g.gather_rows(pos_emb, &positions)?;
        g.add(tokens, pos)
    }

    /// Contextual encoding: one output vector per input token. `allowed`,
    /// when given, marks the positions other tokens may attend to (false for
    /// padding).
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        token_ids: &[u32],
        allowed: Option<&[bool]>,
    ) -> Result<NodeId> {
        let mut x = self.embed(g, store, token_ids)?;
        let mask = match allowed {
            Some(a) => {
                if a.len() != token_ids.len() {
                    return Err(Error::ShapeMismatch {
                        op: "encoder mask",
                        lhs: vec![a.len()],
                        rhs: vec![token_ids.len()],
                    });
                }
                Some(g.leaf(key_mask(token_ids.len(), a)))
            }
            None => None,
        };
        for layer in &self.layers {
            x = layer.forward(g, store, x, self.n_heads, mask)?;
        }
        Ok(x)
    }
}
