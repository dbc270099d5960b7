//! Relational graph convolution over the Levi graph: per-edge-type weight
//! matrices with degree-normalized aggregation, plus the sigmoid-gated
//! variant used as the final layer.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::discourse::{EdgeKind, LeviGraph};
use crate::error::Result;
use crate::numerics::{Graph, NodeId, ParamId, ParamStore, Tensor};

/// Degree-normalized incoming adjacency per edge kind:
/// `A_r[p][q] = 1 / c_{p,r}` when there is a kind-`r` edge q -> p, where
/// `c_{p,r}` counts p's incoming kind-`r` neighbors.
pub fn adjacency_tensors(graph: &LeviGraph) -> Vec<Tensor> {
    let m = graph.n_vertices();
    let incoming = graph.incoming_by_kind();
    EdgeKind::ALL
        .iter()
        .map(|kind| {
            let mut a = Tensor::zeros(&[m, m]);
            for (p, sources) in incoming[kind.index()].iter().enumerate() {
                if sources.is_empty() {
                    continue;
                }
                let c = sources.len() as f64;
                for &q in sources {
                    let v = a.at(p, q) + 1.0 / c;
                    a.set(p, q, v);
                }
            }
            a
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RgcnLayerParams {
    /// One weight matrix per edge kind.
    pub weights: Vec<ParamId>,
}

impl RgcnLayerParams {
    fn alloc(store: &mut ParamStore, rng: &mut ChaCha20Rng, prefix: &str, dim: usize) -> Self {
        let weights = EdgeKind::ALL
            .iter()
            .map(|k| store.alloc_weight(format!("{prefix}.w_{}", k.index()), rng, dim, dim))
            .collect();
        RgcnLayerParams { weights }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatedRgcnLayerParams {
    pub weights: Vec<ParamId>,
    /// Per-edge-kind gate vectors mapping a vertex state to one scalar.
    pub gates: Vec<ParamId>,
}

impl GatedRgcnLayerParams {
    fn alloc(store: &mut ParamStore, rng: &mut ChaCha20Rng, prefix: &str, dim: usize) -> Self {
        let weights = EdgeKind::ALL
            .iter()
            .map(|k| store.alloc_weight(format!("{prefix}.w_{}", k.index()), rng, dim, dim))
            .collect();
        let gates = EdgeKind::ALL
            .iter()
            .map(|k| store.alloc_weight(format!("{prefix}.g_{}", k.index()), rng, dim, 1))
            .collect();
        GatedRgcnLayerParams { weights, gates }
    }
}

/// One ungated propagation step:
/// `h_p <- ReLU( sum_r sum_{q in N_r(p)} (1/c_{p,r}) W_r h_q )`.
pub fn rgcn_layer(
    g: &mut Graph,
    store: &ParamStore,
    states: NodeId,
    adjacency: &[NodeId],
    layer: &RgcnLayerParams,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for (kind, &adj) in adjacency.iter().enumerate() {
        let w = g.param(store, layer.weights[kind]);
        let transformed = g.matmul(states, w)?;
        let aggregated = g.matmul(adj, transformed)?;
        total = Some(match total {
            Some(t) => g.add(t, aggregated)?,
            None => aggregated,
        });
    }
    g.relu(total.expect("six edge kinds"))
}

/// The gated final step: each neighbor's message is scaled by its scalar
/// gate `sigmoid(h_q . g_r)` before the same normalized aggregation.
pub fn gated_rgcn_layer(
    g: &mut Graph,
    store: &ParamStore,
    states: NodeId,
    adjacency: &[NodeId],
    layer: &GatedRgcnLayerParams,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for (kind, &adj) in adjacency.iter().enumerate() {
        let gate_w = g.param(store, layer.gates[kind]);
        let gate_logits = g.matmul(states, gate_w)?;
        let gates = g.sigmoid(gate_logits)?;
        let gated_states = g.scale_rows(states, gates)?;
        let w = g.param(store, layer.weights[kind]);
        let transformed = g.matmul(gated_states, w)?;
        let aggregated = g.matmul(adj, transformed)?;
        total = Some(match total {
            Some(t) => g.add(t, aggregated)?,
            None => aggregated,
        });
    }
    g.relu(total.expect("six edge kinds"))
}

/// The full stack: `n_ungated` Eq.-1 layers followed by one gated layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RgcnParams {
    pub ungated: Vec<RgcnLayerParams>,
    pub gated: GatedRgcnLayerParams,
}

impl RgcnParams {
    pub fn alloc(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        dim: usize,
        n_ungated: usize,
    ) -> RgcnParams {
        let ungated = (0..n_ungated)
            .map(|l| RgcnLayerParams::alloc(store, rng, &format!("{prefix}.layer{l}"), dim))
            .collect();
        let gated = GatedRgcnLayerParams::alloc(store, rng, &format!("{prefix}.gated"), dim);
        RgcnParams { ungated, gated }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        init_states: NodeId,
        graph: &LeviGraph,
    ) -> Result<NodeId> {
        let adjacency: Vec<NodeId> = adjacency_tensors(graph)
            .into_iter()
            .map(|a| g.leaf(a))
            .collect();
        let mut states = init_states;
        for layer in &self.ungated {
            states = rgcn_layer(g, store, states, &adjacency, layer)?;
        }
        gated_rgcn_layer(g, store, states, &adjacency, &self.gated)
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Independent dense evaluation of the propagation formulas, used by
    //! tests only. Everything is plain nested loops over Vec<Vec<f64>>.

    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Ungated: h'_p = ReLU(sum_r sum_{q in N_r(p)} (1/c_{p,r}) W_r h_q).
    /// `edges[r]` lists (from, to) pairs; `weights[r]` is row-major
    /// dim x dim applied as h W (matching x-times-W in the layer).
    pub fn rgcn_step(
        h: &[Vec<f64>],
        edges: &[Vec<(usize, usize)>],
        weights: &[Vec<Vec<f64>>],
    ) -> Vec<Vec<f64>> {
        let m = h.len();
        let dim = h[0].len();
        let mut out = vec![vec![0.0; dim]; m];
        for p in 0..m {
            for (r, kind_edges) in edges.iter().enumerate() {
                let neighbors: Vec<usize> = kind_edges
                    .iter()
                    .filter(|(_, to)| *to == p)
                    .map(|(from, _)| *from)
                    .collect();
                if neighbors.is_empty() {
                    continue;
                }
                let c = neighbors.len() as f64;
                for &q in &neighbors {
                    for d_out in 0..dim {
                        let mut acc = 0.0;
                        for d_in in 0..dim {
                            acc += h[q][d_in] * weights[r][d_in][d_out];
                        }
                        out[p][d_out] += acc / c;
                    }
                }
            }
            for v in out[p].iter_mut() {
                *v = v.max(0.0);
            }
        }
        out
    }

    /// Gated: neighbor messages scaled by sigmoid(h_q . gate_r).
    pub fn gated_rgcn_step(
        h: &[Vec<f64>],
        edges: &[Vec<(usize, usize)>],
        weights: &[Vec<Vec<f64>>],
        gates: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let m = h.len();
        let dim = h[0].len();
        let mut out = vec![vec![0.0; dim]; m];
        for p in 0..m {
            for (r, kind_edges) in edges.iter().enumerate() {
                let neighbors: Vec<usize> = kind_edges
                    .iter()
                    .filter(|(_, to)| *to == p)
                    .map(|(from, _)| *from)
                    .collect();
                if neighbors.is_empty() {
                    continue;
                }
                let c = neighbors.len() as f64;
                for &q in &neighbors {
                    let gate = sigmoid(h[q].iter().zip(&gates[r]).map(|(a, b)| a * b).sum());
                    for d_out in 0..dim {
                        let mut acc = 0.0;
                        for d_in in 0..dim {
                            acc += h[q][d_in] * weights[r][d_in][d_out];
                        }
                        out[p][d_out] += gate * acc / c;
                    }
                }
            }
            for v in out[p].iter_mut() {
                *v = v.max(0.0);
            }
        }
        out
    }
}
