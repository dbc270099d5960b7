//! The encoding stack: serialized-input construction, the contextual
//! transformer, vertex-state initialization from marker tokens, gated
//! relational graph convolution, and the self-attention fusion that yields
//! the decision states H_c.

pub mod rgcn;
pub mod serialize;
pub mod transformer;

pub use rgcn::{adjacency_tensors, gated_rgcn_layer, rgcn_layer, RgcnParams};
pub use serialize::{serialize, ParsedDoc, RuleMarker, SerializedInput};
pub use transformer::{LayerNormParams, TransformerParams};

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::discourse::{LeviGraph, Vertex};
use crate::error::{Error, Result};
use crate::numerics::{AttnParams, Graph, NodeId, ParamId, ParamStore};

/// Initialize one state vector per graph vertex: EDU vertices from their
/// `[RULE]` token, the scenario vertex from the scenario `[CLS]` token, and
/// relation vertices from a label-indexed embedding table.
pub fn init_vertex_states(
    g: &mut Graph,
    store: &ParamStore,
    token_states: NodeId,
    serialized: &SerializedInput,
    graph: &LeviGraph,
    relation_embedding: ParamId,
) -> Result<NodeId> {
    let mut token_positions: Vec<usize> = Vec::new();
    let mut relation_labels: Vec<usize> = Vec::new();
    // perm[v] = row of vertex v in [token-backed rows; relation rows].
    let mut perm: Vec<usize> = Vec::with_capacity(graph.n_vertices());
    let mut relation_slots: Vec<usize> = Vec::new();

    for vertex in &graph.vertices {
        match vertex {
            Vertex::Edu { doc_rank, edu_id } => {
                let marker = serialized
                    .rule_markers
                    .iter()
                    .find(|m| m.doc_rank == *doc_rank && m.edu_id == *edu_id)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "no [RULE] marker for vertex doc {doc_rank} edu {edu_id}"
                        ))
                    })?;
                perm.push(token_positions.len());
                token_positions.push(marker.pos);
            }
            Vertex::Scenario => {
                perm.push(token_positions.len());
                token_positions.push(serialized.scenario_cls);
            }
            Vertex::Relation { label, .. } => {
                relation_slots.push(perm.len());
                perm.push(usize::MAX);
                relation_labels.push(label.index());
            }
        }
    }
    for (i, &slot) in relation_slots.iter().enumerate() {
        perm[slot] = token_positions.len() + i;
    }

    let token_rows = g.gather_rows(token_states, &token_positions)?;
    let combined = if relation_labels.is_empty() {
        token_rows
    } else {
        let table = g.param(store, relation_embedding);
        let relation_rows = g.gather_rows(table, &relation_labels)?;
        g.concat(0, &[token_rows, relation_rows])?
    };
    g.gather_rows(combined, &perm)
}

/// Fusion of graph states with the question/scenario/history markers
/// through one residual self-attention layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuseParams {
    pub attn: AttnParams,
    pub n_heads: usize,
}

impl FuseParams {
    pub fn alloc(store: &mut ParamStore, rng: &mut ChaCha20Rng, prefix: &str, dim: usize, n_heads: usize) -> FuseParams {
        FuseParams {
            attn: AttnParams::alloc(store, rng, prefix, dim),
            n_heads,
        }
    }
}

/// Row bookkeeping for the fused states H_c.
#[derive(Debug, Clone)]
pub struct FusedStates {
    pub node: NodeId,
    /// Number of graph-state rows (all vertices across retrieved docs).
    pub m: usize,
    pub n_history: usize,
    /// Rows of H_c that correspond to EDU vertices (the rule conditions).
    pub condition_rows: Vec<usize>,
}

impl FusedStates {
    pub fn question_row(&self) -> usize {
        self.m
    }

    pub fn scenario_row(&self) -> usize {
        self.m + 1
    }

    pub fn total_rows(&self) -> usize {
        self.m + 2 + self.n_history
    }
}

/// `H_c = X + SelfAttn(X)` over `X = [graph states; u_q; u_s; h_1..h_n]`.
pub fn fuse(
    g: &mut Graph,
    store: &ParamStore,
    params: &FuseParams,
    graph_states: NodeId,
    token_states: NodeId,
    serialized: &SerializedInput,
    graph: &LeviGraph,
) -> Result<FusedStates> {
    let m = g.value(graph_states).rows();
    let mut marker_positions = vec![serialized.question_cls, serialized.scenario_cls];
    marker_positions.extend(&serialized.history_cls);
    let marker_rows = g.gather_rows(token_states, &marker_positions)?;
    let x = g.concat(0, &[graph_states, marker_rows])?;
    let attended = params.attn.attend(g, store, x, x, x, params.n_heads, None)?;
    let fused = g.add(x, attended)?;
    Ok(FusedStates {
        node: fused,
        m,
        n_history: serialized.history_cls.len(),
        condition_rows: graph.edu_vertex_indices(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Decision, DialogueExample};
    use crate::discourse::{build_levi_graph, parse_rule};
    use crate::numerics::Tensor;
    use crate::text::Vocab;
    use rand::SeedableRng;
    use std::collections::BTreeMap;

    fn example(question: &str, scenario: &str) -> DialogueExample {
        DialogueExample {
            utterance_id: "e".into(),
            tree_id: "t".into(),
            gold_doc_id: "d".into(),
            question: question.into(),
            scenario: scenario.into(),
            history: vec![],
            evidence: vec![],
            decision: Decision::Yes,
            gold_follow_up: None,
            extra: BTreeMap::new(),
        }
    }

    struct Fixture {
        vocab: Vocab,
        store: ParamStore,
        encoder: TransformerParams,
        rel_emb: ParamId,
        fuse_params: FuseParams,
    }

    fn fixture(n_layers: usize) -> Fixture {
        let vocab = Vocab::build([
            "you qualify if you are over 65 do i live here yes no benefit something else entirely",
        ]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let encoder =
            TransformerParams::alloc(&mut store, &mut rng, "enc", vocab.len(), 64, 8, n_layers, 2);
        let rel_emb = store.alloc_weight("rel_emb", &mut rng, 16, 8);
        let fuse_params = FuseParams::alloc(&mut store, &mut rng, "fuse", 8, 2);
        Fixture {
            vocab,
            store,
            encoder,
            rel_emb,
            fuse_params,
        }
    }

    fn run_init(fx: &Fixture, scenario: &str) -> (Vec<Vec<f64>>, LeviGraph) {
        let (edus, relations) = parse_rule("d", "You qualify if you are over 65");
        let docs = vec![ParsedDoc {
            doc_id: "d".into(),
            edus,
            relations,
        }];
        let ex = example("Do I qualify?", scenario);
        let (serialized, kept) = serialize(&fx.vocab, &ex, &docs, 64).unwrap();
        let graph = build_levi_graph(&kept).unwrap();
        let mut g = Graph::inference();
        let tokens = fx
            .encoder
            .forward(&mut g, &fx.store, &serialized.token_ids, None)
            .unwrap();
        let states =
            init_vertex_states(&mut g, &fx.store, tokens, &serialized, &graph, fx.rel_emb).unwrap();
        let rows = (0..g.value(states).rows())
            .map(|r| g.value(states).row_slice(r).to_vec())
            .collect();
        (rows, graph)
    }

    #[test]
    fn vertex_initialization_counts_match_graph() {
        let fx = fixture(1);
        let (rows, graph) = run_init(&fx, "I live here.");
        assert_eq!(rows.len(), graph.n_vertices());
        assert_eq!(rows.len(), 4); // 2 EDUs + 1 relation + scenario
    }

    #[test]
    fn same_label_relation_vertices_share_initial_vectors() {
        let fx = fixture(1);
        // Two docs, each with one conditional relation.
        let d1 = parse_rule("a", "You qualify if you are over 65");
        let d2 = parse_rule("b", "You qualify if you live here");
        let docs = vec![
            ParsedDoc { doc_id: "a".into(), edus: d1.0, relations: d1.1 },
            ParsedDoc { doc_id: "b".into(), edus: d2.0, relations: d2.1 },
        ];
        let ex = example("Do I qualify?", "");
        let (serialized, kept) = serialize(&fx.vocab, &ex, &docs, 64).unwrap();
        let graph = build_levi_graph(&kept).unwrap();
        let mut g = Graph::inference();
        let tokens = fx.encoder.forward(&mut g, &fx.store, &serialized.token_ids, None).unwrap();
        let states = init_vertex_states(&mut g, &fx.store, tokens, &serialized, &graph, fx.rel_emb).unwrap();
        let rel_rows: Vec<usize> = graph
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| matches!(v, Vertex::Relation { .. }))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(rel_rows.len(), 2);
        let a = g.value(states).row_slice(rel_rows[0]).to_vec();
        let b = g.value(states).row_slice(rel_rows[1]).to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn scenario_text_changes_scenario_vertex_but_not_relation_vertices() {
        let fx = fixture(1);
        let (rows_a, graph) = run_init(&fx, "I live here.");
        let (rows_b, _) = run_init(&fx, "something else entirely");
        let scenario_row = graph.scenario_index();
        let diff: f64 = rows_a[scenario_row]
            .iter()
            .zip(&rows_b[scenario_row])
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "scenario vertex insensitive to scenario text");
        for (i, v) in graph.vertices.iter().enumerate() {
            if matches!(v, Vertex::Relation { .. }) {
                assert_eq!(rows_a[i], rows_b[i], "relation vertex {i} changed");
            }
        }
    }

    #[test]
    fn missing_marker_is_an_error() {
        let fx = fixture(0);
        let (edus, relations) = parse_rule("d", "You qualify if you are over 65");
        let docs = vec![ParsedDoc { doc_id: "d".into(), edus, relations }];
        let ex = example("Do I qualify?", "");
        let (serialized, kept) = serialize(&fx.vocab, &ex, &docs, 64).unwrap();
        let mut graph = build_levi_graph(&kept).unwrap();
        // Corrupt the graph with a vertex that has no marker.
        graph.vertices.push(Vertex::Edu { doc_rank: 5, edu_id: 9 });
        let mut g = Graph::inference();
        let tokens = fx.encoder.forward(&mut g, &fx.store, &serialized.token_ids, None).unwrap();
        let out = init_vertex_states(&mut g, &fx.store, tokens, &serialized, &graph, fx.rel_emb);
        assert!(out.is_err());
    }

    #[test]
    fn fused_states_have_m_plus_two_plus_n_rows() {
        let fx = fixture(1);
        let (edus, relations) = parse_rule("d", "You qualify if you are over 65");
        let docs = vec![ParsedDoc { doc_id: "d".into(), edus, relations }];
        let mut ex = example("Do I qualify?", "I live here.");
        ex.history = vec![crate::corpus::HistoryTurn {
            follow_up_question: "Do you live here?".into(),
            follow_up_answer: crate::corpus::FollowUpAnswer::Yes,
        }];
        let (serialized, kept) = serialize(&fx.vocab, &ex, &docs, 64).unwrap();
        let graph = build_levi_graph(&kept).unwrap();
        let mut g = Graph::inference();
        let tokens = fx.encoder.forward(&mut g, &fx.store, &serialized.token_ids, None).unwrap();
        let states = init_vertex_states(&mut g, &fx.store, tokens, &serialized, &graph, fx.rel_emb).unwrap();
        let fused = fuse(&mut g, &fx.store, &fx.fuse_params, states, tokens, &serialized, &graph).unwrap();
        assert_eq!(fused.m, graph.n_vertices());
        assert_eq!(fused.n_history, 1);
        assert_eq!(g.value(fused.node).rows(), fused.total_rows());
        assert_eq!(fused.condition_rows.len(), 2);
    }

    #[test]
    fn identity_value_uniform_attention_adds_row_mean() {
        let fx = fixture(0);
        let dim = 8;
        let mut store = fx.store.clone();
        let eye = {
            let mut t = Tensor::zeros(&[dim, dim]);
            for i in 0..dim {
                t.set(i, i, 1.0);
            }
            t
        };
        *store.value_mut(fx.fuse_params.attn.w_q) = Tensor::zeros(&[dim, dim]);
        *store.value_mut(fx.fuse_params.attn.w_k) = Tensor::zeros(&[dim, dim]);
        *store.value_mut(fx.fuse_params.attn.w_v) = eye.clone();
        *store.value_mut(fx.fuse_params.attn.w_o) = eye;

        let (edus, relations) = parse_rule("d", "You qualify if you are over 65");
        let docs = vec![ParsedDoc { doc_id: "d".into(), edus, relations }];
        let ex = example("Do I qualify?", "");
        let (serialized, kept) = serialize(&fx.vocab, &ex, &docs, 64).unwrap();
        let graph = build_levi_graph(&kept).unwrap();
        let mut g = Graph::inference();
        let tokens = fx.encoder.forward(&mut g, &store, &serialized.token_ids, None).unwrap();
        let states = init_vertex_states(&mut g, &store, tokens, &serialized, &graph, fx.rel_emb).unwrap();
        let fused = fuse(&mut g, &store, &fx.fuse_params, states, tokens, &serialized, &graph).unwrap();

        // Reconstruct X = [states; q; s] and check out = x + mean(x).
        let x_rows: Vec<Vec<f64>> = {
            let s = g.value(states);
            let t = g.value(tokens);
            let mut rows: Vec<Vec<f64>> = (0..s.rows()).map(|r| s.row_slice(r).to_vec()).collect();
            rows.push(t.row_slice(serialized.question_cls).to_vec());
            rows.push(t.row_slice(serialized.scenario_cls).to_vec());
            rows
        };
        let n = x_rows.len() as f64;
        for c in 0..dim {
            let mean: f64 = x_rows.iter().map(|r| r[c]).sum::<f64>() / n;
            for (r, row) in x_rows.iter().enumerate() {
                let got = g.value(fused.node).at(r, c);
                let want = row[c] + mean;
                assert!((got - want).abs() < 1e-9, "row {r} col {c}");
            }
        }
    }

    #[test]
    fn single_edu_no_history_fuses_to_valid_output() {
        let fx = fixture(1);
        let (edus, relations) = parse_rule("d", "You must pay the fee.");
        let docs = vec![ParsedDoc { doc_id: "d".into(), edus, relations }];
        let ex = example("Do I qualify?", "");
        let (serialized, kept) = serialize(&fx.vocab, &ex, &docs, 64).unwrap();
        let graph = build_levi_graph(&kept).unwrap();
        assert_eq!(graph.n_vertices(), 2); // EDU + scenario vertex
        let mut g = Graph::inference();
        let tokens = fx.encoder.forward(&mut g, &fx.store, &serialized.token_ids, None).unwrap();
        let states = init_vertex_states(&mut g, &fx.store, tokens, &serialized, &graph, fx.rel_emb).unwrap();
        let fused = fuse(&mut g, &fx.store, &fx.fuse_params, states, tokens, &serialized, &graph).unwrap();
        assert_eq!(g.value(fused.node).rows(), 4);
        assert!(g.value(fused.node).all_finite());
    }
}
