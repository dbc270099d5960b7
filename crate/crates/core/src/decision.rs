//! The decision channel: per-condition entailment tracking, attention-pooled
//! four-way classification, their losses, and the derivation of entailment
//! supervision from dialog history.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Decision, DialogueExample, FollowUpAnswer};
use crate::discourse::Edu;
use crate::encoder::FusedStates;
use crate::error::Result;
use crate::numerics::{Graph, NodeId, ParamId, ParamStore, Reduction};
use crate::text::tokenize;

/// Entailment states per rule condition, in checkpoint index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntailState {
    Entailment,
    Contradiction,
    Unmentioned,
}

impl EntailState {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            EntailState::Entailment => 0,
            EntailState::Contradiction => 1,
            EntailState::Unmentioned => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<EntailState> {
        match i {
            0 => Some(EntailState::Entailment),
            1 => Some(EntailState::Contradiction),
            2 => Some(EntailState::Unmentioned),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntailState::Entailment => "Entailment",
            EntailState::Contradiction => "Contradiction",
            EntailState::Unmentioned => "Unmentioned",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionHeadParams {
    /// Entailment projection, hidden -> 3.
    pub w_f: ParamId,
    pub b_f: ParamId,
    /// Condition attention over [f_i; r_i], (3 + hidden) -> 1.
    pub w_alpha: ParamId,
    pub b_alpha: ParamId,
    /// Decision projection over the pooled [f; r], (3 + hidden) -> 4.
    pub w_z: ParamId,
    pub b_z: ParamId,
}

impl DecisionHeadParams {
    pub fn alloc(store: &mut ParamStore, rng: &mut ChaCha20Rng, prefix: &str, dim: usize) -> Self {
        DecisionHeadParams {
            w_f: store.alloc_weight(format!("{prefix}.w_f"), rng, dim, EntailState::COUNT),
            b_f: store.alloc_bias(format!("{prefix}.b_f"), EntailState::COUNT),
            w_alpha: store.alloc_weight(format!("{prefix}.w_alpha"), rng, EntailState::COUNT + dim, 1),
            b_alpha: store.alloc_bias(format!("{prefix}.b_alpha"), 1),
            w_z: store.alloc_weight(format!("{prefix}.w_z"), rng, EntailState::COUNT + dim, Decision::COUNT),
            b_z: store.alloc_bias(format!("{prefix}.b_z"), Decision::COUNT),
        }
    }
}

/// Graph nodes produced by the decision forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DecisionNodes {
    /// Per-condition entailment logits, [N, 3].
    pub entail_logits: NodeId,
    /// Condition attention weights after softmax, [1, N].
    pub attention: NodeId,
    /// Four-way decision logits, [1, 4].
    pub decision_logits: NodeId,
}

/// `f_i = W_f r_i + b_f` for every condition row of H_c.
pub fn entailment_head(
    g: &mut Graph,
    store: &ParamStore,
    head: &DecisionHeadParams,
    conditions: NodeId,
) -> Result<NodeId> {
    let w_f = g.param(store, head.w_f);
    let b_f = g.param(store, head.b_f);
    let f = g.matmul(conditions, w_f)?;
    g.add_row(f, b_f)
}

/// Eq.-6 style pooling: attention over the per-condition concatenation
/// [f_i; r_i], then a linear map to the four decision logits.
pub fn decision_head(
    g: &mut Graph,
    store: &ParamStore,
    head: &DecisionHeadParams,
    entail_logits: NodeId,
    conditions: NodeId,
) -> Result<(NodeId, NodeId)> {
    let concat = g.concat(1, &[entail_logits, conditions])?;
    let w_alpha = g.param(store, head.w_alpha);
    let b_alpha = g.param(store, head.b_alpha);
    let alpha = g.matmul(concat, w_alpha)?;
    let alpha = g.add_row(alpha, b_alpha)?;
    let alpha_row = g.transpose(alpha)?;
    let attention = g.softmax(alpha_row)?;
    let pooled = g.matmul(attention, concat)?;
    let w_z = g.param(store, head.w_z);
    let b_z = g.param(store, head.b_z);
    let z = g.matmul(pooled, w_z)?;
    let z = g.add_row(z, b_z)?;
    Ok((attention, z))
}

/// Full decision channel over the fused states.
pub fn decision_forward(
    g: &mut Graph,
    store: &ParamStore,
    head: &DecisionHeadParams,
    fused: &FusedStates,
) -> Result<DecisionNodes> {
    let conditions = g.gather_rows(fused.node, &fused.condition_rows)?;
    let entail_logits = entailment_head(g, store, head, conditions)?;
    let (attention, decision_logits) = decision_head(g, store, head, entail_logits, conditions)?;
    Ok(DecisionNodes {
        entail_logits,
        attention,
        decision_logits,
    })
}

/// Mean NLL over the labeled conditions; unlabeled conditions are masked
/// out rather than defaulted.
pub fn entailment_loss(
    g: &mut Graph,
    entail_logits: NodeId,
    labels: &[Option<EntailState>],
) -> Result<NodeId> {
    let targets: Vec<usize> = labels
        .iter()
        .map(|l| l.map(EntailState::index).unwrap_or(0))
        .collect();
    let mask: Vec<bool> = labels.iter().map(Option::is_some).collect();
    g.cross_entropy(entail_logits, &targets, Some(&mask), Reduction::Mean)
}

/// NLL of the gold decision.
pub fn decision_loss(g: &mut Graph, decision_logits: NodeId, gold: Decision) -> Result<NodeId> {
    g.cross_entropy(decision_logits, &[gold.index()], None, Reduction::Mean)
}

/// `L_d = L_decision + lambda * L_entail`.
pub fn decision_total_loss(
    g: &mut Graph,
    l_decision: NodeId,
    l_entail: NodeId,
    lambda: f64,
) -> Result<NodeId> {
    let scaled = g.scale(l_entail, lambda)?;
    g.add(l_decision, scaled)
}

/// Token-set Jaccard overlap used to match conditions against history
/// questions.
pub fn token_overlap(a: &str, b: &str) -> f64 {
    let ta: std::collections::BTreeSet<String> = tokenize(a).into_iter().collect();
    let tb: std::collections::BTreeSet<String> = tokenize(b).into_iter().collect();
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let inter = ta.intersection(&tb).count() as f64;
    let union = ta.union(&tb).count() as f64;
    inter / union
}

pub const OVERLAP_THRESHOLD: f64 = 0.6;

/// Derive per-condition entailment supervision from the dialog history.
///
/// A condition matching a history follow-up question (token overlap >= 0.6)
/// is Entailment when answered Yes, Contradiction when answered No.
/// Unmatched conditions of the gold document are Unmentioned; unmatched
/// conditions of other retrieved documents are unlabeled (None) so noisy
/// retrieval injects no false supervision.
pub fn derive_entailment_labels(
    example: &DialogueExample,
    edus_per_doc: &[(String, &[Edu])],
) -> Vec<Option<EntailState>> {
    let mut labels = Vec::new();
    for (doc_id, edus) in edus_per_doc {
        let is_gold = *doc_id == example.gold_doc_id;
        for edu in edus.iter() {
            let mut label = None;
            let mut best = OVERLAP_THRESHOLD;
            for turn in &example.history {
                let overlap = token_overlap(&edu.text, &turn.follow_up_question);
                if overlap >= best {
                    best = overlap;
                    label = Some(match turn.follow_up_answer {
                        FollowUpAnswer::Yes => EntailState::Entailment,
                        FollowUpAnswer::No => EntailState::Contradiction,
                    });
                }
            }
            if label.is_none() && is_gold {
                label = Some(EntailState::Unmentioned);
            }
            labels.push(label);
        }
    }
    labels
}
