//! Input serialization: one flat token sequence laid out as
//! `[RULE] EDU ... [RULE] EDU [CLS] question [CLS] scenario
//!  [CLS] history-turn ... [SEP]`, with one `[RULE]` marker per EDU and one
//! `[CLS]` per history turn.

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueExample, FollowUpAnswer};
use crate::discourse::{DiscourseRelation, Edu};
use crate::error::{Error, Result};
use crate::text::{Vocab, CLS, RULE, SEP};

/// One retrieved document after discourse parsing, in retrieval rank order.
#[derive(Debug, Clone)]
pub struct ParsedDoc {
    pub doc_id: String,
    pub edus: Vec<Edu>,
    pub relations: Vec<DiscourseRelation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SerializedInput {
    pub token_ids: Vec<u32>,
    /// Position of the `[RULE]` marker for each kept EDU, doc-major order.
    pub rule_markers: Vec<RuleMarker>,
    pub question_cls: usize,
    pub scenario_cls: usize,
    pub history_cls: Vec<usize>,
    /// Sequence positions of the plain rule-text tokens (marker tokens
    /// excluded), doc-major order.
    pub rule_token_positions: Vec<usize>,
    /// Range into `rule_token_positions` per document rank.
    pub doc_ranges: Vec<(usize, usize)>,
    pub truncated_edus: usize,
    pub truncated_history: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMarker {
    pub doc_rank: usize,
    pub edu_id: usize,
    pub pos: usize,
}

impl SerializedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn n_history(&self) -> usize {
        self.history_cls.len()
    }

    pub fn marker_count(&self) -> usize {
        self.rule_markers.len() + 2 + self.history_cls.len()
    }
}

fn answer_token(a: FollowUpAnswer) -> &'static str {
    match a {
        FollowUpAnswer::Yes => "yes",
        FollowUpAnswer::No => "no",
    }
}

/// Serialize an example with its retrieved documents.
///
/// When the sequence exceeds `max_len`, EDUs are dropped from the
/// lowest-ranked document first (never the top document's last EDU), then
/// the oldest history turns; question and scenario are never truncated.
/// Returns the serialized input plus the per-document EDUs/relations that
/// survived truncation (the graph is built over exactly those).
pub fn serialize(
    vocab: &Vocab,
    example: &DialogueExample,
    docs: &[ParsedDoc],
    max_len: usize,
) -> Result<(SerializedInput, Vec<(Vec<Edu>, Vec<DiscourseRelation>)>)> {
    if docs.is_empty() || docs.iter().any(|d| d.edus.is_empty()) {
        return Err(Error::InvalidArgument(
            "serialize needs at least one document with at least one EDU".into(),
        ));
    }

    let edu_tokens: Vec<Vec<Vec<u32>>> = docs
        .iter()
        .map(|d| d.edus.iter().map(|e| vocab.encode(&e.text)).collect())
        .collect();
    let question_ids = vocab.encode(&example.question);
    let scenario_ids = vocab.encode(&example.scenario);
    let history_ids: Vec<Vec<u32>> = example
        .history
        .iter()
        .map(|h| {
            let mut ids = vocab.encode(&h.follow_up_question);
            ids.push(vocab.id(answer_token(h.follow_up_answer)));
            ids
        })
        .collect();

    // Start from everything, then drop until the budget fits.
    let mut kept_edus: Vec<usize> = edu_tokens.iter().map(|e| e.len()).collect();
    let mut kept_history = history_ids.len();
    let mut truncated_edus = 0usize;

    let cost = |kept_edus: &[usize], kept_history: usize| -> usize {
        let rules: usize = kept_edus
            .iter()
            .enumerate()
            .map(|(d, &n)| {
                edu_tokens[d][..n]
                    .iter()
                    .map(|t| 1 + t.len())
                    .sum::<usize>()
            })
            .sum();
        let hist: usize = history_ids[history_ids.len() - kept_history..]
            .iter()
            .map(|t| 1 + t.len())
            .sum();
        rules + (1 + question_ids.len()) + (1 + scenario_ids.len()) + hist + 1
    };

    while cost(&kept_edus, kept_history) > max_len {
        // Lowest-ranked doc that still has EDUs to give up.
        let candidate = (1..kept_edus.len()).rev().find(|&d| kept_edus[d] > 0);
        match candidate {
            Some(d) => {
                kept_edus[d] -= 1;
                truncated_edus += 1;
            }
            None if kept_edus[0] > 1 => {
                kept_edus[0] -= 1;
                truncated_edus += 1;
            }
            None if kept_history > 0 => {
                kept_history -= 1;
            }
            None => {
                return Err(Error::InvalidArgument(format!(
                    "example {} cannot fit in {} tokens even after truncation",
                    example.utterance_id, max_len
                )));
            }
        }
    }
    let truncated_history = history_ids.len() - kept_history;

    let mut token_ids = Vec::with_capacity(cost(&kept_edus, kept_history));
    let mut rule_markers = Vec::new();
    let mut rule_token_positions = Vec::new();
    let mut doc_ranges = Vec::new();
    let mut kept_docs = Vec::new();

    for (d, doc) in docs.iter().enumerate() {
        let n = kept_edus[d];
        let range_start = rule_token_positions.len();
        for (e, ids) in edu_tokens[d][..n].iter().enumerate() {
            rule_markers.push(RuleMarker {
                doc_rank: d,
                edu_id: doc.edus[e].edu_id,
                pos: token_ids.len(),
            });
            token_ids.push(RULE);
            for &id in ids {
                rule_token_positions.push(token_ids.len());
                token_ids.push(id);
            }
        }
        doc_ranges.push((range_start, rule_token_positions.len()));
        if n > 0 {
            let edus: Vec<Edu> = doc.edus[..n].to_vec();
            let ids: Vec<usize> = edus.iter().map(|e| e.edu_id).collect();
            let relations: Vec<DiscourseRelation> = doc
                .relations
                .iter()
                .filter(|r| ids.contains(&r.source_edu) && ids.contains(&r.target_edu))
                .copied()
                .collect();
            kept_docs.push((edus, relations));
        }
    }

    let question_cls = token_ids.len();
    token_ids.push(CLS);
    token_ids.extend(&question_ids);

    let scenario_cls = token_ids.len();
    token_ids.push(CLS);
    token_ids.extend(&scenario_ids);

    let mut history_cls = Vec::with_capacity(kept_history);
    for ids in &history_ids[history_ids.len() - kept_history..] {
        history_cls.push(token_ids.len());
        token_ids.push(CLS);
        token_ids.extend(ids);
    }

    token_ids.push(SEP);

    Ok((
        SerializedInput {
            token_ids,
            rule_markers,
            question_cls,
            scenario_cls,
            history_cls,
            rule_token_positions,
            doc_ranges,
            truncated_edus,
            truncated_history,
        },
        kept_docs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Decision, HistoryTurn};
    use crate::discourse::parse_rule;
    use std::collections::BTreeMap;

    fn vocab() -> Vocab {
        Vocab::build([
            "you qualify if you are over 65 or you own a car do i live here yes no benefit",
        ])
    }

    fn example(history: Vec<HistoryTurn>) -> DialogueExample {
        DialogueExample {
            utterance_id: "e".into(),
            tree_id: "t".into(),
            gold_doc_id: "d".into(),
            question: "Do I qualify?".into(),
            scenario: String::new(),
            history,
            evidence: vec![],
            decision: Decision::Yes,
            gold_follow_up: None,
            extra: BTreeMap::new(),
        }
    }

    fn parsed(doc_id: &str, text: &str) -> ParsedDoc {
        let (edus, relations) = parse_rule(doc_id, text);
        ParsedDoc {
            doc_id: doc_id.into(),
            edus,
            relations,
        }
    }

    #[test]
    fn layout_one_doc_two_edus_no_history() {
        let v = vocab();
        let docs = vec![parsed("d", "You qualify if you are over 65")];
        let (s, kept) = serialize(&v, &example(vec![]), &docs, 128).unwrap();
        assert_eq!(s.rule_markers.len(), 2);
        assert_eq!(s.history_cls.len(), 0);
        assert_eq!(s.marker_count(), 4);
        assert_eq!(*s.token_ids.last().unwrap(), SEP);
        assert_eq!(s.token_ids[s.rule_markers[0].pos], RULE);
        assert_eq!(s.token_ids[s.question_cls], CLS);
        assert_eq!(s.token_ids[s.scenario_cls], CLS);
        // Scenario is empty: its [CLS] is immediately followed by [SEP].
        assert_eq!(s.scenario_cls + 1, s.token_ids.len() - 1);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].0.len(), 2);
    }

    #[test]
    fn two_docs_keep_rank_order_markers() {
        let v = vocab();
        let docs = vec![parsed("a", "You qualify."), parsed("b", "You own a car.")];
        let (s, _) = serialize(&v, &example(vec![]), &docs, 128).unwrap();
        assert_eq!(s.rule_markers.len(), 2);
        assert_eq!(s.rule_markers[0].doc_rank, 0);
        assert_eq!(s.rule_markers[1].doc_rank, 1);
        assert!(s.rule_markers[0].pos < s.rule_markers[1].pos);
        assert_eq!(s.doc_ranges.len(), 2);
    }

    #[test]
    fn history_turns_get_one_cls_each_with_answer_token() {
        let v = vocab();
        let history = vec![
            HistoryTurn {
                follow_up_question: "Do you own a car?".into(),
                follow_up_answer: FollowUpAnswer::Yes,
            },
            HistoryTurn {
                follow_up_question: "Do you live here?".into(),
                follow_up_answer: FollowUpAnswer::No,
            },
        ];
        let docs = vec![parsed("d", "You qualify.")];
        let (s, _) = serialize(&v, &example(history), &docs, 128).unwrap();
        assert_eq!(s.history_cls.len(), 2);
        assert_eq!(s.marker_count(), 1 + 2 + 2);
        // Answer token is the last token of each history segment.
        let second_seg_end = s.token_ids.len() - 1;
        assert_eq!(s.token_ids[second_seg_end - 1], v.id("no"));
    }

    #[test]
    fn truncation_drops_low_rank_edus_first_and_reports() {
        let v = vocab();
        let docs = vec![
            parsed("a", "You qualify if you are over 65"),
            parsed("b", "You own a car. You live here. You qualify."),
        ];
        let full = serialize(&v, &example(vec![]), &docs, 512).unwrap().0.len();
        let (s, kept) = serialize(&v, &example(vec![]), &docs, full - 2).unwrap();
        assert!(s.truncated_edus >= 1);
        assert_eq!(kept[0].0.len() + kept[1].0.len() + s.truncated_edus, 5);
        // Doc b lost its last EDU first.
        assert!(kept[1].0.len() < 3);
        assert!(s.len() <= full - 2);
    }

    #[test]
    fn question_and_scenario_survive_extreme_truncation() {
        let v = vocab();
        let docs = vec![parsed("a", "You qualify if you are over 65 or you own a car")];
        let history = vec![HistoryTurn {
            follow_up_question: "Do you own a car?".into(),
            follow_up_answer: FollowUpAnswer::Yes,
        }];
        let mut ex = example(history);
        ex.scenario = "I live here.".into();
        // Tight budget: 1 EDU marker+tokens + question + scenario + SEP.
        let (s, kept) = serialize(&v, &ex, &docs, 18).unwrap();
        assert_eq!(kept[0].0.len(), 1);
        assert_eq!(s.history_cls.len(), 0);
        assert_eq!(s.truncated_history, 1);
        let q_ids = v.encode(&ex.question);
        assert_eq!(
            &s.token_ids[s.question_cls + 1..s.question_cls + 1 + q_ids.len()],
            q_ids.as_slice()
        );
    }

    #[test]
    fn impossible_budget_is_an_error() {
        let v = vocab();
        let docs = vec![parsed("a", "You qualify.")];
        assert!(serialize(&v, &example(vec![]), &docs, 4).is_err());
    }

    #[test]
    fn relations_referencing_dropped_edus_are_filtered() {
        let v = vocab();
        let docs = vec![
            parsed("a", "You qualify."),
            parsed("b", "You qualify if you are over 65"),
        ];
        let full = serialize(&v, &example(vec![]), &docs, 512).unwrap();
        assert_eq!(full.1[1].1.len(), 1);
        // Drop exactly one EDU from doc b.
        let budget = full.0.len() - 1;
        let (_, kept) = serialize(&v, &example(vec![]), &docs, budget).unwrap();
        assert_eq!(kept[1].0.len(), 1);
        assert!(kept[1].1.is_empty());
    }
}
