//! Rule-text discourse processing: segmentation into elementary discourse
//! units (EDUs), heuristic relation tagging over the 16 STAC labels, and the
//! Levi-graph construction consumed by the graph encoder.
//!
//! Segmentation is deterministic: splits at sentence boundaries, at list
//! bullets, and before a fixed connective lexicon when the clause on each
//! side contains a verb-like token.

pub mod levi;

pub use levi::{build_levi_graph, EdgeKind, LeviGraph, Vertex};

use serde::{Deserialize, Serialize};

/// One clause-like segment of a rule text.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Edu {
    pub edu_id: usize,
    pub doc_id: String,
    pub text: String,
    /// Byte span into the source rule text.
    pub char_span: (usize, usize),
}

/// The 16 STAC discourse relations. The heuristic tagger only ever produces
/// five of them, but the label space is the full inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationLabel {
    Comment,
    ClarificationQuestion,
    Elaboration,
    Acknowledgment,
    Continuation,
    Explanation,
    Conditional,
    QuestionAnswer,
    Alternation,
    QuestionElaboration,
    Result,
    Background,
    Narration,
    Correction,
    Parallel,
    Contrast,
}

impl RelationLabel {
    pub const COUNT: usize = 16;

    pub const ALL: [RelationLabel; 16] = [
        RelationLabel::Comment,
        RelationLabel::ClarificationQuestion,
        RelationLabel::Elaboration,
        RelationLabel::Acknowledgment,
        RelationLabel::Continuation,
        RelationLabel::Explanation,
        RelationLabel::Conditional,
        RelationLabel::QuestionAnswer,
        RelationLabel::Alternation,
        RelationLabel::QuestionElaboration,
        RelationLabel::Result,
        RelationLabel::Background,
        RelationLabel::Narration,
        RelationLabel::Correction,
        RelationLabel::Parallel,
        RelationLabel::Contrast,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&r| r == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct DiscourseRelation {
    pub source_edu: usize,
    pub target_edu: usize,
    pub relation: RelationLabel,
}

/// Connectives that open a new EDU when both sides look clausal.
const CONNECTIVES: [&str; 6] = ["if", "unless", "when", "or", "and", "but"];

/// Two-token connective handled separately.
const PROVIDED_THAT: [&str; 2] = ["provided", "that"];

/// Words treated as verb-like for the clause test. A fixed lexicon keeps the
/// segmenter deterministic and language-tool free.
const VERB_LEXICON: [&str; 78] = [
    "is", "are", "am", "was", "were", "be", "been", "being", "have", "has", "had", "do", "does",
    "did", "must", "can", "may", "shall", "will", "should", "would", "could", "qualify",
    "qualifies", "apply", "applies", "pay", "pays", "live", "lives", "work", "works", "own",
    "owns", "earn", "earns", "receive", "receives", "hold", "holds", "care", "cares", "study",
    "studies", "rent", "rents", "serve", "serves", "meet", "meets", "need", "needs", "get",
    "gets", "claim", "claims", "submit", "submits", "provide", "provides", "attend", "attends",
    "teach", "teaches", "farm", "farms", "volunteer", "volunteers", "run", "runs", "contact",
    "contacts", "use", "uses", "include", "includes", "want", "wants",
];

fn is_verb_like(token: &str) -> bool {
    VERB_LEXICON.contains(&token)
}

#[derive(Debug, Clone)]
struct Word {
    text: String,
    start: usize,
}

fn words_with_spans(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut start = None;
    let mut last_end = 0;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
            last_end = i + ch.len_utf8();
        } else if let Some(s) = start.take() {
            words.push(Word {
                text: text[s..last_end].to_lowercase(),
                start: s,
            });
        }
    }
    if let Some(s) = start {
        words.push(Word {
            text: text[s..last_end].to_lowercase(),
            start: s,
        });
    }
    words
}

/// A maximal block of text that segments independently: a bullet item or a
/// run of text between bullet items.
fn blocks(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut cursor = 0;
    for line in text.split_inclusive('\n') {
        let line_start = cursor;
        cursor += line.len();
        let trimmed = line.trim_start();
        let indent = line.len() - trimmed.len();
        let content_start = line_start + indent;
        let bullet_len = bullet_marker_len(trimmed);
        let body_start = content_start + bullet_len;
        let body = &text[body_start..cursor];
        let body_trim_end = body.trim_end();
        if !body_trim_end.is_empty() {
            out.push((body_start, body_start + body_trim_end.len()));
        }
    }
    out
}

/// Length of a leading list-item marker ("- ", "* ", "• ", "1. ", "2) ").
fn bullet_marker_len(line: &str) -> usize {
    let bytes = line.as_bytes();
    if line.starts_with("- ") || line.starts_with("* ") {
        return 2;
    }
    if let Some(rest) = line.strip_prefix('•') {
        return '•'.len_utf8() + (rest.len() - rest.trim_start().len());
    }
    let digits = bytes.iter().take_while(|b| b.is_ascii_digit()).count();
    if digits > 0 && digits < bytes.len() && (bytes[digits] == b'.' || bytes[digits] == b')') {
        let after = digits + 1;
        if bytes.get(after) == Some(&b' ') {
            return after + 1;
        }
    }
    0
}

/// Split a rule text into EDUs.
///
/// Splits always occur at sentence boundaries and bullet items. Within a
/// sentence, a split occurs before a connective when the text on both sides
/// contains a verb-like token.
pub fn segment_edus(doc_id: &str, rule_text: &str) -> Vec<Edu> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (block_start, block_end) in blocks(rule_text) {
        let block = &rule_text[block_start..block_end];
        // Sentence boundaries: terminal punctuation followed by whitespace
        // or end of block.
        let mut sentence_start = 0;
        let bytes = block.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let ch = bytes[i] as char;
            if matches!(ch, '.' | '!' | '?' | ';') {
                let next = bytes.get(i + 1).map(|&b| b as char);
                if next.map_or(true, |c| c.is_whitespace()) {
                    let sent = &block[sentence_start..=i];
                    if !sent.trim().is_empty() {
                        segment_sentence(block_start + sentence_start, sent, &mut spans);
                    }
                    sentence_start = i + 1;
                }
            }
            i += 1;
        }
        if sentence_start < block.len() {
            let sent = &block[sentence_start..];
            if !sent.trim().is_empty() {
                segment_sentence(block_start + sentence_start, sent, &mut spans);
            }
        }
    }
    if spans.is_empty() {
        let trimmed = rule_text.trim();
        if trimmed.is_empty() {
            return vec![];
        }
        let start = rule_text.len() - rule_text.trim_start().len();
        spans.push((start, start + trimmed.len()));
    }
    spans
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| Edu {
            edu_id: i,
            doc_id: doc_id.to_string(),
            text: rule_text[s..e].to_string(),
            char_span: (s, e),
        })
        .collect()
}

fn segment_sentence(offset: usize, sentence: &str, spans: &mut Vec<(usize, usize)>) {
    let words = words_with_spans(sentence);
    if words.is_empty() {
        return;
    }
    // Candidate split points: indices of connective words (never the first).
    let mut candidates: Vec<usize> = Vec::new();
    for (w, word) in words.iter().enumerate() {
        if w == 0 {
            continue;
        }
        let is_connective = CONNECTIVES.contains(&word.text.as_str())
            || (word.text == PROVIDED_THAT[0]
                && words.get(w + 1).map(|n| n.text.as_str()) == Some(PROVIDED_THAT[1]));
        if is_connective {
            candidates.push(w);
        }
    }

    let mut split_word_indices: Vec<usize> = Vec::new();
    let mut segment_start_word = 0;
    for (c, &cand) in candidates.iter().enumerate() {
        if cand <= segment_start_word {
            continue;
        }
        let left_has_verb = words[segment_start_word..cand].iter().any(|w| is_verb_like(&w.text));
        // The tentative right clause runs to the next candidate or the end.
        let right_end = candidates
            .get(c + 1..)
            .and_then(|rest| rest.iter().find(|&&n| n > cand))
            .copied()
            .unwrap_or(words.len());
        let right_has_verb = words[cand..right_end].iter().any(|w| is_verb_like(&w.text));
        if left_has_verb && right_has_verb {
            split_word_indices.push(cand);
            segment_start_word = cand;
        }
    }

    let trimmed_end = offset + sentence.trim_end().len();
    let mut seg_start = offset + (sentence.len() - sentence.trim_start().len());
    for &w in &split_word_indices {
        let split_at = offset + words[w].start;
        // The previous segment ends right before the connective, with
        // trailing whitespace trimmed off (punctuation stays attached).
        let mut end = split_at;
        while end > seg_start {
            let tail = &sentence[seg_start - offset..end - offset];
            match tail.chars().last() {
                Some(c) if c.is_whitespace() => end -= c.len_utf8(),
                _ => break,
            }
        }
        if end > seg_start {
            spans.push((seg_start, end));
        }
        seg_start = split_at;
    }
    if seg_start < trimmed_end {
        spans.push((seg_start, trimmed_end));
    }
}

/// Subordinating openers: an EDU starting with one of these is governed by
/// an earlier EDU rather than governing the next one.
const SUBORDINATE_OPENERS: [&str; 9] = [
    "if", "unless", "when", "provided", "or", "and", "but", "because", "since",
];

fn first_token(edu: &Edu) -> Option<String> {
    crate::text::tokenize(&edu.text).into_iter().next()
}

/// Tag relations between consecutive/governing EDUs of one document.
pub fn tag_relations(edus: &[Edu]) -> Vec<DiscourseRelation> {
    let mut relations = Vec::new();
    if edus.len() < 2 {
        return relations;
    }
    let openers: Vec<Option<String>> = edus.iter().map(first_token).collect();
    for i in 1..edus.len() {
        let opener = openers[i].as_deref().unwrap_or("");
        let (source, relation) = match opener {
            "if" | "unless" | "when" | "provided" => {
                // Governing EDU: nearest preceding EDU that is not itself
                // subordinate; fall back to the immediate predecessor.
                let governor = (0..i)
                    .rev()
                    .find(|&j| {
                        let o = openers[j].as_deref().unwrap_or("");
                        !SUBORDINATE_OPENERS.contains(&o)
                    })
                    .unwrap_or(i - 1);
                (governor, RelationLabel::Conditional)
            }
            "or" => (i - 1, RelationLabel::Alternation),
            "but" => (i - 1, RelationLabel::Contrast),
            "because" | "since" => (i - 1, RelationLabel::Explanation),
            _ => (i - 1, RelationLabel::Continuation),
        };
        relations.push(DiscourseRelation {
            source_edu: edus[source].edu_id,
            target_edu: edus[i].edu_id,
            relation,
        });
    }
    relations
}

/// Segment and tag one document in a single call.
pub fn parse_rule(doc_id: &str, text: &str) -> (Vec<Edu>, Vec<DiscourseRelation>) {
    let edus = segment_edus(doc_id, text);
    let relations = tag_relations(&edus);
    (edus, relations)
}
