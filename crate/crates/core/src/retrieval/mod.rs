//! Open retrieval over the rule-document pool: sparse TF-IDF, a trainable
//! dense dual encoder, and their linear combination.

pub mod dense;

pub use dense::{train_dense, DenseIndex, DenseTrainConfig};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueExample, RuleDocument};
use crate::error::{Error, Result};
use crate::text::tokenize;

pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Query string for an example: user question concatenated with scenario.
pub fn build_query(example: &DialogueExample) -> String {
    format!("{} {}", example.question, example.scenario)
}

/// Document text as indexed: the title followed by the body.
pub fn index_text(doc: &RuleDocument) -> String {
    format!("{} {}", doc.title, doc.text)
}

/// Ranked retrieval output; scores are non-increasing and doc_ids distinct.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|(id, _)| id == doc_id)
    }
}

/// Sort (doc index, score) pairs by descending score, breaking ties by
/// ascending doc_id, and truncate to `k`.
pub(crate) fn rank_and_truncate(mut scored: Vec<(usize, f64)>, doc_ids: &[String], k: usize) -> RankedList {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| doc_ids[a.0].cmp(&doc_ids[b.0]))
    });
    scored.truncate(k);
    RankedList {
        entries: scored
            .into_iter()
            .map(|(i, s)| (doc_ids[i].clone(), s))
            .collect(),
    }
}

/// Inverted index with smoothed idf and cosine document-length
/// normalization: idf(t) = ln((1 + n) / (1 + df)) + 1, and each document
/// score is divided by the L2 norm of the document's tf-idf vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TfIdfIndex {
    version: u32,
    doc_ids: Vec<String>,
    vocabulary: BTreeMap<String, usize>,
    doc_freq: Vec<u32>,
    postings: Vec<Vec<(u32, u32)>>,
    n_docs: usize,
    doc_norms: Vec<f64>,
}

impl TfIdfIndex {
    pub fn build(docs: &[RuleDocument]) -> Result<TfIdfIndex> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus("tf-idf index".into()));
        }
        let mut vocabulary: BTreeMap<String, usize> = BTreeMap::new();
        let mut postings: Vec<Vec<(u32, u32)>> = Vec::new();
        for (d, doc) in docs.iter().enumerate() {
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for tok in tokenize(&index_text(doc)) {
                *counts.entry(tok).or_insert(0) += 1;
            }
            for (tok, count) in counts {
                let next_id = vocabulary.len();
                let term_id = *vocabulary.entry(tok).or_insert(next_id);
                if term_id == postings.len() {
                    postings.push(Vec::new());
                }
                postings[term_id].push((d as u32, count));
            }
        }
        let doc_freq: Vec<u32> = postings.iter().map(|p| p.len() as u32).collect();
        let n_docs = docs.len();
        let mut norms_sq = vec![0.0; n_docs];
        for (term_id, posting) in postings.iter().enumerate() {
            let idf = idf(n_docs, doc_freq[term_id]);
            for &(d, count) in posting {
                let w = count as f64 * idf;
                norms_sq[d as usize] += w * w;
            }
        }
        Ok(TfIdfIndex {
            version: INDEX_FORMAT_VERSION,
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            vocabulary,
            doc_freq,
            postings,
            n_docs,
            doc_norms: norms_sq.into_iter().map(f64::sqrt).collect(),
        })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    fn doc_index(&self, doc_id: &str) -> Result<usize> {
        self.doc_ids
            .iter()
            .position(|d| d == doc_id)
            .ok_or_else(|| Error::UnknownDocId(doc_id.to_string()))
    }

    fn idf_of(&self, term_id: usize) -> f64 {
        idf(self.n_docs, self.doc_freq[term_id])
    }

    /// Score every document for `query` (cosine-normalized on the document
    /// side). Unknown query terms contribute nothing.
    pub fn score_all(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.n_docs];
        let mut qtf: BTreeMap<usize, u32> = BTreeMap::new();
        for tok in tokenize(query) {
            if let Some(&term_id) = self.vocabulary.get(&tok) {
                *qtf.entry(term_id).or_insert(0) += 1;
            }
        }
        for (&term_id, &q_count) in &qtf {
            let idf = self.idf_of(term_id);
            for &(d, count) in &self.postings[term_id] {
                scores[d as usize] += q_count as f64 * idf * count as f64;
            }
        }
        for (s, n) in scores.iter_mut().zip(&self.doc_norms) {
            if *n > 0.0 {
                *s /= n;
            }
        }
        scores
    }

    /// Score one document for `query`.
    pub fn score(&self, query: &str, doc_id: &str) -> Result<f64> {
        let d = self.doc_index(doc_id)?;
        Ok(self.score_all(query)[d])
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<RankedList> {
        if k < 1 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let scored: Vec<(usize, f64)> = self.score_all(query).into_iter().enumerate().collect();
        Ok(rank_and_truncate(scored, &self.doc_ids, k.min(self.n_docs)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<TfIdfIndex> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let index: TfIdfIndex = serde_json::from_str(&raw)?;
        if index.version != INDEX_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported index version {}",
                index.version
            )));
        }
        Ok(index)
    }
}

fn idf(n_docs: usize, df: u32) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrievalMethod {
    TfIdf,
    Dense,
    Hybrid,
}

impl std::str::FromStr for RetrievalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<RetrievalMethod> {
        match s.to_ascii_lowercase().as_str() {
            "tfidf" | "tf-idf" => Ok(RetrievalMethod::TfIdf),
            "dense" => Ok(RetrievalMethod::Dense),
            "hybrid" => Ok(RetrievalMethod::Hybrid),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// Linear combination of per-query min-max normalized scores.
pub fn combine_scores(tfidf_norm: f64, dense_norm: f64, weight: f64) -> f64 {
    tfidf_norm + weight * dense_norm
}

/// Min-max normalize `scores` in place; a degenerate pool (max == min) maps
/// to all zeros.
fn min_max_normalize(scores: &mut [f64]) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in scores.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    let range = hi - lo;
    for s in scores.iter_mut() {
        *s = if range > 0.0 { (*s - lo) / range } else { 0.0 };
    }
}

/// The retrieval front end: whichever indexes exist, plus the hybrid
/// combination weight.
pub struct Retriever {
    pub tfidf: Option<TfIdfIndex>,
    pub dense: Option<DenseIndex>,
    pub hybrid_weight: f64,
    /// Pool size per method for hybrid normalization.
    pub hybrid_pool: usize,
}

impl Retriever {
    pub fn tfidf_only(index: TfIdfIndex) -> Retriever {
        Retriever {
            tfidf: Some(index),
            dense: None,
            hybrid_weight: 1.0,
            hybrid_pool: 100,
        }
    }

    fn require_tfidf(&self) -> Result<&TfIdfIndex> {
        self.tfidf
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("tf-idf index not built".into()))
    }

    fn require_dense(&self) -> Result<&DenseIndex> {
        self.dense
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dense index not built".into()))
    }

    pub fn retrieve(&self, query: &str, k: usize, method: RetrievalMethod) -> Result<RankedList> {
        if k < 1 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        match method {
            RetrievalMethod::TfIdf => self.require_tfidf()?.retrieve(query, k),
            RetrievalMethod::Dense => self.require_dense()?.retrieve(query, k),
            RetrievalMethod::Hybrid => self.retrieve_hybrid(query, k),
        }
    }

    fn retrieve_hybrid(&self, query: &str, k: usize) -> Result<RankedList> {
        let tfidf = self.require_tfidf()?;
        let dense = self.require_dense()?;
        if tfidf.doc_ids() != dense.doc_ids() {
            return Err(Error::InvalidArgument(
                "tf-idf and dense indexes cover different documents".into(),
            ));
        }
        let n = tfidf.n_docs();
        let pool_k = self.hybrid_pool.min(n);

        // Candidate pool: union of each method's top pool_k.
        let t_ranked = tfidf.retrieve(query, pool_k)?;
        let d_ranked = dense.retrieve(query, pool_k)?;
        let mut pool: Vec<usize> = Vec::new();
        let mut in_pool = vec![false; n];
        for id in t_ranked.doc_ids().chain(d_ranked.doc_ids()) {
            let idx = tfidf.doc_index(id)?;
            if !in_pool[idx] {
                in_pool[idx] = true;
                pool.push(idx);
            }
        }
        pool.sort_unstable();

        let t_all = tfidf.score_all(query);
        let d_all = dense.score_all(query)?;
        let mut t_scores: Vec<f64> = pool.iter().map(|&i| t_all[i]).collect();
        let mut d_scores: Vec<f64> = pool.iter().map(|&i| d_all[i]).collect();
        min_max_normalize(&mut t_scores);
        min_max_normalize(&mut d_scores);

        let scored: Vec<(usize, f64)> = pool
            .iter()
            .enumerate()
            .map(|(j, &i)| (i, combine_scores(t_scores[j], d_scores[j], self.hybrid_weight)))
            .collect();
        Ok(rank_and_truncate(scored, tfidf.doc_ids(), k.min(pool.len())))
    }
}

/// Fraction (as a percentage) of examples whose gold document appears in
/// the top `k` of its ranking.
pub fn recall_at_k(results: &[(RankedList, String)], k: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .filter(|(ranked, gold)| ranked.rank_of(gold).map(|r| r < k).unwrap_or(false))
        .count();
    100.0 * hits as f64 / results.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap as Map;

    fn doc(id: &str, text: &str) -> RuleDocument {
        RuleDocument {
            doc_id: id.into(),
            title: String::new(),
            text: text.into(),
            extra: Map::new(),
        }
    }

    #[test]
    fn build_query_concatenates_question_and_scenario() {
        let mut ex = example("e", "d");
        ex.question = "Do I qualify?".into();
        ex.scenario = "I am 70.".into();
        assert_eq!(build_query(&ex), "Do I qualify? I am 70.");
        ex.question = "Q".into();
        ex.scenario = String::new();
        assert_eq!(build_query(&ex), "Q ");
    }

    fn example(id: &str, gold: &str) -> DialogueExample {
        DialogueExample {
            utterance_id: id.into(),
            tree_id: "t".into(),
            gold_doc_id: gold.into(),
            question: String::new(),
            scenario: String::new(),
            history: vec![],
            evidence: vec![],
            decision: crate::corpus::Decision::Yes,
            gold_follow_up: None,
            extra: Map::new(),
        }
    }

    #[test]
    fn unique_term_docs_dominate() {
        let docs = vec![
            doc("a", "zebra runs fast"),
            doc("b", "lions sleep at night"),
            doc("c", "birds fly south"),
        ];
        let index = TfIdfIndex::build(&docs).unwrap();
        let ranked = index.retrieve("zebra", 3).unwrap();
        assert_eq!(ranked.entries[0].0, "a");
        assert!(ranked.entries[0].1 > ranked.entries[1].1);
    }

    #[test]
    fn disjoint_query_scores_zero_everywhere() {
        let docs = vec![doc("a", "alpha beta"), doc("b", "gamma delta")];
        let index = TfIdfIndex::build(&docs).unwrap();
        for id in ["a", "b"] {
            assert_eq!(index.score("omega sigma", id).unwrap(), 0.0);
        }
    }

    /// Brute-force oracle: recompute the declared formula from raw token
    /// counts and compare to 1e-9.
    #[test]
    fn scores_match_brute_force_formula_on_toy_corpus() {
        let docs = vec![
            doc("a", "the cat sat on the mat"),
            doc("b", "the dog sat"),
            doc("c", "a bird flew over the mat"),
        ];
        let index = TfIdfIndex::build(&docs).unwrap();
        let queries = ["the cat", "sat mat", "bird bird dog", "the the the"];

        for query in queries {
            for d in &docs {
                let got = index.score(query, &d.doc_id).unwrap();
                let want = brute_force_score(&docs, query, &d.doc_id);
                assert!(
                    (got - want).abs() < 1e-9,
                    "query {query:?} doc {} got {got} want {want}",
                    d.doc_id
                );
            }
        }
    }

    fn brute_force_score(docs: &[RuleDocument], query: &str, doc_id: &str) -> f64 {
        let n = docs.len() as f64;
        let doc_tokens: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&index_text(d))).collect();
        let df = |term: &str| -> f64 {
            doc_tokens
                .iter()
                .filter(|toks| toks.iter().any(|t| t == term))
                .count() as f64
        };
        let idf = |term: &str| ((1.0 + n) / (1.0 + df(term))).ln() + 1.0;
        let tf = |term: &str, toks: &[String]| toks.iter().filter(|t| *t == term).count() as f64;

        let d = docs.iter().position(|d| d.doc_id == doc_id).unwrap();
        let toks = &doc_tokens[d];
        // Document norm over its tf-idf vector.
        let mut seen: Vec<&String> = Vec::new();
        let mut norm_sq = 0.0;
        for t in toks {
            if !seen.contains(&t) {
                seen.push(t);
                let w = tf(t, toks) * idf(t);
                norm_sq += w * w;
            }
        }
        let norm = norm_sq.sqrt();

        let q = tokenize(query);
        let mut qseen: Vec<&String> = Vec::new();
        let mut score = 0.0;
        for t in &q {
            if !qseen.contains(&t) {
                qseen.push(t);
                let qtf = q.iter().filter(|x| *x == t).count() as f64;
                score += qtf * idf(t) * tf(t, toks);
            }
        }
        if norm > 0.0 {
            score / norm
        } else {
            0.0
        }
    }

    #[test]
    fn adding_an_unrelated_document_preserves_relative_order() {
        let docs = vec![
            doc("a", "cat cat dog"),
            doc("b", "cat dog dog"),
            doc("c", "cat mouse"),
        ];
        let index = TfIdfIndex::build(&docs).unwrap();
        let query = "cat dog";
        let before = index.retrieve(query, 3).unwrap();

        let mut extended = docs.clone();
        // No shared query terms.
        extended.push(doc("z", "quartz granite feldspar"));
        let index2 = TfIdfIndex::build(&extended).unwrap();
        let after = index2.retrieve(query, 4).unwrap();

        let order_before: Vec<&str> = before.doc_ids().collect();
        let order_after: Vec<&str> = after.doc_ids().filter(|id| *id != "z").collect();
        assert_eq!(order_before, order_after);
    }

    #[test]
    fn k_of_corpus_size_returns_all_and_k_zero_errors() {
        let docs = vec![doc("a", "x"), doc("b", "y")];
        let index = TfIdfIndex::build(&docs).unwrap();
        assert_eq!(index.retrieve("x", 2).unwrap().entries.len(), 2);
        assert_eq!(index.retrieve("x", 10).unwrap().entries.len(), 2);
        assert!(index.retrieve("x", 0).is_err());
    }

    #[test]
    fn ties_break_by_ascending_doc_id() {
        let docs = vec![doc("b", "same text"), doc("a", "same text"), doc("c", "same text")];
        let index = TfIdfIndex::build(&docs).unwrap();
        let ranked = index.retrieve("same", 3).unwrap();
        let ids: Vec<&str> = ranked.doc_ids().collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn recall_at_k_matches_hand_enumeration() {
        // Gold ranks {1, 2, 6, 30} (1-based).
        let make = |rank: usize| {
            let entries: Vec<(String, f64)> = (0..30)
                .map(|i| {
                    let id = if i + 1 == rank { "gold".to_string() } else { format!("d{i}") };
                    (id, 30.0 - i as f64)
                })
                .collect();
            (RankedList { entries }, "gold".to_string())
        };
        let results: Vec<(RankedList, String)> = [1, 2, 6, 30].map(make).into_iter().collect();
        assert_eq!(recall_at_k(&results, 1), 25.0);
        assert_eq!(recall_at_k(&results, 5), 50.0);
        assert_eq!(recall_at_k(&results, 10), 75.0);
        assert_eq!(recall_at_k(&results, 20), 75.0);
    }

    #[test]
    fn recall_edges() {
        let top = RankedList {
            entries: vec![("gold".into(), 1.0)],
        };
        let miss = RankedList {
            entries: vec![("other".into(), 1.0)],
        };
        let always: Vec<(RankedList, String)> =
            vec![(top.clone(), "gold".into()), (top, "gold".into())];
        for k in [1, 5, 10, 20] {
            assert_eq!(recall_at_k(&always, k), 100.0);
        }
        let never: Vec<(RankedList, String)> = vec![(miss, "gold".into())];
        assert_eq!(recall_at_k(&never, 20), 0.0);
    }

    #[test]
    fn recall_is_non_decreasing_in_k() {
        let docs: Vec<RuleDocument> = (0..20)
            .map(|i| doc(&format!("d{i}"), &format!("topic{} words here", i)))
            .collect();
        let index = TfIdfIndex::build(&docs).unwrap();
        let results: Vec<(RankedList, String)> = (0..20)
            .map(|i| {
                let q = format!("topic{} words", (i * 7) % 20);
                (index.retrieve(&q, 20).unwrap(), format!("d{}", (i * 3) % 20))
            })
            .collect();
        let mut last = 0.0;
        for k in 1..=20 {
            let r = recall_at_k(&results, k);
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn index_round_trips_through_disk() {
        let docs = vec![doc("a", "cat dog"), doc("b", "bird")];
        let index = TfIdfIndex::build(&docs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tfidf.json");
        index.save(&path).unwrap();
        let loaded = TfIdfIndex::load(&path).unwrap();
        assert_eq!(index.score("cat", "a").unwrap(), loaded.score("cat", "a").unwrap());
        assert_eq!(index.doc_ids(), loaded.doc_ids());
    }

    #[test]
    fn combine_scores_is_the_declared_linear_form() {
        assert_eq!(combine_scores(0.2, 0.9, 1.0), 0.2 + 0.9);
        assert_eq!(combine_scores(0.2, 0.9, 0.0), 0.2);
    }
}
