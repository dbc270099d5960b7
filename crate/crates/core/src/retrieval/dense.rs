//! Trainable dense retrieval: a shared-vocabulary bag-of-embeddings feeding
//! a two-layer feed-forward tower per side, trained contrastively with
//! TF-IDF-mined hard negatives (gold document excluded).

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, RuleDocument};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, clip_gradients, AdamState, Graph, NodeId, ParamId, ParamStore, Reduction, Tensor};
use crate::text::Vocab;

use super::{build_query, index_text, rank_and_truncate, RankedList, TfIdfIndex, INDEX_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Tower {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Tower {
    fn alloc(store: &mut ParamStore, rng: &mut ChaCha20Rng, prefix: &str, dim: usize) -> Tower {
        Tower {
            w1: store.alloc_weight(format!("{prefix}.w1"), rng, dim, dim),
            b1: store.alloc_bias(format!("{prefix}.b1"), dim),
            w2: store.alloc_weight(format!("{prefix}.w2"), rng, dim, dim),
            b2: store.alloc_bias(format!("{prefix}.b2"), dim),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w1 = g.param(store, self.w1);
        let b1 = g.param(store, self.b1);
        let w2 = g.param(store, self.w2);
        let b2 = g.param(store, self.b2);
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h)?;
        let out = g.matmul(h, w2)?;
        g.add_row(out, b2)
    }
}

/// The trainable dual encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseEncoder {
    pub dim: usize,
    vocab: Vocab,
    store: ParamStore,
    embedding: ParamId,
    query_tower: Tower,
    doc_tower: Tower,
}

impl DenseEncoder {
    pub fn new(vocab: Vocab, dim: usize, seed: u64) -> DenseEncoder {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embedding = store.alloc_weight("dense.embedding", &mut rng, vocab.len(), dim);
        let query_tower = Tower::alloc(&mut store, &mut rng, "dense.query", dim);
        let doc_tower = Tower::alloc(&mut store, &mut rng, "dense.doc", dim);
        DenseEncoder {
            dim,
            vocab,
            store,
            embedding,
            query_tower,
            doc_tower,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Bag-of-embeddings pooling: mean of token embedding rows, or zeros for
    /// an empty token list.
    fn pool(&self, g: &mut Graph, store_node: NodeId, text: &str) -> Result<NodeId> {
        let ids = self.vocab.encode(text);
        if ids.is_empty() {
            return Ok(g.leaf(Tensor::zeros(&[1, self.dim])));
        }
        let indices: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let rows = g.gather_rows(store_node, &indices)?;
        let ones = g.leaf(Tensor::from_vec(
            &[1, indices.len()],
            vec![1.0 / indices.len() as f64; indices.len()],
        )?);
        g.matmul(ones, rows)
    }

    fn encode(&self, g: &mut Graph, tower: &Tower, text: &str) -> Result<NodeId> {
        let emb = g.param(&self.store, self.embedding);
        let pooled = self.pool(g, emb, text)?;
        tower.forward(g, &self.store, pooled)
    }

    pub fn encode_query_node(&self, g: &mut Graph, text: &str) -> Result<NodeId> {
        self.encode(g, &self.query_tower, text)
    }

    pub fn encode_doc_node(&self, g: &mut Graph, text: &str) -> Result<NodeId> {
        self.encode(g, &self.doc_tower, text)
    }

    pub fn encode_query(&self, text: &str) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let node = self.encode_query_node(&mut g, text)?;
        Ok(g.value(node).data().to_vec())
    }

    pub fn encode_doc(&self, text: &str) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let node = self.encode_doc_node(&mut g, text)?;
        Ok(g.value(node).data().to_vec())
    }
}

/// Document vectors plus the encoder that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseIndex {
    version: u32,
    doc_ids: Vec<String>,
    doc_vectors: Vec<Vec<f64>>,
    pub encoder: DenseEncoder,
}

impl DenseIndex {
    /// Encode every document with the (typically trained) encoder.
    pub fn build(encoder: DenseEncoder, docs: &[RuleDocument]) -> Result<DenseIndex> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus("dense index".into()));
        }
        let mut doc_vectors = Vec::with_capacity(docs.len());
        for doc in docs {
            let v = encoder.encode_doc(&index_text(doc))?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { op: "dense encode" });
            }
            doc_vectors.push(v);
        }
        Ok(DenseIndex {
            version: INDEX_FORMAT_VERSION,
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            doc_vectors,
            encoder,
        })
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim
    }

    /// Dot product of the encoded query with one stored document vector.
    pub fn score(&self, query: &str, doc_id: &str) -> Result<f64> {
        let d = self
            .doc_ids
            .iter()
            .position(|id| id == doc_id)
            .ok_or_else(|| Error::UnknownDocId(doc_id.to_string()))?;
        let q = self.encoder.encode_query(query)?;
        Ok(dot(&q, &self.doc_vectors[d]))
    }

    pub fn score_all(&self, query: &str) -> Result<Vec<f64>> {
        let q = self.encoder.encode_query(query)?;
        Ok(self.doc_vectors.iter().map(|d| dot(&q, d)).collect())
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<RankedList> {
        if k < 1 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let scored: Vec<(usize, f64)> = self.score_all(query)?.into_iter().enumerate().collect();
        Ok(rank_and_truncate(scored, &self.doc_ids, k.min(self.doc_ids.len())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<DenseIndex> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut index: DenseIndex = serde_json::from_str(&raw)?;
        if index.version != INDEX_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported index version {}",
                index.version
            )));
        }
        index.encoder.vocab.rebuild_index();
        Ok(index)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseTrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_negatives: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for DenseTrainConfig {
    fn default() -> Self {
        DenseTrainConfig {
            dim: 64,
            epochs: 20,
            learning_rate: 2e-3,
            n_negatives: 4,
            batch_size: 8,
            clip_norm: 2.0,
            seed: 0,
        }
    }
}

/// Contrastive loss for one query against its positive and negatives:
/// -log softmax over [positive; negatives] with the positive at index 0.
fn contrastive_loss(
    encoder: &DenseEncoder,
    g: &mut Graph,
    query: &str,
    positive: &str,
    negatives: &[&str],
) -> Result<NodeId> {
    let q = encoder.encode_query_node(g, query)?;
    let mut doc_nodes = Vec::with_capacity(1 + negatives.len());
    doc_nodes.push(encoder.encode_doc_node(g, positive)?);
    for neg in negatives {
        doc_nodes.push(encoder.encode_doc_node(g, neg)?);
    }
    let docs = g.concat(0, &doc_nodes)?;
    let docs_t = g.transpose(docs)?;
    let scores = g.matmul(q, docs_t)?;
    g.cross_entropy(scores, &[0], None, Reduction::Sum)
}

/// Train the dual encoder on the train split and build the document index.
///
/// Hard negatives come from the TF-IDF ranking with the gold document
/// removed; examples whose query retrieves nothing still train against
/// random negatives drawn deterministically.
pub fn train_dense(
    docs: &[RuleDocument],
    split: &CorpusSplit,
    tfidf: &TfIdfIndex,
    config: &DenseTrainConfig,
) -> Result<(DenseIndex, Vec<f64>)> {
    if split.train.is_empty() {
        return Err(Error::InvalidArgument(
            "dense training requires a non-empty train split with gold_doc_id labels".into(),
        ));
    }
    let vocab = Vocab::build(
        docs.iter()
            .map(|d| index_text(d))
            .chain(split.train.iter().map(build_query))
            .collect::<Vec<String>>()
            .iter()
            .map(String::as_str),
    );
    let mut encoder = DenseEncoder::new(vocab, config.dim, config.seed);
    let mut adam = AdamState::new(encoder.store(), config.learning_rate);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x9e3779b97f4a7c15);

    // Mine hard negatives once; retrieval is frozen during training.
    let doc_text: std::collections::BTreeMap<&str, String> = docs
        .iter()
        .map(|d| (d.doc_id.as_str(), index_text(d)))
        .collect();
    let mut training_pairs: Vec<(String, String, Vec<String>)> = Vec::new();
    for ex in &split.train {
        let query = build_query(ex);
        let pool = tfidf.retrieve(&query, config.n_negatives + 1)?;
        let mut negatives: Vec<String> = pool
            .doc_ids()
            .filter(|id| *id != ex.gold_doc_id)
            .take(config.n_negatives)
            .map(|s| s.to_string())
            .collect();
        while negatives.len() < config.n_negatives.min(docs.len().saturating_sub(1)) {
            let cand = &docs[rng.gen_range(0..docs.len())].doc_id;
            if *cand != ex.gold_doc_id && !negatives.contains(cand) {
                negatives.push(cand.clone());
            }
        }
        training_pairs.push((query, ex.gold_doc_id.clone(), negatives));
    }

    let mut order: Vec<usize> = (0..training_pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut g = Graph::new();
            let mut batch_terms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (query, gold, negatives) = &training_pairs[i];
                let negs: Vec<&str> = negatives.iter().map(|n| doc_text[n.as_str()].as_str()).collect();
                let loss = contrastive_loss(&encoder, &mut g, query, &doc_text[gold.as_str()], &negs)?;
                batch_terms.push(loss);
            }
            let total = if batch_terms.len() == 1 {
                batch_terms[0]
            } else {
                let stacked = g.concat(1, &batch_terms)?;
                g.sum(stacked)?
            };
            let total = g.scale(total, 1.0 / chunk.len() as f64)?;
            g.backward(total)?;
            let mut grads = g.param_grads(encoder.store());
            clip_gradients(&mut grads, config.clip_norm);
            adam_step(encoder.store_mut(), &grads, &mut adam)?;
            epoch_loss += g.value(total).item() * chunk.len() as f64;
        }
        epoch_losses.push(epoch_loss / training_pairs.len() as f64);
    }

    let index = DenseIndex::build(encoder, docs)?;
    Ok((index, epoch_losses))
}
