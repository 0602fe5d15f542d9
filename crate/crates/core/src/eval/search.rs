//! Exact MaxSim search over an encoded corpus.

use rayon::prelude::*;

use crate::encoder::{encode, prepare_doc, prepare_query, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::scoring::maxsim;
use crate::types::{rank_order, Document, EmbeddingMatrix, Query, RunEntry, RunList};
use crate::vocab::Vocab;

/// Documents with their token embeddings.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    pub ids: Vec<String>,
    pub embeddings: Vec<EmbeddingMatrix>,
}

impl EncodedCorpus {
    pub fn new(ids: Vec<String>, embeddings: Vec<EmbeddingMatrix>) -> Result<Self> {
        if ids.len() != embeddings.len() {
            return Err(Error::arg("corpus ids and embeddings differ in length"));
        }
        if let Some(first) = embeddings.first() {
            if embeddings.iter().any(|e| e.dim() != first.dim()) {
                return Err(Error::arg("corpus embeddings have mixed dimensions"));
            }
        }
        Ok(Self { ids, embeddings })
    }

    pub fn encode(docs: &[Document], params: &EncoderParams, config: &EncoderConfig, vocab: &Vocab) -> Result<Self> {
        let embeddings = docs
            .par_iter()
            .map(|d| encode(&prepare_doc(&d.text, vocab, config.max_doc_len), params, config, false))
            .collect::<Result<Vec<_>>>()?;
        Self::new(docs.iter().map(|d| d.id.clone()).collect(), embeddings)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Top `k` documents by MaxSim, score descending, ties by ascending doc id.
pub fn exact_search(query: &EmbeddingMatrix, corpus: &EncodedCorpus, k: usize) -> Result<Vec<RunEntry>> {
    if k < 1 {
        return Err(Error::arg("k must be >= 1"));
    }
    let scores = corpus
        .embeddings
        .par_iter()
        .map(|d| maxsim(query, d))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| rank_order(scores[a], &corpus.ids[a], scores[b], &corpus.ids[b]));
    order.truncate(k);
    Ok(order
        .into_iter()
        .map(|i| RunEntry {
            doc_id: corpus.ids[i].clone(),
            score: scores[i],
        })
        .collect())
}

/// Encodes every query and searches the corpus, producing a run.
pub fn search_queries(
    queries: &[Query],
    corpus: &EncodedCorpus,
    params: &EncoderParams,
    config: &EncoderConfig,
    vocab: &Vocab,
    k: usize,
) -> Result<RunList> {
    let results = queries
        .par_iter()
        .map(|q| {
            let emb = encode(&prepare_query(&q.text, vocab, config.aug_mode), params, config, true)?;
            exact_search(&emb, corpus, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut run = RunList::new();
    for (q, entries) in queries.iter().zip(results) {
        run.insert(q.id.clone(), entries)?;
    }
    Ok(run)
}
