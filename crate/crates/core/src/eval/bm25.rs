//! Okapi BM25 over an inverted index, and BM25-based dev-set mining.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{rank_order, Document, Qrels, Query};

/// Lowercased whitespace terms, the same split the tokenizer uses.
pub fn terms(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Inverted index. Documents are numbered in ascending doc-id order, so
/// postings sorted by number are also sorted by doc id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build(docs: &[Document], params: Bm25Params) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::arg("cannot index an empty corpus"));
        }
        let mut sorted: Vec<&Document> = docs.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::data(format!("duplicate doc id {}", w[0].id)));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(sorted.len());
        for (n, doc) in sorted.iter().enumerate() {
            let words = terms(&doc.text);
            doc_lens.push(words.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for w in words {
                *tf.entry(w).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: n as u32,
                    tf: count,
                });
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| u64::from(l)).sum();
        if total == 0 {
            return Err(Error::data("corpus has no terms; average document length would be 0"));
        }
        Ok(Self {
            params,
            doc_ids: sorted.iter().map(|d| d.id.clone()).collect(),
            doc_lens,
            avg_len: total as f64 / sorted.len() as f64,
            postings,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// `ln(1 + (N − df + 0.5)/(df + 0.5))`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let len_norm = 1.0 - b + b * f64::from(self.doc_lens[doc]) / self.avg_len;
        tf * (k1 + 1.0) / (tf + k1 * len_norm)
    }

    fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()
    }

    /// BM25 score of one document for `query_terms`.
    pub fn score(&self, query_terms: &[String], doc_id: &str) -> Result<f64> {
        let doc = self
            .doc_index(doc_id)
            .ok_or_else(|| Error::arg(format!("unknown doc id {doc_id}")))?;
        Ok(query_terms
            .iter()
            .map(|t| {
                let posts = self.postings(t);
                match posts.binary_search_by_key(&(doc as u32), |p| p.doc) {
                    Ok(i) => self.idf(t) * self.term_weight(posts[i].tf, doc),
                    Err(_) => 0.0,
                }
            })
            .sum())
    }

    /// Top `k` documents with a positive score, best first, ties by doc id.
    pub fn search(&self, query_terms: &[String], k: usize) -> Vec<(String, f64)> {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in query_terms {
            let idf = self.idf(t);
            for p in self.postings(t) {
                *acc.entry(p.doc).or_default() += idf * self.term_weight(p.tf, p.doc as usize);
            }
        }
        let mut hits: Vec<(String, f64)> = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(d, s)| (self.doc_ids[d as usize].clone(), s))
            .collect();
        hits.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        hits.truncate(k);
        hits
    }
}

/// Free-function form of [`Bm25Index::score`].
pub fn bm25_score(query_terms: &[String], doc_id: &str, index: &Bm25Index) -> Result<f64> {
    index.score(query_terms, doc_id)
}

/// Builds a compact dev corpus: the union of every query's BM25 top `depth`
/// plus every positively judged document. Qrels pass through unchanged.
pub fn mine_small_devset(
    queries: &[Query],
    qrels: &Qrels,
    corpus: &[Document],
    index: &Bm25Index,
    depth: usize,
) -> (Vec<Document>, Qrels) {
    let mut keep: BTreeSet<String> = BTreeSet::new();
    for q in queries {
        keep.extend(index.search(&terms(&q.text), depth).into_iter().map(|(id, _)| id));
    }
    for (qid, _) in qrels.iter() {
        keep.extend(qrels.relevant(qid).map(str::to_string));
    }
    let sub = corpus.iter().filter(|d| keep.contains(&d.id)).cloned().collect();
    (sub, qrels.clone())
}
