//! Latent-topic synthetic corpora with an oracle teacher.
//!
//! Every vocabulary word owns a random unit vector in a latent topic space.
//! Documents come in small families sharing a center; each document and
//! query perturbs a family center and then samples a bag of words with
//! probability proportional to `exp(sharpness * cos(word, center))`. Graded
//! relevance and teacher scores come from the latent centers, never from
//! surface tokens.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::Rng;
use crate::types::{Document, Qrels, Query, ScoredDoc, TripletRecord};
use crate::vocab::Vocab;

/// Teacher name under which oracle scores are stored.
pub const ORACLE: &str = "oracle";

const MAX_FAMILY: usize = 5;
const MAX_POSITIVES: usize = 5;
const HARD_POOL: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub vocab_size: usize,
    pub n_docs: usize,
    /// Training queries; each gets triplet records.
    pub n_queries: usize,
    /// Held-out queries; judged but never used for training.
    pub heldout_queries: usize,
    pub topic_dim: usize,
    /// Inclusive word-count range for documents.
    pub doc_len: (usize, usize),
    /// Inclusive word-count range for queries.
    pub query_len: (usize, usize),
    pub teacher_noise_sigma: f64,
    pub n_way: usize,
    /// Perturbation size of item centers around their family center.
    pub spread: f64,
    /// Inverse temperature of word sampling.
    pub sharpness: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: 1000,
            n_docs: 2000,
            n_queries: 500,
            heldout_queries: 100,
            topic_dim: 64,
            doc_len: (20, 40),
            query_len: (4, 8),
            teacher_noise_sigma: 0.05,
            n_way: 4,
            spread: 0.3,
            sharpness: 20.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.vocab_size == 0 || self.n_docs == 0 || self.n_queries == 0 || self.topic_dim == 0 {
            return bad("vocab_size, n_docs, n_queries and topic_dim must be at least 1");
        }
        if self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return bad("doc_len must be a non-empty range of positive lengths");
        }
        if self.query_len.0 == 0 || self.query_len.0 > self.query_len.1 {
            return bad("query_len must be a non-empty range of positive lengths");
        }
        if !(self.teacher_noise_sigma >= 0.0) || !self.teacher_noise_sigma.is_finite() {
            return bad("teacher_noise_sigma must be finite and >= 0");
        }
        if self.n_way < 2 {
            return bad("n_way must be at least 2");
        }
        if !(self.spread >= 0.0 && self.sharpness >= 0.0) {
            return bad("spread and sharpness must be >= 0");
        }
        Ok(())
    }
}

/// A generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub vocab: Vocab,
    pub corpus: Vec<Document>,
    pub train_queries: Vec<Query>,
    pub heldout_queries: Vec<Query>,
    /// Judgments for train and held-out queries.
    pub qrels: Qrels,
    pub triplets: Vec<TripletRecord>,
    /// Latent cosine above which a document is relevant.
    pub threshold: f64,
    /// Latent centers, parallel to `corpus`.
    pub doc_centers: Vec<Vec<f64>>,
    /// Latent centers of train then held-out queries.
    pub query_centers: Vec<Vec<f64>>,
}

impl SynthData {
    pub fn all_queries(&self) -> impl Iterator<Item = &Query> {
        self.train_queries.iter().chain(&self.heldout_queries)
    }

    pub fn heldout_qrels(&self) -> Qrels {
        self.qrels.restrict(self.heldout_queries.iter().map(|q| q.id.as_str()))
    }

    /// Writes the dataset in the core file formats.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_corpus(dir.join("corpus.jsonl"), &self.corpus)?;
        io::write_queries(dir.join("queries.train.tsv"), &self.train_queries)?;
        io::write_queries(dir.join("queries.heldout.tsv"), &self.heldout_queries)?;
        io::write_qrels(dir.join("qrels.txt"), &self.qrels)?;
        io::write_triplets(dir.join("triplets.jsonl"), &self.triplets)?;
        io::write_vocab(dir.join("vocab.txt"), &self.vocab)
    }
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
    unit(&mut v);
    v
}

fn perturb(center: &[f64], spread: f64, rng: &mut Rng) -> Vec<f64> {
    let noise = random_unit(center.len(), rng);
    let mut v: Vec<f64> = center.iter().zip(&noise).map(|(c, n)| c + spread * n).collect();
    unit(&mut v);
    v
}

fn word(i: usize) -> String {
    format!("w{i:04}")
}

fn ids(prefix: &str, n: usize, offset: usize) -> Vec<String> {
    let width = (n + offset).max(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{:0width$}", i + offset)).collect()
}

fn sample_text(center: &[f64], words: &[Vec<f64>], spec: &SynthSpec, len: (usize, usize), rng: &mut Rng) -> String {
    let logits: Vec<f64> = words.iter().map(|w| spec.sharpness * dot(w, center)).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cumulative = Vec::with_capacity(words.len());
    let mut acc = 0.0;
    for l in &logits {
        acc += (l - top).exp();
        cumulative.push(acc);
    }
    let n = rng.between(len.0, len.1);
    (0..n)
        .map(|_| {
            let target = rng.uniform() * acc;
            let i = cumulative.partition_point(|&c| c <= target).min(words.len() - 1);
            word(i)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Threshold strictly below every query's best cosine and at or above every
/// query's `(MAX_POSITIVES + 1)`-th best, so each query gets 1 to 5 positives.
fn calibrate_threshold(cosines: &[Vec<f64>]) -> Result<f64> {
    let mut hi = f64::INFINITY;
    let mut lo = f64::NEG_INFINITY;
    for row in cosines {
        let mut sorted = row.clone();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        hi = hi.min(sorted[0]);
        if let Some(&next) = sorted.get(MAX_POSITIVES) {
            lo = lo.max(next);
        }
    }
    if lo < hi {
        Ok(if lo.is_finite() { 0.5 * (lo + hi) } else { hi - 1e-9 })
    } else {
        Err(Error::Generation(format!(
            "no cosine threshold gives every query 1..={MAX_POSITIVES} positives \
             (weakest best match {hi:.4}, strongest excess match {lo:.4}); \
             raise topic_dim or lower spread"
        )))
    }
}

/// Generates corpus, queries, judgments and oracle-scored triplets.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut latent = root.fork(1);
    let mut text_rng = root.fork(2);
    let mut triplet_rng = root.fork(3);
    let mut teacher_rng = root.fork(4);

    let words: Vec<Vec<f64>> = (0..spec.vocab_size).map(|_| random_unit(spec.topic_dim, &mut latent)).collect();
    let mut vocab = Vocab::new();
    for i in 0..spec.vocab_size {
        vocab.insert(&word(i));
    }

    let mut families: Vec<Vec<f64>> = Vec::new();
    let mut doc_centers = Vec::with_capacity(spec.n_docs);
    while doc_centers.len() < spec.n_docs {
        let center = random_unit(spec.topic_dim, &mut latent);
        let size = latent.between(1, MAX_FAMILY).min(spec.n_docs - doc_centers.len());
        for _ in 0..size {
            doc_centers.push(perturb(&center, spec.spread, &mut latent));
        }
        families.push(center);
    }
    let n_total = spec.n_queries + spec.heldout_queries;
    let query_centers: Vec<Vec<f64>> = (0..n_total)
        .map(|_| {
            let f = latent.below(families.len());
            perturb(&families[f], spec.spread, &mut latent)
        })
        .collect();

    let cosines: Vec<Vec<f64>> = query_centers
        .iter()
        .map(|q| doc_centers.iter().map(|d| dot(q, d)).collect())
        .collect();
    let threshold = calibrate_threshold(&cosines)?;

    let doc_ids = ids("d", spec.n_docs, 0);
    let corpus: Vec<Document> = doc_centers
        .iter()
        .zip(&doc_ids)
        .map(|(c, id)| Document {
            id: id.clone(),
            text: sample_text(c, &words, spec, spec.doc_len, &mut text_rng),
        })
        .collect();
    let query_ids = ids("q", n_total, 0);
    let queries: Vec<Query> = query_centers
        .iter()
        .zip(&query_ids)
        .map(|(c, id)| Query {
            id: id.clone(),
            text: sample_text(c, &words, spec, spec.query_len, &mut text_rng),
        })
        .collect();

    let mut qrels = Qrels::new();
    for (qi, row) in cosines.iter().enumerate() {
        for (di, &c) in row.iter().enumerate() {
            if c > threshold {
                qrels.insert(query_ids[qi].clone(), doc_ids[di].clone(), 1);
            }
        }
    }

    let n_neg = spec.n_way - 1;
    if spec.n_docs < spec.n_way {
        return Err(Error::Generation(format!(
            "n_way {} needs at least that many documents, have {}",
            spec.n_way, spec.n_docs
        )));
    }
    let mut triplets = Vec::new();
    for qi in 0..spec.n_queries {
        let row = &cosines[qi];
        let mut order: Vec<usize> = (0..spec.n_docs).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let split = order.iter().position(|&d| row[d] <= threshold).unwrap_or(order.len());
        let (positives, negatives) = order.split_at(split);
        if negatives.len() < n_neg {
            return Err(Error::Generation(format!(
                "query {} has only {} non-relevant documents, need {n_neg}",
                query_ids[qi],
                negatives.len()
            )));
        }
        let hard_pool = &negatives[..negatives.len().min(HARD_POOL)];
        for &pos in positives {
            let n_hard = n_neg.div_ceil(2).min(hard_pool.len());
            let mut chosen: Vec<usize> = triplet_rng
                .sample_indices(hard_pool.len(), n_hard)
                .into_iter()
                .map(|i| hard_pool[i])
                .collect();
            while chosen.len() < n_neg {
                let d = negatives[triplet_rng.below(negatives.len())];
                if !chosen.contains(&d) {
                    chosen.push(d);
                }
            }
            let docs = std::iter::once(pos)
                .chain(chosen)
                .map(|d| {
                    let noise = if spec.teacher_noise_sigma > 0.0 {
                        spec.teacher_noise_sigma * teacher_rng.gaussian()
                    } else {
                        0.0
                    };
                    ScoredDoc {
                        doc_id: doc_ids[d].clone(),
                        text: corpus[d].text.clone(),
                        teacher_scores: BTreeMap::from([(ORACLE.to_string(), row[d] + noise)]),
                    }
                })
                .collect();
            triplets.push(TripletRecord {
                query_id: query_ids[qi].clone(),
                query_text: queries[qi].text.clone(),
                docs,
            });
        }
    }

    let heldout_queries = queries[spec.n_queries..].to_vec();
    let mut train_queries = queries;
    train_queries.truncate(spec.n_queries);
    Ok(SynthData {
        spec: spec.clone(),
        vocab,
        corpus,
        train_queries,
        heldout_queries,
        qrels,
        triplets,
        threshold,
        doc_centers,
        query_centers,
    })
}
