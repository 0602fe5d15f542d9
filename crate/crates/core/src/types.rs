//! Domain types shared across the toolkit.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token embedding rows for one query or document, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::arg(format!(
                "embedding matrix needs rows >= 1 and dim >= 1, got {rows}x{dim}"
            )));
        }
        if data.len() != rows * dim {
            return Err(Error::arg(format!(
                "embedding data has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            dim,
            data,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::arg("ragged embedding rows"));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    /// Scales every row to unit norm. Rows with norm below 1e-12 are left as
    /// is, in which case the matrix is not flagged normalized.
    pub fn normalized(mut self) -> Self {
        let mut all_ok = true;
        for row in self.data.chunks_exact_mut(self.dim) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                all_ok = false;
                continue;
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        self.normalized = all_ok;
        self
    }

    pub(crate) fn mark_normalized(mut self, flag: bool) -> Self {
        self.normalized = flag;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// One document in an n-way training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub text: String,
    pub teacher_scores: BTreeMap<String, f64>,
}

/// A query with an ordered n-way document list and per-teacher raw scores.
///
/// By convention `docs[0]` is the annotated positive. Only label-aware
/// objectives (MarginMSE, in-batch negatives) read that convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub query_id: String,
    pub query_text: String,
    pub docs: Vec<ScoredDoc>,
}

impl TripletRecord {
    pub fn n_way(&self) -> usize {
        self.docs.len()
    }

    /// Checks `n_way >= 2` and that every doc carries each teacher the record
    /// names anywhere.
    pub fn validate(&self) -> Result<()> {
        if self.docs.len() < 2 {
            return Err(Error::data(format!(
                "record {} has {} docs, need at least 2",
                self.query_id,
                self.docs.len()
            )));
        }
        let teachers: HashSet<&String> =
            self.docs.iter().flat_map(|d| d.teacher_scores.keys()).collect();
        for doc in &self.docs {
            for t in &teachers {
                if !doc.teacher_scores.contains_key(*t) {
                    return Err(Error::data(format!(
                        "record {}: doc {} has no score for teacher {t}",
                        self.query_id, doc.doc_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Raw scores of one teacher in document order.
    pub fn teacher_scores(&self, teacher: &str) -> Result<Vec<f64>> {
        self.docs
            .iter()
            .map(|d| {
                d.teacher_scores.get(teacher).copied().ok_or_else(|| {
                    Error::data(format!(
                        "record {}: doc {} has no score for teacher {teacher}",
                        self.query_id, d.doc_id
                    ))
                })
            })
            .collect()
    }
}

/// Graded relevance judgments: query id -> doc id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.judgments.iter().map(|(q, m)| (q.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Doc ids judged with grade > 0 for `query_id`.
    pub fn relevant(&self, query_id: &str) -> impl Iterator<Item = &str> {
        self.judgments
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.as_str()))
    }

    /// Keeps only the given queries.
    pub fn restrict<'a>(&self, queries: impl IntoIterator<Item = &'a str>) -> Qrels {
        let mut out = Qrels::new();
        for q in queries {
            if let Some(m) = self.judgments.get(q) {
                out.judgments.insert(q.to_string(), m.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Orders by descending score, then ascending doc id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// Ranked retrieval output: query id -> entries sorted by score (desc),
/// ties broken by ascending doc id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunList {
    ranked: BTreeMap<String, Vec<RunEntry>>,
}

impl RunList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the ranking for one query, sorting entries into canonical order.
    pub fn insert(&mut self, query_id: impl Into<String>, mut entries: Vec<RunEntry>) -> Result<()> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::data(format!(
                    "duplicate doc {} in run for query {query_id}",
                    e.doc_id
                )));
            }
            if e.score.is_nan() {
                return Err(Error::data(format!("NaN score for doc {} in query {query_id}", e.doc_id)));
            }
        }
        entries.sort_by(|a, b| rank_order(a.score, &a.doc_id, b.score, &b.doc_id));
        self.ranked.insert(query_id, entries);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.ranked.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.ranked.iter().map(|(q, v)| (q.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// A corpus document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// A query with its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}
