//! Ranking metrics: NDCG, MRR, Recall, MAP and hit rate at a cutoff.
//!
//! A document is relevant when its grade is above zero. Queries whose
//! judgments contain no relevant document are left out of every mean and
//! listed in [`MetricReport::excluded`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{Qrels, RunEntry, RunList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Ndcg,
    Mrr,
    Recall,
    Map,
    HitRate,
}

impl MetricKind {
    fn name(self) -> &'static str {
        match self {
            MetricKind::Ndcg => "ndcg",
            MetricKind::Mrr => "mrr",
            MetricKind::Recall => "recall",
            MetricKind::Map => "map",
            MetricKind::HitRate => "hit_rate",
        }
    }
}

/// A metric with its cutoff, written `ndcg@10`, `mrr@10`, `recall@5`,
/// `map@100`, `hit_rate@10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub k: usize,
}

impl MetricSpec {
    pub fn new(kind: MetricKind, k: usize) -> Self {
        Self { kind, k }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind.name(), self.k)
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = s
            .split_once('@')
            .ok_or_else(|| Error::arg(format!("metric {s:?} must look like name@K")))?;
        let kind = match name.to_ascii_lowercase().as_str() {
            "ndcg" => MetricKind::Ndcg,
            "mrr" => MetricKind::Mrr,
            "recall" => MetricKind::Recall,
            "map" => MetricKind::Map,
            "hit_rate" | "hitrate" | "hits" => MetricKind::HitRate,
            other => return Err(Error::arg(format!("unknown metric {other:?}"))),
        };
        let k: usize = k
            .parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| Error::arg(format!("metric cutoff in {s:?} must be a positive integer")))?;
        Ok(Self { kind, k })
    }
}

pub fn parse_metrics(list: &str) -> Result<Vec<MetricSpec>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect()
}

/// NDCG gain function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade − 1
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => f64::from(grade),
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

fn grade(judged: &BTreeMap<String, u32>, doc: &str) -> u32 {
    judged.get(doc).copied().unwrap_or(0)
}

/// DCG of the top `k` against the ideal ordering of all judged grades.
pub fn ndcg(ranked: &[RunEntry], judged: &BTreeMap<String, u32>, k: usize, gain: Gain) -> f64 {
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| gain.apply(grade(judged, &e.doc_id)) * discount(i))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| gain.apply(g) * discount(i)).sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// Reciprocal rank of the first relevant document within `k`, else 0.
pub fn reciprocal_rank(ranked: &[RunEntry], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|e| grade(judged, &e.doc_id) > 0)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

fn n_relevant(judged: &BTreeMap<String, u32>) -> usize {
    judged.values().filter(|&&g| g > 0).count()
}

pub fn recall(ranked: &[RunEntry], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let total = n_relevant(judged);
    if total == 0 {
        return 0.0;
    }
    let found = ranked.iter().take(k).filter(|e| grade(judged, &e.doc_id) > 0).count();
    found as f64 / total as f64
}

/// Sum of precision at each relevant rank within `k`, over min(|relevant|, k).
pub fn average_precision(ranked: &[RunEntry], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let total = n_relevant(judged);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in ranked.iter().take(k).enumerate() {
        if grade(judged, &e.doc_id) > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total.min(k) as f64
}

pub fn hit_rate(ranked: &[RunEntry], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    if ranked.iter().take(k).any(|e| grade(judged, &e.doc_id) > 0) {
        1.0
    } else {
        0.0
    }
}

fn per_query(spec: MetricSpec, ranked: &[RunEntry], judged: &BTreeMap<String, u32>, gain: Gain) -> f64 {
    match spec.kind {
        MetricKind::Ndcg => ndcg(ranked, judged, spec.k, gain),
        MetricKind::Mrr => reciprocal_rank(ranked, judged, spec.k),
        MetricKind::Recall => recall(ranked, judged, spec.k),
        MetricKind::Map => average_precision(ranked, judged, spec.k),
        MetricKind::HitRate => hit_rate(ranked, judged, spec.k),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricEntry {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricEntry>,
    /// Run queries with no relevant judgments.
    pub excluded: Vec<String>,
    order: Vec<String>,
}

impl MetricReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|m| m.mean)
    }

    /// Metric names in the order they were requested.
    pub fn names(&self) -> &[String] {
        &self.order
    }

    /// One `metric<TAB>mean<TAB>queries` row per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for name in &self.order {
            let m = &self.metrics[name];
            s.push_str(&format!("{name}\t{:.6}\t{}\n", m.mean, m.per_query.len()));
        }
        if !self.excluded.is_empty() {
            s.push_str(&format!("excluded_queries\t{}\n", self.excluded.len()));
        }
        s
    }

    /// One JSON object per metric.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for name in &self.order {
            let m = &self.metrics[name];
            let row = serde_json::json!({
                "metric": name,
                "mean": m.mean,
                "queries": m.per_query.len(),
                "excluded": self.excluded.len(),
                "per_query": m.per_query,
            });
            s.push_str(&row.to_string());
            s.push('\n');
        }
        s
    }
}

/// Evaluates `run` against `qrels` for each metric.
pub fn evaluate(run: &RunList, qrels: &Qrels, metrics: &[MetricSpec], gain: Gain) -> Result<MetricReport> {
    let mut excluded = Vec::new();
    let mut scored: Vec<(&str, &[RunEntry], &BTreeMap<String, u32>)> = Vec::new();
    for (qid, ranked) in run.iter() {
        let judged = qrels
            .get(qid)
            .ok_or_else(|| Error::data(format!("run query {qid} has no qrels")))?;
        if n_relevant(judged) == 0 {
            excluded.push(qid.to_string());
        } else {
            scored.push((qid, ranked, judged));
        }
    }
    let mut out = BTreeMap::new();
    let mut order = Vec::new();
    for &spec in metrics {
        let per_query: BTreeMap<String, f64> = scored
            .iter()
            .map(|(q, ranked, judged)| (q.to_string(), per_query(spec, ranked, judged, gain)))
            .collect();
        let mean = if per_query.is_empty() {
            0.0
        } else {
            per_query.values().sum::<f64>() / per_query.len() as f64
        };
        let name = spec.to_string();
        if !out.contains_key(&name) {
            order.push(name.clone());
        }
        out.insert(name, MetricEntry { per_query, mean });
    }
    Ok(MetricReport {
        metrics: out,
        excluded,
        order,
    })
}

macro_rules! single_metric {
    ($(#[$doc:meta])* $name:ident, $kind:expr) => {
        $(#[$doc])*
        pub fn $name(run: &RunList, qrels: &Qrels, k: usize) -> Result<MetricReport> {
            evaluate(run, qrels, &[MetricSpec::new($kind, k)], Gain::Linear)
        }
    };
}

single_metric!(ndcg_at_k, MetricKind::Ndcg);
single_metric!(mrr_at_k, MetricKind::Mrr);
single_metric!(recall_at_k, MetricKind::Recall);
single_metric!(map_at_k, MetricKind::Map);
single_metric!(hit_rate_at_k, MetricKind::HitRate);
