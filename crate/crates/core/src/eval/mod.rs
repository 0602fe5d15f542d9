//! Retrieval and evaluation: BM25, dev-set mining, exact MaxSim search and
//! ranking metrics.

pub mod bm25;
pub mod metrics;
pub mod search;

pub use bm25::{bm25_score, mine_small_devset, terms, Bm25Index, Bm25Params};
pub use metrics::{
    evaluate, hit_rate_at_k, map_at_k, mrr_at_k, ndcg_at_k, parse_metrics, recall_at_k, Gain, MetricKind,
    MetricReport, MetricSpec,
};
pub use search::{exact_search, search_queries, EncodedCorpus};
