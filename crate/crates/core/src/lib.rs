//! Late-interaction retrieval toolkit.
//!
//! Multi-vector (per-token) encoders scored with MaxSim, trained by
//! distilling teacher score distributions over n-way document lists, and
//! evaluated with standard ranking metrics. The pieces:
//!
//! - [`vocab`], [`types`], [`checkpoint`], [`io`], [`rng`]: shared data types,
//!   the whitespace tokenizer, the binary checkpoint format and the text
//!   formats (corpus JSON-lines, TREC qrels/runs, triplet JSON-lines).
//! - [`scoring`]: MaxSim and `[MASK]` query augmentation, including dynamic
//!   query length.
//! - [`encoder`]: a small embedding + attention + projection encoder with
//!   exact gradients.
//! - [`losses`]: min-max normalization, KL divergence, MarginMSE, mixed and
//!   in-batch-negative objectives.
//! - [`optim`]: AdamW, linear decay with warmup, schedule-free AdamW, clipping.
//! - [`training`]: the distillation loop, triplet downsampling, teacher
//!   ensembling, post-training mixes and checkpoint averaging.
//! - [`eval`]: BM25, dev-set mining, exact MaxSim search and IR metrics.
//! - [`harness`]: synthetic corpora with an oracle teacher and the ablation
//!   runner.
//! - [`cli`]: the `liforge` command-line front end.

pub mod checkpoint;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod optim;
pub mod rng;
pub mod scoring;
pub mod training;
pub mod types;
pub mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Tensor};
pub use error::{Error, Result};
pub use rng::Rng;
pub use types::{Document, EmbeddingMatrix, Qrels, Query, RunEntry, RunList, ScoredDoc, TripletRecord};
pub use vocab::{tokenize, Vocab};
