//! MaxSim late-interaction scoring and query augmentation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::EmbeddingMatrix;
use crate::vocab::{TokenId, MASK, QMARK};

/// How many `[MASK]` tokens to append to a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentationMode {
    /// No masks.
    None,
    /// Always append `k` masks.
    Fixed { k: usize },
    /// Pad (or truncate) to exactly `max_len` tokens.
    FixedMax { max_len: usize },
    /// Pad to the next multiple of `base`, appending at least `min_masks`.
    Dynamic { base: usize, min_masks: usize },
}

impl Default for AugmentationMode {
    fn default() -> Self {
        AugmentationMode::Dynamic {
            base: 32,
            min_masks: 8,
        }
    }
}

impl AugmentationMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentationMode::Dynamic { base: 0, .. } => Err(Error::arg("dynamic augmentation base must be >= 1")),
            AugmentationMode::FixedMax { max_len: 0 } => Err(Error::arg("fixed max length must be >= 1")),
            _ => Ok(()),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum over query rows of the best dot product against any document row.
pub fn maxsim(query: &EmbeddingMatrix, doc: &EmbeddingMatrix) -> Result<f64> {
    if query.dim() != doc.dim() {
        return Err(Error::arg(format!(
            "maxsim dimension mismatch: query {} vs doc {}",
            query.dim(),
            doc.dim()
        )));
    }
    Ok(query
        .iter_rows()
        .map(|q| {
            doc.iter_rows()
                .map(|d| dot(q, d))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum())
}

/// For each query row, the index of the first document row attaining the max.
pub(crate) fn maxsim_argmax(query: &EmbeddingMatrix, doc: &EmbeddingMatrix) -> Vec<usize> {
    query
        .iter_rows()
        .map(|q| {
            let mut best = (0, f64::NEG_INFINITY);
            for (j, d) in doc.iter_rows().enumerate() {
                let s = dot(q, d);
                if s > best.1 {
                    best = (j, s);
                }
            }
            best.0
        })
        .collect()
}

/// `maxsim(query, d)` for every `d`, in input order.
pub fn maxsim_batch(query: &EmbeddingMatrix, docs: &[EmbeddingMatrix]) -> Result<Vec<f64>> {
    docs.par_iter().map(|d| maxsim(query, d)).collect()
}

/// Query length after augmentation. `token_count` includes the query marker.
pub fn padded_query_length(token_count: usize, mode: AugmentationMode) -> usize {
    match mode {
        AugmentationMode::None => token_count,
        AugmentationMode::Fixed { k } => token_count + k,
        AugmentationMode::FixedMax { max_len } => max_len,
        AugmentationMode::Dynamic { base, min_masks } => {
            let padded = token_count.div_ceil(base) * base;
            if padded - token_count < min_masks {
                token_count + min_masks
            } else {
                padded
            }
        }
    }
}

/// `[Q] tokens [MASK]*`, sized by [`padded_query_length`].
///
/// Under `FixedMax`, queries longer than the limit are truncated first.
pub fn augment_query(tokens: &[TokenId], mode: AugmentationMode) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(tokens.len() + 1);
    out.push(QMARK);
    out.extend_from_slice(tokens);
    if let AugmentationMode::FixedMax { max_len } = mode {
        out.truncate(max_len.max(1));
    }
    let target = padded_query_length(out.len(), mode);
    out.resize(target.max(out.len()), MASK);
    out
}
