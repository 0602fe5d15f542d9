//! A small trainable late-interaction encoder.
//!
//! Token embeddings are looked up, optionally mixed by one single-head
//! softmax self-attention layer (no positional encoding, no residual),
//! projected to the output width, and each row is scaled to unit norm.
//! `encode_backward` returns exact gradients of a downstream scalar with
//! respect to every parameter.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::scoring::{augment_query, AugmentationMode};
use crate::types::EmbeddingMatrix;
use crate::vocab::{tokenize, TokenId, Vocab, DMARK};

pub const EMB: &str = "emb";
pub const ATT_Q: &str = "att_q";
pub const ATT_K: &str = "att_k";
pub const ATT_V: &str = "att_v";
pub const PROJ: &str = "proj";

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub mixer: bool,
    pub aug_mode: AugmentationMode,
    pub max_doc_len: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, hidden: usize, out_dim: usize, mixer: bool) -> Self {
        Self {
            vocab_size,
            hidden,
            out_dim,
            mixer,
            aug_mode: AugmentationMode::default(),
            max_doc_len: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.hidden == 0 || self.out_dim == 0 {
            return Err(Error::arg("encoder vocab_size, hidden and out_dim must be >= 1"));
        }
        if self.max_doc_len < 1 {
            return Err(Error::arg("max_doc_len must be >= 1"));
        }
        self.aug_mode.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

/// Encoder weights. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub emb: Matrix,
    pub attention: Option<Attention>,
    pub proj: Matrix,
}

impl EncoderParams {
    /// Seeded initialization: embeddings and projection from
    /// U(−1/√h, 1/√h), attention maps from U(−1/h, 1/h).
    pub fn init(config: &EncoderConfig, rng: &mut Rng) -> Self {
        let h = config.hidden;
        let wide = 1.0 / (h as f64).sqrt();
        let narrow = 1.0 / h as f64;
        let mut fill = |rows, cols, bound: f64| {
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect())
        };
        let emb = fill(config.vocab_size, h, wide);
        let attention = config.mixer.then(|| Attention {
            q: fill(h, h, narrow),
            k: fill(h, h, narrow),
            v: fill(h, h, narrow),
        });
        let proj = fill(h, config.out_dim, wide);
        Self { emb, attention, proj }
    }

    /// All-zero parameters with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        Self {
            emb: z(&self.emb),
            attention: self.attention.as_ref().map(|a| Attention {
                q: z(&a.q),
                k: z(&a.k),
                v: z(&a.v),
            }),
            proj: z(&self.proj),
        }
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = vec![(EMB, &self.emb)];
        if let Some(a) = &self.attention {
            out.extend([(ATT_Q, &a.q), (ATT_K, &a.k), (ATT_V, &a.v)]);
        }
        out.push((PROJ, &self.proj));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out = vec![(EMB, &mut self.emb)];
        if let Some(a) = &mut self.attention {
            out.extend([(ATT_Q, &mut a.q), (ATT_K, &mut a.k), (ATT_V, &mut a.v)]);
        }
        out.push((PROJ, &mut self.proj));
        out
    }

    /// Flat copies of every tensor, in [`tensors`](Self::tensors) order.
    pub fn to_flat(&self) -> Vec<Vec<f64>> {
        self.tensors().into_iter().map(|(_, m)| m.data.clone()).collect()
    }

    /// Overwrites every tensor from flat copies produced by [`to_flat`](Self::to_flat).
    pub fn assign_flat(&mut self, flat: &[Vec<f64>]) -> Result<()> {
        let mut views = self.tensors_mut();
        if views.len() != flat.len() || views.iter().zip(flat).any(|((_, m), f)| m.data.len() != f.len()) {
            return Err(Error::arg("flat tensors do not match encoder shapes"));
        }
        for ((_, m), f) in views.iter_mut().zip(flat) {
            m.data.copy_from_slice(f);
        }
        Ok(())
    }

    pub fn tensor_names(&self) -> Vec<&'static str> {
        self.tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn same_shape(&self, other: &EncoderParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ma), (nb, mb))| na == nb && ma.rows == mb.rows && ma.cols == mb.cols)
    }

    pub fn add_assign(&mut self, other: &EncoderParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale(c);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, m)| m.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.data.iter().all(|x| x.is_finite()))
    }

    /// Writes the parameters as f32 tensors under the fixed names.
    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        let mut ckpt = Checkpoint::new(meta);
        for (name, m) in self.tensors() {
            ckpt.insert(name, Tensor::from_f64(vec![m.rows, m.cols], &m.data).expect("shape matches"));
        }
        ckpt
    }

    /// Reads parameters from a checkpoint. Tensors with other names (for
    /// example optimizer state) are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let matrix = |name: &str| -> Result<Matrix> {
            let t = ckpt
                .get(name)
                .ok_or_else(|| Error::format(name, "missing encoder tensor"))?;
            if t.shape.len() != 2 {
                return Err(Error::format(name, format!("expected 2-d tensor, shape {:?}", t.shape)));
            }
            Ok(Matrix::from_vec(t.shape[0], t.shape[1], t.to_f64()))
        };
        let emb = matrix(EMB)?;
        let proj = matrix(PROJ)?;
        let attention = if ckpt.get(ATT_Q).is_some() {
            Some(Attention {
                q: matrix(ATT_Q)?,
                k: matrix(ATT_K)?,
                v: matrix(ATT_V)?,
            })
        } else {
            None
        };
        let h = emb.cols;
        let square = |m: &Matrix| m.rows == h && m.cols == h;
        if proj.rows != h || attention.as_ref().is_some_and(|a| !(square(&a.q) && square(&a.k) && square(&a.v))) {
            return Err(Error::format("tensors", "inconsistent encoder shapes"));
        }
        Ok(Self { emb, attention, proj })
    }

    /// Encoder configuration implied by the parameter shapes.
    pub fn config(&self, aug_mode: AugmentationMode, max_doc_len: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.emb.rows,
            hidden: self.emb.cols,
            out_dim: self.proj.cols,
            mixer: self.attention.is_some(),
            aug_mode,
            max_doc_len,
        }
    }

    fn check(&self, config: &EncoderConfig) -> Result<()> {
        let ok = self.emb.rows == config.vocab_size
            && self.emb.cols == config.hidden
            && self.proj.rows == config.hidden
            && self.proj.cols == config.out_dim
            && self.attention.is_some() == config.mixer;
        if ok {
            Ok(())
        } else {
            Err(Error::arg("encoder parameters do not match config"))
        }
    }
}

/// Tokenizes and augments a query: `[Q] tokens [MASK]*`.
pub fn prepare_query(text: &str, vocab: &Vocab, mode: AugmentationMode) -> Vec<TokenId> {
    augment_query(&tokenize(text, vocab), mode)
}

/// Tokenizes a document as `[D] tokens`, truncated to `max_doc_len` ids.
pub fn prepare_doc(text: &str, vocab: &Vocab, max_doc_len: usize) -> Vec<TokenId> {
    let mut out = vec![DMARK];
    out.extend(tokenize(text, vocab));
    out.truncate(max_doc_len.max(1));
    out
}

/// Intermediate values kept for the backward pass.
pub(crate) struct ForwardCache {
    x: Matrix,
    mixed: Option<MixCache>,
    /// Pre-normalization projections.
    y: Matrix,
    norms: Vec<f64>,
    out: Matrix,
}

struct MixCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Matrix,
    h: Matrix,
}

impl ForwardCache {
    pub(crate) fn embedding(&self) -> EmbeddingMatrix {
        let normalized = self.norms.iter().all(|&n| n >= DEGENERATE_NORM);
        EmbeddingMatrix::new(self.out.rows, self.out.cols, self.out.data.clone())
            .expect("encoder output is non-empty")
            .mark_normalized(normalized)
    }
}

fn softmax_rows(s: &mut Matrix) {
    for i in 0..s.rows {
        let row = s.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
}

fn validate_tokens(tokens: &[TokenId], config: &EncoderConfig, is_query: bool) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::arg("cannot encode an empty token list"));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::arg(format!(
            "token id {bad} out of range for vocab size {}",
            config.vocab_size
        )));
    }
    if !is_query && tokens.len() > config.max_doc_len {
        return Err(Error::arg(format!(
            "document has {} tokens, max_doc_len is {}",
            tokens.len(),
            config.max_doc_len
        )));
    }
    Ok(())
}

pub(crate) fn forward(
    tokens: &[TokenId],
    params: &EncoderParams,
    config: &EncoderConfig,
    is_query: bool,
) -> Result<ForwardCache> {
    params.check(config)?;
    validate_tokens(tokens, config, is_query)?;
    let h = config.hidden;
    let mut x = Matrix::zeros(tokens.len(), h);
    for (i, &t) in tokens.iter().enumerate() {
        x.row_mut(i).copy_from_slice(params.emb.row(t as usize));
    }

    let (mixed, hidden) = match &params.attention {
        Some(att) => {
            let q = x.matmul(&att.q);
            let k = x.matmul(&att.k);
            let v = x.matmul(&att.v);
            let mut attn = q.matmul_t(&k);
            attn.scale(1.0 / (h as f64).sqrt());
            softmax_rows(&mut attn);
            let hid = attn.matmul(&v);
            (
                Some(MixCache {
                    q,
                    k,
                    v,
                    attn,
                    h: hid.clone(),
                }),
                hid,
            )
        }
        None => (None, x.clone()),
    };

    let y = hidden.matmul(&params.proj);
    let mut out = y.clone();
    let mut norms = Vec::with_capacity(y.rows);
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n >= DEGENERATE_NORM {
            row.iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    Ok(ForwardCache {
        x,
        mixed,
        y,
        norms,
        out,
    })
}

pub(crate) fn backward(
    tokens: &[TokenId],
    params: &EncoderParams,
    cache: &ForwardCache,
    upstream: &Matrix,
    grads: &mut EncoderParams,
) {
    let h = params.emb.cols;
    // Row normalization: d(y/|y|) = (I − ŷŷᵀ)/|y|.
    let mut dy = upstream.clone();
    for i in 0..dy.rows {
        let n = cache.norms[i];
        if n < DEGENERATE_NORM {
            continue;
        }
        let yhat = cache.out.row(i);
        let row = dy.row_mut(i);
        let proj_along: f64 = row.iter().zip(yhat).map(|(g, y)| g * y).sum();
        for (g, y) in row.iter_mut().zip(yhat) {
            *g = (*g - proj_along * y) / n;
        }
    }
    debug_assert_eq!(cache.y.rows, dy.rows);

    let hidden = cache.mixed.as_ref().map_or(&cache.x, |m| &m.h);
    grads.proj.add_assign(&hidden.t_matmul(&dy));
    let dh = dy.matmul_t(&params.proj);

    let dx = match (&cache.mixed, &params.attention, &mut grads.attention) {
        (Some(mc), Some(att), Some(gatt)) => {
            let dattn = dh.matmul_t(&mc.v);
            let dv = mc.attn.t_matmul(&dh);
            // softmax Jacobian per row, then the 1/√h score scale
            let mut ds = Matrix::zeros(dattn.rows, dattn.cols);
            let scale = 1.0 / (h as f64).sqrt();
            for i in 0..ds.rows {
                let a = mc.attn.row(i);
                let da = dattn.row(i);
                let inner: f64 = a.iter().zip(da).map(|(p, g)| p * g).sum();
                for ((o, p), g) in ds.row_mut(i).iter_mut().zip(a).zip(da) {
                    *o = p * (g - inner) * scale;
                }
            }
            let dq = ds.matmul(&mc.k);
            let dk = ds.t_matmul(&mc.q);
            gatt.q.add_assign(&cache.x.t_matmul(&dq));
            gatt.k.add_assign(&cache.x.t_matmul(&dk));
            gatt.v.add_assign(&cache.x.t_matmul(&dv));
            let mut dx = dq.matmul_t(&att.q);
            dx.add_assign(&dk.matmul_t(&att.k));
            dx.add_assign(&dv.matmul_t(&att.v));
            dx
        }
        _ => dh,
    };

    for (i, &t) in tokens.iter().enumerate() {
        let src = dx.row(i);
        for (g, d) in grads.emb.row_mut(t as usize).iter_mut().zip(src) {
            *g += d;
        }
    }
}

/// Encodes a prepared token sequence into unit-norm rows.
///
/// Queries must already be augmented and documents must carry their marker;
/// see [`prepare_query`] and [`prepare_doc`].
pub fn encode(
    tokens: &[TokenId],
    params: &EncoderParams,
    config: &EncoderConfig,
    is_query: bool,
) -> Result<EmbeddingMatrix> {
    Ok(forward(tokens, params, config, is_query)?.embedding())
}

/// Gradient of `Σ upstream ⊙ encode(tokens)` with respect to every parameter.
pub fn encode_backward(
    tokens: &[TokenId],
    params: &EncoderParams,
    config: &EncoderConfig,
    is_query: bool,
    upstream: &EmbeddingMatrixGrad,
) -> Result<EncoderParams> {
    let cache = forward(tokens, params, config, is_query)?;
    if upstream.rows != cache.out.rows || upstream.cols != cache.out.cols {
        return Err(Error::arg(format!(
            "upstream gradient is {}x{}, encoder output is {}x{}",
            upstream.rows, upstream.cols, cache.out.rows, cache.out.cols
        )));
    }
    let mut grads = params.zeros_like();
    backward(tokens, params, &cache, upstream, &mut grads);
    Ok(grads)
}

/// Gradient with respect to an encoder output (rows × out_dim).
pub type EmbeddingMatrixGrad = Matrix;
