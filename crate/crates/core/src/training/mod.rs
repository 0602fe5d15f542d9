//! Distillation training: the batch loop, data preparation, and checkpoint
//! averaging.

mod data;
mod merge;

pub use data::{
    apportion, build_posttrain_mix, downsample_triplets, ensemble_teacher_scores, mix_records,
    target_scores, MixSource, MixSpec, PretrainInjection,
};
pub use merge::average_checkpoints;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::encoder::{backward, forward, prepare_doc, prepare_query, EncoderConfig, EncoderParams, ForwardCache};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{distillation_loss, ibneg_loss, LossConfig};
use crate::optim::{OptimConfig, Optimizer};
use crate::rng::Rng;
use crate::scoring::{maxsim, maxsim_argmax, AugmentationMode};
use crate::types::{EmbeddingMatrix, TripletRecord};
use crate::vocab::{TokenId, Vocab};

const INIT_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub hidden: usize,
    pub out_dim: usize,
    pub mixer: bool,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            hidden: 32,
            out_dim: 16,
            mixer: true,
        }
    }
}

/// Every training knob. Defaults are the full-scale recipe: 32-way records,
/// batches of 16, dynamic query length, KL divergence on min-max normalized
/// scores, schedule-free AdamW at 3e-5 with 5% warmup and no clipping,
/// documents capped at 300 tokens, a checkpoint every 2,000 steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_way: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub aug_mode: AugmentationMode,
    pub max_doc_len: usize,
    /// One name uses that teacher's raw scores; several are ensembled.
    pub teachers: Vec<String>,
    pub encoder: EncoderSettings,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    /// Also write optimizer accumulators into each checkpoint.
    pub save_optimizer_state: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_way: 32,
            batch_size: 16,
            total_steps: 0,
            checkpoint_every: 2000,
            seed: 0,
            aug_mode: AugmentationMode::default(),
            max_doc_len: 300,
            teachers: vec!["oracle".to_string()],
            encoder: EncoderSettings::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            save_optimizer_state: false,
        }
    }
}

impl TrainConfig {
    /// The default recipe shrunk to run in seconds on synthetic data: 4-way
    /// records, a learning rate suited to the toy encoder, and no attention
    /// mixer (the residual-free mixer averages token identity away and
    /// barely trains at this scale).
    pub fn desk_scale() -> Self {
        Self {
            n_way: 4,
            total_steps: 1000,
            checkpoint_every: 250,
            encoder: EncoderSettings {
                mixer: false,
                ..EncoderSettings::default()
            },
            optim: OptimConfig {
                lr: 1e-2,
                ..OptimConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::arg("n_way must be >= 2"));
        }
        if self.batch_size < 1 {
            return Err(Error::arg("batch_size must be >= 1"));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::arg("checkpoint_every must be >= 1"));
        }
        if self.teachers.is_empty() {
            return Err(Error::arg("at least one teacher is required"));
        }
        self.aug_mode.validate()?;
        self.loss.validate()?;
        self.optim.validate()
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden: self.encoder.hidden,
            out_dim: self.encoder.out_dim,
            mixer: self.encoder.mixer,
            aug_mode: self.aug_mode,
            max_doc_len: self.max_doc_len,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Seeded initial parameters for `config`.
pub fn init_params(config: &TrainConfig, vocab: &Vocab) -> EncoderParams {
    let enc = config.encoder_config(vocab.len());
    EncoderParams::init(&enc, &mut Rng::new(config.seed).fork(INIT_STREAM))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Initial checkpoint, one per `checkpoint_every` steps, and the final one.
    pub checkpoints: Vec<Checkpoint>,
    pub trace: Vec<TraceRow>,
    /// Final evaluation parameters.
    pub params: EncoderParams,
    pub skipped_batches: u64,
    pub skipped_examples: u64,
}

impl TrainOutcome {
    /// `step<TAB>loss<TAB>lr` lines.
    pub fn trace_tsv(&self) -> String {
        self.trace.iter().fold(String::new(), |mut s, r| {
            let _ = writeln!(s, "{}\t{}\t{}", r.step, r.loss, r.lr);
            s
        })
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_text(path, &self.trace_tsv())
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("at least the initial checkpoint")
    }
}

/// A record tokenized and ready for the encoder.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub query: Vec<TokenId>,
    pub docs: Vec<Vec<TokenId>>,
    pub targets: Vec<f64>,
}

/// Tokenizes a record and resolves its teacher targets. When the objective
/// does not read the positive label, documents are put into a canonical
/// (doc id) order so that the record's original ordering has no effect.
pub fn prepare_record(record: &TripletRecord, config: &TrainConfig, vocab: &Vocab) -> Result<PreparedRecord> {
    if record.docs.len() != config.n_way {
        return Err(Error::data(format!(
            "record {} has {} docs, config n_way is {}",
            record.query_id,
            record.docs.len(),
            config.n_way
        )));
    }
    let targets = target_scores(record, &config.teachers)?;
    let mut order: Vec<usize> = (0..record.docs.len()).collect();
    if !config.loss.uses_labels() {
        order.sort_by(|&a, &b| {
            let (da, db) = (&record.docs[a], &record.docs[b]);
            da.doc_id
                .cmp(&db.doc_id)
                .then_with(|| da.text.cmp(&db.text))
                .then_with(|| targets[a].total_cmp(&targets[b]))
        });
    }
    Ok(PreparedRecord {
        query: prepare_query(&record.query_text, vocab, config.aug_mode),
        docs: order
            .iter()
            .map(|&j| prepare_doc(&record.docs[j].text, vocab, config.max_doc_len))
            .collect(),
        targets: order.iter().map(|&j| targets[j]).collect(),
    })
}

struct ExampleForward {
    query: ForwardCache,
    query_emb: EmbeddingMatrix,
    docs: Vec<ForwardCache>,
    doc_embs: Vec<EmbeddingMatrix>,
    loss: f64,
    score_grad: Vec<f64>,
}

/// Accumulates `weight · ∂maxsim(q, d)` into the upstream gradients of both sides.
fn maxsim_backward(
    q: &EmbeddingMatrix,
    d: &EmbeddingMatrix,
    weight: f64,
    dq: &mut Matrix,
    dd: &mut Matrix,
) {
    if weight == 0.0 {
        return;
    }
    for (i, j) in maxsim_argmax(q, d).into_iter().enumerate() {
        for (g, v) in dq.row_mut(i).iter_mut().zip(d.row(j)) {
            *g += weight * v;
        }
        for (g, v) in dd.row_mut(j).iter_mut().zip(q.row(i)) {
            *g += weight * v;
        }
    }
}

/// Loss and parameter gradient of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: EncoderParams,
    pub used: usize,
    pub skipped: usize,
}

/// Mean distillation loss over the non-degenerate examples of `batch` (plus
/// the in-batch-negatives term when enabled) and its exact gradient.
/// Returns `None` when every example is degenerate.
pub fn batch_gradient(
    params: &EncoderParams,
    enc: &EncoderConfig,
    loss_cfg: &LossConfig,
    batch: &[&PreparedRecord],
) -> Result<Option<BatchGradient>> {
    let forwards: Vec<Option<ExampleForward>> = batch
        .par_iter()
        .map(|rec| -> Result<Option<ExampleForward>> {
            let query = forward(&rec.query, params, enc, true)?;
            let query_emb = query.embedding();
            let docs = rec
                .docs
                .iter()
                .map(|d| forward(d, params, enc, false))
                .collect::<Result<Vec<_>>>()?;
            let doc_embs: Vec<EmbeddingMatrix> = docs.iter().map(ForwardCache::embedding).collect();
            let scores = doc_embs
                .iter()
                .map(|d| maxsim(&query_emb, d))
                .collect::<Result<Vec<_>>>()?;
            let out = distillation_loss(&scores, &rec.targets, loss_cfg)?;
            if out.degenerate {
                return Ok(None);
            }
            Ok(Some(ExampleForward {
                query,
                query_emb,
                docs,
                doc_embs,
                loss: out.loss,
                score_grad: out.grad,
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    let used: Vec<(usize, ExampleForward)> = forwards
        .into_iter()
        .enumerate()
        .filter_map(|(i, f)| f.map(|f| (i, f)))
        .collect();
    let skipped = batch.len() - used.len();
    if used.is_empty() {
        return Ok(None);
    }
    let b = used.len() as f64;

    let mut upstream: Vec<(Matrix, Vec<Matrix>)> = used
        .par_iter()
        .map(|(_, ex)| {
            let mut dq = Matrix::zeros(ex.query_emb.rows(), ex.query_emb.dim());
            let mut dds: Vec<Matrix> = ex
                .doc_embs
                .iter()
                .map(|d| Matrix::zeros(d.rows(), d.dim()))
                .collect();
            for ((d, dd), g) in ex.doc_embs.iter().zip(&mut dds).zip(&ex.score_grad) {
                maxsim_backward(&ex.query_emb, d, g / b, &mut dq, dd);
            }
            (dq, dds)
        })
        .collect();

    let mut loss = used.iter().map(|(_, ex)| ex.loss).sum::<f64>() / b;

    if loss_cfg.ibneg_enabled && used.len() >= 2 {
        let scores: Vec<Vec<f64>> = used
            .iter()
            .map(|(_, qi)| {
                used.iter()
                    .map(|(_, pj)| maxsim(&qi.query_emb, &pj.doc_embs[0]))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let (ib_loss, ib_grad) = ibneg_loss(&scores)?;
        loss += ib_loss;
        let mut dq_ib: Vec<Matrix> = upstream.iter().map(|(dq, _)| Matrix::zeros(dq.rows, dq.cols)).collect();
        let mut dd_ib: Vec<Matrix> = upstream.iter().map(|(_, dd)| Matrix::zeros(dd[0].rows, dd[0].cols)).collect();
        for (i, (_, qi)) in used.iter().enumerate() {
            for (j, (_, pj)) in used.iter().enumerate() {
                maxsim_backward(&qi.query_emb, &pj.doc_embs[0], ib_grad[i][j], &mut dq_ib[i], &mut dd_ib[j]);
            }
        }
        for ((up, dq), dd) in upstream.iter_mut().zip(&dq_ib).zip(&dd_ib) {
            up.0.add_assign(dq);
            up.1[0].add_assign(dd);
        }
    }

    let partials: Vec<EncoderParams> = used
        .par_iter()
        .zip(upstream.par_iter())
        .map(|((idx, ex), (dq, dds))| {
            let rec = batch[*idx];
            let mut g = params.zeros_like();
            backward(&rec.query, params, &ex.query, dq, &mut g);
            for ((tokens, cache), dd) in rec.docs.iter().zip(&ex.docs).zip(dds) {
                backward(tokens, params, cache, dd, &mut g);
            }
            g
        })
        .collect();
    let mut grads = params.zeros_like();
    for g in &partials {
        grads.add_assign(g);
    }
    Ok(Some(BatchGradient {
        loss,
        grads,
        used: used.len(),
        skipped,
    }))
}

/// Step-by-step driver behind [`train`].
pub struct Trainer {
    config: TrainConfig,
    enc: EncoderConfig,
    records: Vec<PreparedRecord>,
    params: EncoderParams,
    optimizer: Optimizer,
    data_rng: Rng,
    order: Vec<usize>,
    cursor: usize,
    step: u64,
    digest: String,
    skipped_batches: u64,
    skipped_examples: u64,
}

impl Trainer {
    pub fn new(config: &TrainConfig, data: &[TripletRecord], vocab: &Vocab, init: EncoderParams) -> Result<Self> {
        config.validate()?;
        let enc = config.encoder_config(vocab.len());
        enc.validate()?;
        if !init.same_shape(&init_params(config, vocab)) {
            return Err(Error::arg("initial parameters do not match the encoder config"));
        }
        if data.is_empty() && config.total_steps > 0 {
            return Err(Error::data("no training records"));
        }
        let records = data
            .iter()
            .map(|r| prepare_record(r, config, vocab))
            .collect::<Result<Vec<_>>>()?;
        let optimizer = Optimizer::new(config.optim, config.total_steps, &init.to_flat())?;
        Ok(Self {
            config: config.clone(),
            enc,
            records,
            params: init,
            optimizer,
            data_rng: Rng::new(config.seed).fork(DATA_STREAM),
            order: Vec::new(),
            cursor: 0,
            step: 0,
            digest: config.digest(),
            skipped_batches: 0,
            skipped_examples: 0,
        })
    }

    /// Current evaluation parameters.
    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn records(&self) -> &[PreparedRecord] {
        &self.records
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.enc
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..self.records.len()).collect();
                self.data_rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// Loss of `batch` under `params` without touching optimizer state.
    pub fn batch_loss(&self, params: &EncoderParams, batch: &[usize]) -> Result<Option<f64>> {
        let recs: Vec<&PreparedRecord> = batch.iter().map(|&i| &self.records[i]).collect();
        Ok(batch_gradient(params, &self.enc, &self.config.loss, &recs)?.map(|g| g.loss))
    }

    /// One optimizer update on the given record indices. Returns the trace
    /// row, or `None` when the whole batch was degenerate and skipped.
    pub fn step_on(&mut self, batch: &[usize]) -> Result<Option<TraceRow>> {
        self.step += 1;
        let mut at = self.params.clone();
        at.assign_flat(&self.optimizer.gradient_point(&self.params.to_flat())?)?;
        let recs: Vec<&PreparedRecord> = batch.iter().map(|&i| &self.records[i]).collect();
        let Some(bg) = batch_gradient(&at, &self.enc, &self.config.loss, &recs)? else {
            self.skipped_batches += 1;
            self.skipped_examples += batch.len() as u64;
            return Ok(None);
        };
        self.skipped_examples += bg.skipped as u64;
        if !bg.loss.is_finite() || !bg.grads.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        let mut flat = self.params.to_flat();
        let lr = self.optimizer.step(&mut flat, bg.grads.to_flat())?;
        self.params.assign_flat(&flat)?;
        Ok(Some(TraceRow {
            step: self.step,
            loss: bg.loss,
            lr,
        }))
    }

    /// One update on the next batch from the shuffled data stream.
    pub fn step(&mut self) -> Result<Option<TraceRow>> {
        let batch = self.next_batch();
        self.step_on(&batch)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.params.to_checkpoint(CheckpointMeta {
            step: self.step,
            seed: self.config.seed,
            config_digest: self.digest.clone(),
            merged_from: Vec::new(),
        });
        if self.config.save_optimizer_state {
            self.optimizer
                .state()
                .write_tensors(&self.params.tensor_names(), &mut ckpt);
        }
        ckpt
    }
}

/// Runs the full loop and returns every saved checkpoint.
pub fn train(
    config: &TrainConfig,
    data: &[TripletRecord],
    vocab: &Vocab,
    init: EncoderParams,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, data, vocab, init)?;
    let mut checkpoints = vec![trainer.checkpoint()];
    let mut trace = Vec::with_capacity(config.total_steps as usize);
    while trainer.step < config.total_steps {
        if let Some(row) = trainer.step()? {
            trace.push(row);
        }
        if trainer.step % config.checkpoint_every == 0 || trainer.step == config.total_steps {
            checkpoints.push(trainer.checkpoint());
        }
    }
    Ok(TrainOutcome {
        checkpoints,
        trace,
        skipped_batches: trainer.skipped_batches,
        skipped_examples: trainer.skipped_examples,
        params: trainer.params,
    })
}
