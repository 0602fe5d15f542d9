//! Train-and-evaluate over a grid of recipe variants.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::metrics::{evaluate, Gain, MetricReport, MetricSpec};
use crate::eval::search::{search_queries, EncodedCorpus};
use crate::harness::synth::SynthData;
use crate::training::{init_params, train, TrainConfig};

/// One named recipe variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub name: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub seed: u64,
    /// Held-out metrics of the initialization, before any step.
    pub untrained: BTreeMap<String, f64>,
    pub trained: BTreeMap<String, f64>,
    pub final_checkpoint: Checkpoint,
    pub skipped_batches: u64,
}

impl AblationRow {
    pub fn delta(&self, metric: &str) -> Option<f64> {
        Some(self.trained.get(metric)? - self.untrained.get(metric)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub metrics: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Tab-separated table: one row per cell, trained and untrained columns
    /// per metric.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("config\tseed");
        for m in &self.metrics {
            s.push_str(&format!("\t{m}\tuntrained_{m}\tdelta_{m}"));
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(&format!("{}\t{}", row.name, row.seed));
            for m in &self.metrics {
                s.push_str(&format!(
                    "\t{:.6}\t{:.6}\t{:+.6}",
                    row.trained[m],
                    row.untrained[m],
                    row.delta(m).unwrap_or(f64::NAN)
                ));
            }
            s.push('\n');
        }
        s
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn means(report: &MetricReport) -> BTreeMap<String, f64> {
    report.metrics.iter().map(|(k, v)| (k.clone(), v.mean)).collect()
}

/// Held-out metrics of `params` with exact search over the whole corpus.
pub fn evaluate_heldout(
    params: &EncoderParams,
    config: &EncoderConfig,
    data: &SynthData,
    metrics: &[MetricSpec],
) -> Result<MetricReport> {
    let depth = metrics.iter().map(|m| m.k).max().unwrap_or(10);
    let corpus = EncodedCorpus::encode(&data.corpus, params, config, &data.vocab)?;
    let run = search_queries(&data.heldout_queries, &corpus, params, config, &data.vocab, depth)?;
    evaluate(&run, &data.heldout_qrels(), metrics, Gain::Linear)
}

fn run_cell(cell: &AblationCell, data: &SynthData, metrics: &[MetricSpec]) -> Result<AblationRow> {
    let config = &cell.config;
    let init = init_params(config, &data.vocab);
    let enc = config.encoder_config(data.vocab.len());
    let untrained = means(&evaluate_heldout(&init, &enc, data, metrics)?);
    let outcome = train(config, &data.triplets, &data.vocab, init)?;
    let trained = means(&evaluate_heldout(&outcome.params, &enc, data, metrics)?);
    Ok(AblationRow {
        name: cell.name.clone(),
        seed: config.seed,
        untrained,
        trained,
        final_checkpoint: outcome.final_checkpoint().clone(),
        skipped_batches: outcome.skipped_batches,
    })
}

/// Trains every cell on the shared data and evaluates it on the held-out
/// split. Cells with equal seeds and encoder settings start from the same
/// parameters. Output order follows `grid`.
pub fn run_ablation(grid: &[AblationCell], data: &SynthData, metrics: &[MetricSpec]) -> Result<AblationTable> {
    if grid.is_empty() {
        return Err(Error::arg("ablation grid is empty"));
    }
    if metrics.is_empty() {
        return Err(Error::arg("ablation needs at least one metric"));
    }
    let rows = grid
        .par_iter()
        .map(|cell| run_cell(cell, data, metrics))
        .collect::<Result<Vec<_>>>()?;
    let mut names: Vec<String> = Vec::new();
    for m in metrics {
        let n = m.to_string();
        if !names.contains(&n) {
            names.push(n);
        }
    }
    Ok(AblationTable { metrics: names, rows })
}
