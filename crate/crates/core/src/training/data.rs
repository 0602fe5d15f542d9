//! Triplet downsampling, teacher ensembling and post-training data mixes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_triplets;
use crate::losses::minmax_normalize;
use crate::rng::Rng;
use crate::types::TripletRecord;

/// Samples `n_triplets` records without replacement and shrinks each to
/// `target_nway` documents: the first document plus `target_nway − 1`
/// uniformly chosen others. Output keeps source order.
pub fn downsample_triplets(
    src: &[TripletRecord],
    n_triplets: usize,
    target_nway: usize,
    rng: &mut Rng,
) -> Result<Vec<TripletRecord>> {
    if n_triplets > src.len() {
        return Err(Error::arg(format!(
            "cannot sample {n_triplets} triplets from {} records",
            src.len()
        )));
    }
    if target_nway < 2 {
        return Err(Error::arg("target n_way must be >= 2"));
    }
    let mut picked = rng.sample_indices(src.len(), n_triplets);
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let rec = &src[i];
            let n = rec.docs.len();
            if n < target_nway {
                return Err(Error::arg(format!(
                    "record {} has {n} docs, fewer than target {target_nway}",
                    rec.query_id
                )));
            }
            let mut negatives: Vec<usize> = rng
                .sample_indices(n - 1, target_nway - 1)
                .into_iter()
                .map(|j| j + 1)
                .collect();
            negatives.sort_unstable();
            let mut docs = Vec::with_capacity(target_nway);
            docs.push(rec.docs[0].clone());
            docs.extend(negatives.into_iter().map(|j| rec.docs[j].clone()));
            Ok(TripletRecord {
                query_id: rec.query_id.clone(),
                query_text: rec.query_text.clone(),
                docs,
            })
        })
        .collect()
}

/// Min-max normalizes each teacher's scores over the record's documents,
/// then averages across teachers.
pub fn ensemble_teacher_scores(record: &TripletRecord, teachers: &[String]) -> Result<Vec<f64>> {
    if teachers.is_empty() {
        return Err(Error::arg("no teachers to ensemble"));
    }
    let mut sum = vec![0.0; record.docs.len()];
    for teacher in teachers {
        let scores = record.teacher_scores(teacher)?;
        let normalized = minmax_normalize(&scores)?;
        sum.iter_mut().zip(&normalized.values).for_each(|(s, v)| *s += v);
    }
    let k = teachers.len() as f64;
    Ok(sum.into_iter().map(|s| s / k).collect())
}

/// Teacher scores used as distillation targets: raw scores for a single
/// teacher, the normalized ensemble for several.
pub fn target_scores(record: &TripletRecord, teachers: &[String]) -> Result<Vec<f64>> {
    match teachers {
        [single] => record.teacher_scores(single),
        _ => ensemble_teacher_scores(record, teachers),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSource {
    pub path: PathBuf,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainInjection {
    pub path: PathBuf,
    /// Share of the final stream made of pretraining records.
    pub fraction: f64,
}

/// Post-training mix description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub datasets: Vec<MixSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_pretrain: Option<PretrainInjection>,
    /// Records drawn from the weighted datasets; defaults to their total size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<usize>,
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::arg("mix needs at least one dataset"));
        }
        if let Some(bad) = self.datasets.iter().find(|d| !(d.weight > 0.0)) {
            return Err(Error::arg(format!("mix weight for {} must be > 0", bad.path.display())));
        }
        if let Some(inj) = &self.inject_pretrain {
            if !(0.0..1.0).contains(&inj.fraction) {
                return Err(Error::arg(format!("pretrain fraction must be in [0, 1), got {}", inj.fraction)));
            }
        }
        Ok(())
    }
}

/// Reads every dataset named in `spec` and builds the mix.
pub fn build_posttrain_mix(spec: &MixSpec, rng: &mut Rng) -> Result<Vec<TripletRecord>> {
    spec.validate()?;
    let datasets = spec
        .datasets
        .iter()
        .map(|d| Ok((read_triplets(&d.path)?, d.weight)))
        .collect::<Result<Vec<_>>>()?;
    let pretrain = spec
        .inject_pretrain
        .as_ref()
        .map(|p| Ok::<_, Error>((read_triplets(&p.path)?, p.fraction)))
        .transpose()?;
    mix_records(datasets, pretrain, spec.total, rng)
}

/// Largest-remainder apportionment of `total` items by `weights`.
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Smooth weighted round-robin over sources with the given counts: every
/// prefix of the output stays within one item of the target proportions.
fn interleave_order(counts: &[usize]) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let mut current = vec![0i64; counts.len()];
    let mut remaining = counts.to_vec();
    let mut order = Vec::with_capacity(total);
    for _ in 0..total {
        for (c, &w) in current.iter_mut().zip(counts) {
            *c += w as i64;
        }
        let pick = (0..counts.len())
            .filter(|&i| remaining[i] > 0)
            .max_by(|&a, &b| current[a].cmp(&current[b]).then(b.cmp(&a)))
            .expect("some source has items left");
        current[pick] -= total as i64;
        remaining[pick] -= 1;
        order.push(pick);
    }
    order
}

/// `count` records from a shuffled copy of `records`, cycling if needed.
fn draw(records: &[TripletRecord], count: usize, rng: &mut Rng) -> Vec<TripletRecord> {
    let mut perm: Vec<usize> = (0..records.len()).collect();
    rng.shuffle(&mut perm);
    (0..count).map(|i| records[perm[i % perm.len()]].clone()).collect()
}

/// In-memory mix: apportions `total` (default: all records) across datasets by
/// weight, interleaves them, then optionally injects pretraining records so
/// they make up `fraction` of the final stream.
pub fn mix_records(
    datasets: Vec<(Vec<TripletRecord>, f64)>,
    pretrain: Option<(Vec<TripletRecord>, f64)>,
    total: Option<usize>,
    rng: &mut Rng,
) -> Result<Vec<TripletRecord>> {
    if datasets.is_empty() {
        return Err(Error::data("mix has no datasets"));
    }
    if let Some(i) = datasets.iter().position(|(r, _)| r.is_empty()) {
        return Err(Error::data(format!("mix dataset {i} is empty")));
    }
    let weights: Vec<f64> = datasets.iter().map(|(_, w)| *w).collect();
    let total = total.unwrap_or_else(|| datasets.iter().map(|(r, _)| r.len()).sum());
    let counts = apportion(&weights, total);

    let mut pools: Vec<std::vec::IntoIter<TripletRecord>> = datasets
        .iter()
        .zip(&counts)
        .map(|((records, _), &c)| draw(records, c, rng).into_iter())
        .collect();
    let main: Vec<TripletRecord> = interleave_order(&counts)
        .into_iter()
        .map(|i| pools[i].next().expect("apportioned"))
        .collect();

    let Some((pre, fraction)) = pretrain else {
        return Ok(main);
    };
    if pre.is_empty() {
        return Err(Error::data("pretrain injection dataset is empty"));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::arg(format!("pretrain fraction must be in [0, 1), got {fraction}")));
    }
    let n_pre = (fraction * main.len() as f64 / (1.0 - fraction)).round() as usize;
    let mut pools = [main.into_iter(), draw(&pre, n_pre, rng).into_iter()];
    let sizes = [pools[0].len(), n_pre];
    Ok(interleave_order(&sizes)
        .into_iter()
        .map(|i| pools[i].next().expect("apportioned"))
        .collect())
}
