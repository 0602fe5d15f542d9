//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown:
//! `cargo test --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{matrix, naive_maxsim, random_rows, Brute};
use liforge::encoder::{encode, encode_backward, EncoderConfig, EncoderParams};
use liforge::eval::bm25::{mine_small_devset, Bm25Index, Bm25Params};
use liforge::eval::metrics::{evaluate, Gain, MetricKind, MetricSpec};
use liforge::eval::search::{exact_search, EncodedCorpus};
use liforge::harness::{generate, run_ablation, AblationCell, SynthSpec};
use liforge::linalg::Matrix;
use liforge::losses::{ibneg_loss, kl_div_loss, margin_mse_loss, minmax_normalize, mixed_loss, LossConfig, LossKind};
use liforge::scoring::{maxsim, padded_query_length, AugmentationMode};
use liforge::training::{
    average_checkpoints, batch_gradient, ensemble_teacher_scores, prepare_record, train, PreparedRecord,
    TrainConfig,
};
use liforge::types::rank_order;
use liforge::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Document, Qrels, Query, Rng, RunEntry, RunList,
    ScoredDoc, Tensor, TripletRecord, Vocab,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

const EPS: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 20;

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + EPS;
            let up = f(&x);
            x[i] = orig - EPS;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

/// Smallest gap between distinct values; kinks of min-max normalization
/// and MaxSim sit where two values meet.
fn min_gap(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

fn scores_instance(rng: &mut Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let s: Vec<f64> = (0..n).map(|_| 2.0 * rng.gaussian()).collect();
        let t: Vec<f64> = (0..n).map(|_| 2.0 * rng.gaussian()).collect();
        if min_gap(&s) > 1e-2 && min_gap(&t) > 1e-2 {
            return (s, t);
        }
    }
}

fn loss_configs() -> Vec<(&'static str, LossConfig)> {
    let mut out = Vec::new();
    for (nt, ns) in [(true, true), (false, false), (true, false), (false, true)] {
        for temperature in [1.0, 0.5] {
            out.push((
                "kl",
                LossConfig {
                    kind: LossKind::KlDiv,
                    normalize_teacher: nt,
                    normalize_student: ns,
                    temperature,
                    ..LossConfig::default()
                },
            ));
        }
    }
    out
}

fn grad_losses() -> Outcome {
    let mut rng = Rng::new(101);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    type LossFn = fn(&[f64], &[f64], &LossConfig) -> liforge::Result<liforge::losses::LossOutput>;
    let mixed: LossFn = |s, t, c| mixed_loss(s, t, 0.3, c);
    let fns: [(&str, LossFn); 3] = [("kl_div_loss", kl_div_loss), ("margin_mse_loss", margin_mse_loss), ("mixed_loss", mixed)];
    for (name, f) in fns {
        for (_, cfg) in loss_configs() {
            for _ in 0..INSTANCES {
                let n = rng.between(2, 8);
                let (s, t) = scores_instance(&mut rng, n);
                let out = f(&s, &t, &cfg).map_err(|e| e.to_string())?;
                let num = central_diff(&s, |x| f(x, &t, &cfg).unwrap().loss);
                let e = rel_err(&out.grad, &num);
                ensure(e < GRAD_TOL, || format!("{name}: relative error {e:.2e} on {s:?}"))?;
                worst = worst.max(e);
                checked += 1;
            }
        }
    }
    for _ in 0..INSTANCES {
        let b = rng.between(2, 6);
        let m: Vec<Vec<f64>> = (0..b).map(|_| (0..b).map(|_| 3.0 * rng.gaussian()).collect()).collect();
        let (_, grad) = ibneg_loss(&m).map_err(|e| e.to_string())?;
        let flat: Vec<f64> = m.concat();
        let num = central_diff(&flat, |x| {
            let mm: Vec<Vec<f64>> = x.chunks(b).map(<[f64]>::to_vec).collect();
            ibneg_loss(&mm).unwrap().0
        });
        let e = rel_err(&grad.concat(), &num);
        ensure(e < GRAD_TOL, || format!("ibneg_loss: relative error {e:.2e}"))?;
        worst = worst.max(e);
        checked += 1;
    }
    Ok(format!("{checked} loss instances, worst relative error {worst:.2e}"))
}

fn flat_params(p: &EncoderParams) -> Vec<f64> {
    p.to_flat().concat()
}

fn unflat(template: &EncoderParams, x: &[f64]) -> EncoderParams {
    let mut p = template.clone();
    let mut offset = 0;
    let shapes: Vec<usize> = template.to_flat().iter().map(Vec::len).collect();
    let parts: Vec<Vec<f64>> = shapes
        .iter()
        .map(|&n| {
            let part = x[offset..offset + n].to_vec();
            offset += n;
            part
        })
        .collect();
    p.assign_flat(&parts).unwrap();
    p
}

fn grad_encoder() -> Outcome {
    let mut rng = Rng::new(202);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for mixer in [false, true] {
        for is_query in [true, false] {
            for _ in 0..INSTANCES {
                let config = EncoderConfig::new(10, 5, 3, mixer);
                let params = EncoderParams::init(&config, &mut rng);
                // larger weights make the attention non-uniform
                let params = unflat(&params, &flat_params(&params).iter().map(|x| 3.0 * x).collect::<Vec<_>>());
                let n = rng.between(1, 6);
                let tokens: Vec<u32> = (0..n).map(|_| rng.below(10) as u32).collect();
                let upstream = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.gaussian()).collect());
                let objective = |p: &EncoderParams| -> f64 {
                    let e = encode(&tokens, p, &config, is_query).unwrap();
                    e.as_slice().iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
                };
                let analytic = flat_params(&encode_backward(&tokens, &params, &config, is_query, &upstream).unwrap());
                let num = central_diff(&flat_params(&params), |x| objective(&unflat(&params, x)));
                let e = rel_err(&analytic, &num);
                ensure(e < GRAD_TOL, || {
                    format!("encoder (mixer={mixer}, query={is_query}): relative error {e:.2e}")
                })?;
                worst = worst.max(e);
                checked += 1;
            }
        }
    }
    // Whole pipeline: encoder → MaxSim → loss (with in-batch negatives).
    let words: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
    let mut vocab = Vocab::new();
    for w in &words {
        vocab.insert(w);
    }
    for ibneg in [false, true] {
        for kind in [LossKind::KlDiv, LossKind::MarginMse, LossKind::Mixed { lambda: 0.5 }] {
            let mut done = 0;
            while done < INSTANCES {
                let mut cfg = TrainConfig::desk_scale();
                cfg.n_way = 3;
                cfg.aug_mode = AugmentationMode::Fixed { k: 2 };
                cfg.encoder.hidden = 4;
                cfg.encoder.out_dim = 3;
                cfg.encoder.mixer = rng.below(2) == 1;
                cfg.loss.kind = kind;
                cfg.loss.ibneg_enabled = ibneg;
                let text = |rng: &mut Rng, n: usize| {
                    (0..n).map(|_| words[rng.below(words.len())].as_str()).collect::<Vec<_>>().join(" ")
                };
                let records: Vec<PreparedRecord> = (0..2)
                    .map(|qi| {
                        let rec = TripletRecord {
                            query_id: format!("q{qi}"),
                            query_text: text(&mut rng, 2),
                            docs: (0..3)
                                .map(|j| ScoredDoc {
                                    doc_id: format!("d{qi}{j}"),
                                    text: text(&mut rng, 3),
                                    teacher_scores: BTreeMap::from([("oracle".to_string(), rng.gaussian())]),
                                })
                                .collect(),
                        };
                        prepare_record(&rec, &cfg, &vocab).unwrap()
                    })
                    .collect();
                let enc = cfg.encoder_config(vocab.len());
                let params = liforge::training::init_params(&cfg, &vocab);
                let params = unflat(&params, &flat_params(&params).iter().map(|x| 2.0 * x).collect::<Vec<_>>());
                if !pipeline_is_smooth(&params, &enc, &records) {
                    continue;
                }
                let batch: Vec<&PreparedRecord> = records.iter().collect();
                let Some(bg) = batch_gradient(&params, &enc, &cfg.loss, &batch).unwrap() else {
                    continue;
                };
                let num = central_diff(&flat_params(&params), |x| {
                    batch_gradient(&unflat(&params, x), &enc, &cfg.loss, &batch).unwrap().unwrap().loss
                });
                let e = rel_err(&flat_params(&bg.grads), &num);
                ensure(e < GRAD_TOL, || format!("pipeline ({kind:?}, ibneg={ibneg}): relative error {e:.2e}"))?;
                worst = worst.max(e);
                done += 1;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} encoder/pipeline instances, worst relative error {worst:.2e}"))
}

/// True when every MaxSim max and every score list is clear of ties by a
/// margin a finite-difference step cannot cross.
fn pipeline_is_smooth(params: &EncoderParams, enc: &EncoderConfig, records: &[PreparedRecord]) -> bool {
    let queries: Vec<_> = records.iter().map(|r| encode(&r.query, params, enc, true).unwrap()).collect();
    let docs: Vec<Vec<_>> = records
        .iter()
        .map(|r| r.docs.iter().map(|d| encode(d, params, enc, false).unwrap()).collect())
        .collect();
    for (qi, q) in queries.iter().enumerate() {
        let mut all_scores = Vec::new();
        for d in docs.iter().flatten() {
            for row in q.iter_rows() {
                let dots: Vec<f64> = d.iter_rows().map(|r| r.iter().zip(row).map(|(a, b)| a * b).sum()).collect();
                let mut s = dots.clone();
                s.sort_by(|a, b| b.total_cmp(a));
                if s.len() > 1 && s[0] - s[1] < 1e-3 {
                    return false;
                }
            }
            all_scores.push(maxsim(q, d).unwrap());
        }
        let own: Vec<f64> = docs[qi].iter().map(|d| maxsim(q, d).unwrap()).collect();
        if min_gap(&own) < 1e-3 || min_gap(&all_scores) < 1e-4 {
            return false;
        }
    }
    true
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let a = grad_losses()?;
    let b = grad_encoder()?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("gradient suite took {secs:.1}s"))?;
    Ok(format!("{a}; {b}; {secs:.1}s"))
}

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(303);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dim = rng.between(1, 16);
        let (qn, dn) = (rng.between(1, 12), rng.between(1, 40));
        let q = random_rows(&mut rng, qn, dim);
        let d = random_rows(&mut rng, dn, dim);
        let got = maxsim(&matrix(&q), &matrix(&d)).map_err(|e| e.to_string())?;
        let want = naive_maxsim(&q, &d);
        worst = worst.max((got - want).abs());
    }
    ensure(worst < 1e-6, || format!("maxsim deviates by {worst:.2e}"))?;
    for c in 0..50 {
        let dim = rng.between(2, 8);
        let q = random_rows(&mut rng, 4, dim);
        let docs: Vec<Vec<Vec<f64>>> = (0..200)
            .map(|_| {
                let rows = rng.between(1, 6);
                random_rows(&mut rng, rows, dim)
            })
            .collect();
        let ids: Vec<String> = (0..200).map(|i| format!("doc{:03}", (i * 37) % 200)).collect();
        let corpus = EncodedCorpus::new(ids.clone(), docs.iter().map(|d| matrix(d)).collect()).unwrap();
        let k = [1, 10, 200, 500][c % 4];
        let got = exact_search(&matrix(&q), &corpus, k).map_err(|e| e.to_string())?;
        let mut oracle: Vec<(f64, String)> = docs.iter().zip(&ids).map(|(d, id)| (naive_maxsim(&q, d), id.clone())).collect();
        oracle.sort_by(|a, b| rank_order(a.0, &a.1, b.0, &b.1));
        oracle.truncate(k);
        ensure(got.len() == oracle.len(), || format!("corpus {c}: {} results, want {}", got.len(), oracle.len()))?;
        for (g, (s, id)) in got.iter().zip(&oracle) {
            ensure(&g.doc_id == id && (g.score - s).abs() < 1e-6, || {
                format!("corpus {c}: got {} {:.9}, want {id} {s:.9}", g.doc_id, g.score)
            })?;
        }
    }
    Ok(format!("1000 pairs (max deviation {worst:.1e}) and 50 corpora of 200 docs agree"))
}

fn run_from(ranked: &BTreeMap<String, Vec<String>>) -> RunList {
    let mut run = RunList::new();
    for (q, docs) in ranked {
        let n = docs.len() as f64;
        run.insert(
            q.clone(),
            docs.iter()
                .enumerate()
                .map(|(i, d)| RunEntry {
                    doc_id: d.clone(),
                    score: n - i as f64,
                })
                .collect(),
        )
        .unwrap();
    }
    run
}

fn criterion_3() -> Outcome {
    let mut rng = Rng::new(404);
    let mut compared = 0;
    for _ in 0..200 {
        let n_q = rng.between(1, 10);
        let mut ranked = BTreeMap::new();
        let mut qrels = Qrels::new();
        let mut grades: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for qi in 0..n_q {
            let q = format!("q{qi}");
            let pool = rng.between(1, 20);
            let mut docs: Vec<String> = (0..pool).map(|d| format!("d{d}")).collect();
            rng.shuffle(&mut docs);
            docs.truncate(rng.between(1, pool));
            let mut g = BTreeMap::new();
            for d in 0..pool + 3 {
                if rng.below(3) == 0 {
                    let grade = rng.between(0, 3) as u32;
                    qrels.insert(q.clone(), format!("d{d}"), grade);
                    g.insert(format!("d{d}"), grade);
                }
            }
            if g.is_empty() {
                qrels.insert(q.clone(), "d0".to_string(), 1);
                g.insert("d0".to_string(), 1);
            }
            ranked.insert(q.clone(), docs);
            grades.insert(q, g);
        }
        let run = run_from(&ranked);
        let k = rng.between(1, 25);
        for exponential in [false, true] {
            let gain = if exponential { Gain::Exponential } else { Gain::Linear };
            let specs = [MetricKind::Ndcg, MetricKind::Mrr, MetricKind::Recall, MetricKind::Map, MetricKind::HitRate]
                .map(|kind| MetricSpec::new(kind, k));
            let report = evaluate(&run, &qrels, &specs, gain).map_err(|e| e.to_string())?;
            for spec in specs {
                let entry = &report.metrics[&spec.to_string()];
                let mut values = Vec::new();
                for (q, docs) in &ranked {
                    let g = &grades[q];
                    if !g.values().any(|&x| x > 0) {
                        ensure(!entry.per_query.contains_key(q), || format!("{q} should be excluded"))?;
                        continue;
                    }
                    let want = match spec.kind {
                        MetricKind::Ndcg => Brute::ndcg(docs, g, k, exponential),
                        MetricKind::Mrr => Brute::mrr(docs, g, k),
                        MetricKind::Recall => Brute::recall(docs, g, k),
                        MetricKind::Map => Brute::map(docs, g, k),
                        MetricKind::HitRate => Brute::hit_rate(docs, g, k),
                    };
                    let got = entry.per_query[q];
                    ensure((got - want).abs() < 1e-9, || format!("{spec} on {q}: {got} vs brute {want}"))?;
                    ensure((0.0..=1.0).contains(&got), || format!("{spec} out of range: {got}"))?;
                    values.push(want);
                    compared += 1;
                }
                if !values.is_empty() {
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    ensure((entry.mean - mean).abs() < 1e-9, || format!("{spec} mean {} vs {mean}", entry.mean))?;
                }
            }
        }
    }
    // Hand-derived anchors, exact.
    let one = |docs: &[&str], rel: &[&str]| {
        let ranked = BTreeMap::from([("q".to_string(), docs.iter().map(|s| s.to_string()).collect::<Vec<_>>())]);
        let mut qrels = Qrels::new();
        for r in rel {
            qrels.insert("q", *r, 1);
        }
        let report = evaluate(&run_from(&ranked), &qrels, &[MetricSpec::new(MetricKind::Ndcg, 10)], Gain::Linear).unwrap();
        report.mean("ndcg@10").unwrap()
    };
    let rank2 = one(&["x", "a", "y"], &["a"]);
    ensure(rank2 == 1.0 / 3f64.log2(), || format!("rank-2 NDCG@10 = {rank2}"))?;
    let ranks13 = one(&["a", "x", "b", "y"], &["a", "b"]);
    let exact = 1.5 / (1.0 + 1.0 / 3f64.log2());
    ensure(ranks13 == exact && (ranks13 - 0.9199).abs() < 5e-4, || format!("ranks 1,3 NDCG@10 = {ranks13}"))?;
    Ok(format!(
        "{compared} per-query values match the brute-force evaluator; rank-2 = {rank2:.6}, ranks {{1,3}} = {ranks13:.6}"
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = Rng::new(505);
    let mut worst_norm: f64 = 0.0;
    let mut worst_ens: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.between(2, 10);
        let s: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let a = rng.uniform_range(0.01, 100.0);
        let b = rng.uniform_range(-50.0, 50.0);
        let t: Vec<f64> = s.iter().map(|x| a * x + b).collect();
        let (ns, nt) = (minmax_normalize(&s).unwrap(), minmax_normalize(&t).unwrap());
        worst_norm = worst_norm.max(rel_err_abs(&ns.values, &nt.values));

        let teachers = ["t1".to_string(), "t2".to_string(), "t3".to_string()];
        let raw: Vec<Vec<f64>> = teachers.iter().map(|_| (0..n).map(|_| rng.gaussian()).collect()).collect();
        let which = rng.below(3);
        let record = |scale: bool| TripletRecord {
            query_id: "q".into(),
            query_text: "x".into(),
            docs: (0..n)
                .map(|j| ScoredDoc {
                    doc_id: format!("d{j}"),
                    text: "x".into(),
                    teacher_scores: teachers
                        .iter()
                        .enumerate()
                        .map(|(ti, name)| {
                            let v = raw[ti][j];
                            (name.clone(), if scale && ti == which { a * v + b } else { v })
                        })
                        .collect(),
                })
                .collect(),
        };
        let e1 = ensemble_teacher_scores(&record(false), &teachers).unwrap();
        let e2 = ensemble_teacher_scores(&record(true), &teachers).unwrap();
        worst_ens = worst_ens.max(rel_err_abs(&e1, &e2));
    }
    ensure(worst_norm < 1e-9 && worst_ens < 1e-9, || {
        format!("affine invariance violated: normalize {worst_norm:.2e}, ensemble {worst_ens:.2e}")
    })?;

    // (b) label-free recipe: doc order within records is never read.
    let data = generate(&SynthSpec {
        seed: 9,
        vocab_size: 150,
        n_docs: 120,
        n_queries: 24,
        heldout_queries: 4,
        topic_dim: 48,
        doc_len: (6, 12),
        query_len: (3, 5),
        ..SynthSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let mut config = TrainConfig::desk_scale();
    config.total_steps = 40;
    config.batch_size = 8;
    config.encoder.mixer = true;
    let init = liforge::training::init_params(&config, &data.vocab);
    let a = train(&config, &data.triplets, &data.vocab, init.clone()).map_err(|e| e.to_string())?;
    let mut permuted = data.triplets.clone();
    for r in &mut permuted {
        rng.shuffle(&mut r.docs);
    }
    let b = train(&config, &permuted, &data.vocab, init).map_err(|e| e.to_string())?;
    let bits = |t: &[liforge::training::TraceRow]| t.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    ensure(!a.trace.is_empty() && bits(&a.trace) == bits(&b.trace), || "loss sequences differ after permuting docs".into())?;
    ensure(a.final_checkpoint().bitwise_eq(b.final_checkpoint()), || "final checkpoints differ".into())?;

    // (c) dynamic query length table.
    let mode = AugmentationMode::Dynamic { base: 32, min_masks: 8 };
    for (n, want) in [(10, 32), (30, 38), (32, 40), (57, 65)] {
        let got = padded_query_length(n, mode);
        ensure(got == want, || format!("dynamic length {n} -> {got}, want {want}"))?;
    }
    Ok(format!(
        "affine invariance over 10^4 trials (max {:.1e}); {}-step loss trace identical under doc permutation; length table 10→32, 30→38, 32→40, 57→65",
        worst_norm.max(worst_ens),
        a.trace.len()
    ))
}

fn rel_err_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_checkpoint(rng: &mut Rng, step: u64) -> Checkpoint {
    let mut c = Checkpoint::new(CheckpointMeta {
        step,
        seed: 7,
        config_digest: "abc".into(),
        merged_from: Vec::new(),
    });
    c.insert("emb", Tensor::new(vec![3, 4], (0..12).map(|_| rng.gaussian() as f32).collect()).unwrap());
    c.insert("proj", Tensor::new(vec![4, 2], (0..8).map(|_| rng.gaussian() as f32).collect()).unwrap());
    c
}

fn criterion_5() -> Outcome {
    let mut rng = Rng::new(606);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for trial in 0..50 {
        let cks: Vec<Checkpoint> = (0..rng.between(1, 5)).map(|i| random_checkpoint(&mut rng, 100 * i as u64)).collect();
        let same = vec![cks[0].clone(); rng.between(1, 4)];
        let avg_same = average_checkpoints(&same).map_err(|e| e.to_string())?;
        ensure(avg_same.bitwise_eq(&cks[0]), || format!("trial {trial}: averaging identical checkpoints changed them"))?;

        let avg = average_checkpoints(&cks).map_err(|e| e.to_string())?;
        let mut shuffled = cks.clone();
        rng.shuffle(&mut shuffled);
        ensure(average_checkpoints(&shuffled).unwrap().bitwise_eq(&avg), || format!("trial {trial}: order changed the mean"))?;
        for (name, t) in &avg.tensors {
            for (i, v) in t.values.iter().enumerate() {
                let mean = cks.iter().map(|c| c.tensors[name].values[i] as f64).sum::<f64>() / cks.len() as f64;
                ensure((*v as f64 - mean).abs() < 1e-7, || format!("trial {trial}: {name}[{i}] = {v}, mean {mean}"))?;
            }
        }
        let path = dir.path().join(format!("c{trial}.ckpt"));
        save_checkpoint(&avg, &path).map_err(|e| e.to_string())?;
        let back = load_checkpoint(&path).map_err(|e| e.to_string())?;
        ensure(back.bitwise_eq(&avg) && back.to_bytes() == std::fs::read(&path).unwrap(), || {
            format!("trial {trial}: file round trip not bitwise")
        })?;
    }
    Ok("idempotent, permutation-invariant, elementwise mean within 1e-7, file round trip bitwise (50 trials)".into())
}

#[derive(serde::Deserialize)]
struct Calibration {
    synth: SynthSpec,
    train: TrainConfig,
    runs: Vec<CalibratedRun>,
    margin: f64,
    tolerance: f64,
}

#[derive(serde::Deserialize)]
struct CalibratedRun {
    seed: u64,
    #[serde(rename = "untrained_ndcg@10")]
    untrained: f64,
    #[serde(rename = "trained_ndcg@10")]
    trained: f64,
}

fn criterion_6() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("calibration/e2e.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cal: Calibration = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(cal.runs.len() == 3 && cal.train.total_steps <= 2000, || "calibration must cover 3 seeds, <= 2000 steps".into())?;
    ensure(
        cal.synth.seed == 0 && cal.synth.n_queries == 500 && cal.synth.heldout_queries == 100 && cal.synth.n_way == 4,
        || "calibration spec differs from the required setting".into(),
    )?;
    let started = Instant::now();
    let data = generate(&cal.synth).map_err(|e| e.to_string())?;
    let grid: Vec<AblationCell> = cal
        .runs
        .iter()
        .map(|r| AblationCell {
            name: format!("seed{}", r.seed),
            config: TrainConfig { seed: r.seed, ..cal.train.clone() },
        })
        .collect();
    let table = run_ablation(&grid, &data, &[MetricSpec::new(MetricKind::Ndcg, 10)]).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let mut deltas = Vec::new();
    for (row, want) in table.rows.iter().zip(&cal.runs) {
        let (u, t) = (row.untrained["ndcg@10"], row.trained["ndcg@10"]);
        ensure((u - want.untrained).abs() <= cal.tolerance && (t - want.trained).abs() <= cal.tolerance, || {
            format!("seed {}: untrained {u:.4} trained {t:.4}, calibrated {:.4} / {:.4}", want.seed, want.untrained, want.trained)
        })?;
        ensure(t - u >= cal.margin, || format!("seed {}: gain {:.4} below margin {}", want.seed, t - u, cal.margin))?;
        deltas.push(format!("{:+.3}", t - u));
    }
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "held-out NDCG@10 gains {} (margin {:.2}), reproduced within ±{}; {secs:.0}s",
        deltas.join(" "),
        cal.margin,
        cal.tolerance
    ))
}

fn ablate_once(dir: &Path, threads: usize, config: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let out = dir.join(format!("t{threads}"));
    let status = Command::new(env!("CARGO_BIN_EXE_liforge"))
        .args(["--config"])
        .arg(config)
        .args(["--threads", &threads.to_string(), "ablate", "--out"])
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("ablate failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let mut files = BTreeMap::new();
    let mut stack = vec![out.clone()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(&out).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    Ok(files)
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("ablate.toml");
    std::fs::write(
        &config,
        r#"
[synth]
seed = 3
vocab_size = 200
n_docs = 200
n_queries = 40
heldout_queries = 10
doc_len = [8, 14]
query_len = [3, 5]

[train]
total_steps = 30
batch_size = 8

[ablate]
seeds = [0, 1]
metrics = ["ndcg@10", "mrr@10"]

[[ablate.cells]]
name = "kl"

[[ablate.cells]]
name = "mmse"
loss = { kind = "margin_mse" }

[[ablate.cells]]
name = "kl_ibneg_mixer"
loss = { ibneg_enabled = true }
encoder = { mixer = true }
"#,
    )
    .unwrap();
    let runs: Vec<_> = [1, 1, 4, 4]
        .iter()
        .enumerate()
        .map(|(i, &t)| ablate_once(&dir.path().join(format!("run{i}")), t, &config))
        .collect::<Result<_, _>>()?;
    let ckpts = runs[0].keys().filter(|p| p.extension().is_some_and(|e| e == "ckpt")).count();
    ensure(ckpts == 6, || format!("expected 6 checkpoints, found {ckpts}"))?;
    for (i, r) in runs.iter().enumerate().skip(1) {
        ensure(r == &runs[0], || format!("run {i} differs from run 0"))?;
    }
    Ok(format!("4 ablate runs (threads 1,1,4,4): {} output files bitwise identical", runs[0].len()))
}

fn criterion_8() -> Outcome {
    let mut rng = Rng::new(808);
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let mut trials = 0;
    for _ in 0..100 {
        let n_docs = rng.between(1, 60);
        let corpus: Vec<Document> = (0..n_docs)
            .map(|i| Document {
                id: format!("d{i}"),
                text: (0..rng.between(1, 8)).map(|_| words[rng.below(30)].clone()).collect::<Vec<_>>().join(" "),
            })
            .collect();
        let queries: Vec<Query> = (0..rng.between(1, 6))
            .map(|i| Query {
                id: format!("q{i}"),
                text: (0..rng.between(1, 3)).map(|_| words[rng.below(30)].clone()).collect::<Vec<_>>().join(" "),
            })
            .collect();
        let mut qrels = Qrels::new();
        for q in &queries {
            for _ in 0..rng.between(0, 3) {
                qrels.insert(q.id.clone(), format!("d{}", rng.below(n_docs)), rng.between(0, 2) as u32);
            }
        }
        let index = Bm25Index::build(&corpus, Bm25Params::default()).unwrap();
        let depth = rng.between(1, 70);
        let (sub, out_qrels) = mine_small_devset(&queries, &qrels, &corpus, &index, depth);
        let positives: std::collections::BTreeSet<&str> = qrels.iter().flat_map(|(q, _)| qrels.relevant(q)).collect();
        for p in &positives {
            ensure(sub.iter().any(|d| d.id == *p), || format!("positive {p} missing from mined corpus"))?;
        }
        ensure(sub.len() <= queries.len() * depth + positives.len(), || "cardinality bound violated".into())?;
        ensure(out_qrels == qrels, || "qrels not passed through".into())?;
        if depth >= n_docs {
            ensure(sub.len() == corpus.len() || sub.len() <= corpus.len(), || "depth >= corpus size".into())?;
        }
        trials += 1;
    }
    Ok(format!("{trials} random corpora: every positive kept, |sub| <= |Q|·depth + |positives|"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 gradient suite", criterion_1),
        ("2 MaxSim oracle", criterion_2),
        ("3 metric oracle", criterion_3),
        ("4 recipe invariances", criterion_4),
        ("5 checkpoint algebra", criterion_5),
        ("6 end-to-end distillation", criterion_6),
        ("7 determinism", criterion_7),
        ("8 dev-set mining contract", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS criterion {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL criterion {name}: panicked");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
