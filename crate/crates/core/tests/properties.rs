mod common;

use std::collections::BTreeMap;

use common::{matrix, naive_maxsim, Brute};
use liforge::checkpoint::Checkpoint;
use liforge::encoder::{encode, EncoderConfig, EncoderParams};
use liforge::eval::bm25::{Bm25Index, Bm25Params};
use liforge::eval::metrics::{evaluate, Gain, MetricKind, MetricSpec};
use liforge::optim::{clip_gradients, global_norm};
use liforge::scoring::maxsim;
use liforge::{CheckpointMeta, Document, Qrels, Rng, RunEntry, RunList, Tensor};
use proptest::prelude::*;

fn rows(max_rows: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), 1..=max_rows)
        .prop_filter("non-zero rows", |r| r.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)))
}

fn checkpoint() -> impl Strategy<Value = Checkpoint> {
    let tensor = prop::collection::vec(1usize..4, 0..3).prop_flat_map(|shape| {
        let n = shape.iter().product::<usize>();
        prop::collection::vec(any::<f32>(), n).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
    });
    (
        prop::collection::btree_map("[a-z_.]{1,12}", tensor, 0..5),
        any::<u64>(),
        any::<u64>(),
        "[0-9a-f]{0,16}",
        prop::collection::vec(any::<u64>(), 0..3),
    )
        .prop_map(|(tensors, step, seed, digest, merged_from)| {
            let mut c = Checkpoint::new(CheckpointMeta {
                step,
                seed,
                config_digest: digest,
                merged_from,
            });
            for (name, t) in tensors {
                c.insert(name, t);
            }
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn checkpoint_bytes_round_trip(c in checkpoint()) {
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert!(back.bitwise_eq(&c));
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn maxsim_matches_triple_loop((q, d) in (1usize..10).prop_flat_map(|dim| (rows(8, dim), rows(12, dim)))) {
        let (qm, dm) = (matrix(&q), matrix(&d));
        let unit = |m: &liforge::EmbeddingMatrix| m.iter_rows().map(<[f64]>::to_vec).collect::<Vec<_>>();
        let want = naive_maxsim(&unit(&qm), &unit(&dm));
        prop_assert!((maxsim(&qm, &dm).unwrap() - want).abs() < 1e-9);
        // bounded by the number of query rows
        prop_assert!(want.abs() <= q.len() as f64 + 1e-9);
    }
}

#[derive(Debug, Clone)]
struct Instance {
    ranked: BTreeMap<String, Vec<String>>,
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

fn instance() -> impl Strategy<Value = Instance> {
    prop::collection::vec(
        (
            Just(()).prop_perturb(|_, mut rng| {
                let n: usize = rng.random_range(1..=20);
                let mut docs: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
                for i in (1..docs.len()).rev() {
                    let j = rng.random_range(0..=i);
                    docs.swap(i, j);
                }
                docs
            }),
            prop::collection::btree_map(0usize..25, 0u32..4, 1..8),
        ),
        1..=10,
    )
    .prop_map(|qs| {
        let mut ranked = BTreeMap::new();
        let mut grades = BTreeMap::new();
        for (i, (docs, g)) in qs.into_iter().enumerate() {
            let q = format!("q{i}");
            ranked.insert(q.clone(), docs);
            grades.insert(q, g.into_iter().map(|(d, v)| (format!("d{d}"), v)).collect());
        }
        Instance { ranked, grades }
    })
}

fn to_run(ranked: &BTreeMap<String, Vec<String>>, score: impl Fn(usize) -> f64) -> RunList {
    let mut run = RunList::new();
    for (q, docs) in ranked {
        run.insert(
            q.clone(),
            docs.iter().enumerate().map(|(i, d)| RunEntry { doc_id: d.clone(), score: score(i) }).collect(),
        )
        .unwrap();
    }
    run
}

fn to_qrels(grades: &BTreeMap<String, BTreeMap<String, u32>>) -> Qrels {
    let mut q = Qrels::new();
    for (qid, g) in grades {
        for (d, v) in g {
            q.insert(qid.clone(), d.clone(), *v);
        }
    }
    q
}

const KINDS: [MetricKind; 5] = [MetricKind::Ndcg, MetricKind::Mrr, MetricKind::Recall, MetricKind::Map, MetricKind::HitRate];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_match_brute_force(inst in instance(), k in 1usize..25) {
        let run = to_run(&inst.ranked, |i| 100.0 - i as f64);
        let qrels = to_qrels(&inst.grades);
        let specs = KINDS.map(|kind| MetricSpec::new(kind, k));
        let report = evaluate(&run, &qrels, &specs, Gain::Linear).unwrap();
        for spec in specs {
            let entry = &report.metrics[&spec.to_string()];
            for (q, docs) in &inst.ranked {
                let g = &inst.grades[q];
                if !g.values().any(|&v| v > 0) {
                    prop_assert!(report.excluded.contains(q));
                    continue;
                }
                let want = match spec.kind {
                    MetricKind::Ndcg => Brute::ndcg(docs, g, k, false),
                    MetricKind::Mrr => Brute::mrr(docs, g, k),
                    MetricKind::Recall => Brute::recall(docs, g, k),
                    MetricKind::Map => Brute::map(docs, g, k),
                    MetricKind::HitRate => Brute::hit_rate(docs, g, k),
                };
                prop_assert!((entry.per_query[q] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn metrics_depend_only_on_rank(inst in instance(), k in 1usize..25) {
        let qrels = to_qrels(&inst.grades);
        let specs = KINDS.map(|kind| MetricSpec::new(kind, k));
        let a = evaluate(&to_run(&inst.ranked, |i| 50.0 - i as f64), &qrels, &specs, Gain::Linear).unwrap();
        let b = evaluate(&to_run(&inst.ranked, |i| (-(i as f64)).exp() * 3.0 + 7.0), &qrels, &specs, Gain::Linear).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn promoting_a_relevant_doc_never_hurts(inst in instance(), k in 1usize..25, pos in 0usize..19) {
        let qrels = to_qrels(&inst.grades);
        let specs = [MetricKind::Ndcg, MetricKind::Mrr, MetricKind::Map].map(|kind| MetricSpec::new(kind, k));
        let before = evaluate(&to_run(&inst.ranked, |i| 100.0 - i as f64), &qrels, &specs, Gain::Linear).unwrap();
        let mut swapped = inst.ranked.clone();
        for (q, docs) in swapped.iter_mut() {
            let g = &inst.grades[q];
            let rel = |d: &String| g.get(d).copied().unwrap_or(0) > 0;
            if pos + 1 < docs.len() && !rel(&docs[pos]) && rel(&docs[pos + 1]) {
                docs.swap(pos, pos + 1);
            }
        }
        let after = evaluate(&to_run(&swapped, |i| 100.0 - i as f64), &qrels, &specs, Gain::Linear).unwrap();
        for spec in specs {
            let (b, a) = (&before.metrics[&spec.to_string()], &after.metrics[&spec.to_string()]);
            for (q, v) in &b.per_query {
                prop_assert!(a.per_query[q] >= v - 1e-12);
            }
        }
    }

    #[test]
    fn ideal_ranking_scores_one(grades in prop::collection::btree_map(0usize..30, 1u32..4, 1..10), k in 10usize..20) {
        let mut docs: Vec<(String, u32)> = grades.iter().map(|(d, g)| (format!("d{d}"), *g)).collect();
        docs.sort_by(|a, b| b.1.cmp(&a.1));
        let mut ranked = BTreeMap::new();
        ranked.insert("q".to_string(), docs.iter().map(|(d, _)| d.clone()).collect::<Vec<_>>());
        let mut qrels = Qrels::new();
        for (d, g) in &docs {
            qrels.insert("q", d.clone(), *g);
        }
        let r = evaluate(&to_run(&ranked, |i| -(i as f64)), &qrels, &[MetricSpec::new(MetricKind::Ndcg, k)], Gain::Exponential).unwrap();
        let name = format!("ndcg@{}", k);
        prop_assert!((r.mean(&name).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bm25_monotone_in_tf_and_length(tf in 1usize..6, extra in 0usize..6, filler in 0usize..8) {
        let doc = |id: &str, hits: usize, pad: usize| Document {
            id: id.into(),
            text: std::iter::repeat_n("apple", hits).chain(std::iter::repeat_n("pear", pad)).collect::<Vec<_>>().join(" "),
        };
        let corpus = vec![
            doc("a", tf, filler),
            doc("b", tf + extra, filler),
            doc("c", tf, filler + extra),
            Document { id: "z".into(), text: "plum".into() },
        ];
        let idx = Bm25Index::build(&corpus, Bm25Params::default()).unwrap();
        let q = vec!["apple".to_string()];
        let (a, b, c) = (idx.score(&q, "a").unwrap(), idx.score(&q, "b").unwrap(), idx.score(&q, "c").unwrap());
        prop_assert!(b >= a);
        prop_assert!(c <= a);
        if extra > 0 {
            prop_assert!(b / a < (tf + extra) as f64 / tf as f64, "saturation");
        }
    }

    #[test]
    fn clipping_caps_norm_and_keeps_direction(g in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 1..6), 1..4), max in 0.01f64..20.0) {
        let mut clipped = g.clone();
        let before = clip_gradients(&mut clipped, max);
        let after = global_norm(&clipped);
        prop_assert!(after <= before + 1e-12);
        prop_assert!(after <= max * (1.0 + 1e-12) || before <= max);
        if before > 0.0 {
            let cos: f64 = g.iter().flatten().zip(clipped.iter().flatten()).map(|(a, b)| a * b).sum::<f64>() / (before * after);
            prop_assert!((cos - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn encoder_rows_are_unit_and_scale_free(seed in any::<u64>(), mixer in any::<bool>(), n in 1usize..12, c in 0.1f64..10.0) {
        let config = EncoderConfig::new(20, 6, 4, mixer);
        let mut rng = Rng::new(seed);
        let params = EncoderParams::init(&config, &mut rng);
        let tokens: Vec<u32> = (0..n).map(|_| rng.below(20) as u32).collect();
        let e = encode(&tokens, &params, &config, false).unwrap();
        prop_assert!(e.is_normalized());
        for row in e.iter_rows() {
            prop_assert!((row.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
        }
        let mut scaled = params.clone();
        scaled.proj.data.iter_mut().for_each(|x| *x *= c);
        let e2 = encode(&tokens, &scaled, &config, false).unwrap();
        for (a, b) in e.as_slice().iter().zip(e2.as_slice()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
