//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use liforge::types::EmbeddingMatrix;
use liforge::Rng;

/// Triple loop: Σ_i max_j Σ_k q[i][k]·d[j][k].
pub fn naive_maxsim(q: &[Vec<f64>], d: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for qi in q {
        let mut best = f64::NEG_INFINITY;
        for dj in d {
            let mut s = 0.0;
            for k in 0..qi.len() {
                s += qi[k] * dj[k];
            }
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    total
}

pub fn random_rows(rng: &mut Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            v
        })
        .collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(rows).unwrap().normalized()
}

/// Brute-force IR metrics over a ranked list of doc ids and a grade map.
/// Written from the textbook definitions without sharing code with the
/// library.
pub struct Brute;

impl Brute {
    fn rel(grades: &BTreeMap<String, u32>, d: &str) -> u32 {
        *grades.get(d).unwrap_or(&0)
    }

    pub fn ndcg(ranked: &[String], grades: &BTreeMap<String, u32>, k: usize, exponential: bool) -> f64 {
        let gain = |g: u32| if exponential { (1u64 << g) as f64 - 1.0 } else { g as f64 };
        let mut dcg = 0.0;
        let mut i = 1;
        for d in ranked {
            if i > k {
                break;
            }
            dcg += gain(Self::rel(grades, d)) / ((i + 1) as f64).log2();
            i += 1;
        }
        let mut ideal: Vec<u32> = grades.values().cloned().collect();
        ideal.sort();
        ideal.reverse();
        let mut idcg = 0.0;
        for (pos, g) in ideal.iter().enumerate() {
            if pos >= k {
                break;
            }
            idcg += gain(*g) / ((pos + 2) as f64).log2();
        }
        if idcg == 0.0 {
            0.0
        } else {
            dcg / idcg
        }
    }

    pub fn mrr(ranked: &[String], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
        for (pos, d) in ranked.iter().enumerate() {
            if pos >= k {
                break;
            }
            if Self::rel(grades, d) > 0 {
                return 1.0 / (pos + 1) as f64;
            }
        }
        0.0
    }

    pub fn recall(ranked: &[String], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
        let relevant: Vec<&String> = grades.iter().filter(|(_, g)| **g > 0).map(|(d, _)| d).collect();
        let top: Vec<&String> = ranked.iter().take(k).collect();
        let hit = relevant.iter().filter(|d| top.contains(d)).count();
        hit as f64 / relevant.len() as f64
    }

    pub fn map(ranked: &[String], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
        let n_rel = grades.values().filter(|g| **g > 0).count();
        let mut precisions = Vec::new();
        for i in 1..=k.min(ranked.len()) {
            if Self::rel(grades, &ranked[i - 1]) > 0 {
                let hits = ranked[..i].iter().filter(|d| Self::rel(grades, d) > 0).count();
                precisions.push(hits as f64 / i as f64);
            }
        }
        precisions.iter().sum::<f64>() / n_rel.min(k) as f64
    }

    pub fn hit_rate(ranked: &[String], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
        if ranked.iter().take(k).any(|d| Self::rel(grades, d) > 0) {
            1.0
        } else {
            0.0
        }
    }
}
