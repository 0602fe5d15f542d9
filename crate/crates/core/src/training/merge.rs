//! Checkpoint averaging.

use crate::checkpoint::{Checkpoint, CheckpointMeta, Tensor};
use crate::error::{Error, Result};

/// Elementwise arithmetic mean of every tensor across `ckpts`.
///
/// Accumulation is in f64 and summands are added in a value-sorted order, so
/// the result does not depend on the order of `ckpts`. The merged metadata
/// keeps the latest step and lists the distinct source steps when there is
/// more than one; merging copies of one checkpoint returns it unchanged.
pub fn average_checkpoints(ckpts: &[Checkpoint]) -> Result<Checkpoint> {
    let first = ckpts
        .first()
        .ok_or_else(|| Error::arg("need at least one checkpoint to average"))?;
    for (k, c) in ckpts.iter().enumerate().skip(1) {
        for name in first.tensors.keys().chain(c.tensors.keys()) {
            match (first.get(name), c.get(name)) {
                (Some(a), Some(b)) if a.shape == b.shape => {}
                (Some(a), Some(b)) => {
                    return Err(Error::arg(format!(
                        "tensor {name}: shape {:?} in checkpoint 0 vs {:?} in checkpoint {k}",
                        a.shape, b.shape
                    )))
                }
                _ => {
                    return Err(Error::arg(format!(
                        "tensor {name} is not present in every checkpoint (checkpoint {k})"
                    )))
                }
            }
        }
    }

    let n = ckpts.len() as f64;
    let mut merged = Checkpoint::new(merged_meta(ckpts));
    let mut column = Vec::with_capacity(ckpts.len());
    for (name, t) in &first.tensors {
        let sources: Vec<&Tensor> = ckpts.iter().map(|c| &c.tensors[name]).collect();
        let values = (0..t.values.len())
            .map(|i| {
                column.clear();
                column.extend(sources.iter().map(|s| f64::from(s.values[i])));
                column.sort_by(f64::total_cmp);
                (column.iter().sum::<f64>() / n) as f32
            })
            .collect();
        merged.insert(name.clone(), Tensor::new(t.shape.clone(), values)?);
    }
    Ok(merged)
}

fn merged_meta(ckpts: &[Checkpoint]) -> CheckpointMeta {
    let mut steps: Vec<u64> = ckpts
        .iter()
        .flat_map(|c| {
            if c.meta.merged_from.is_empty() {
                vec![c.meta.step]
            } else {
                c.meta.merged_from.clone()
            }
        })
        .collect();
    steps.sort_unstable();
    steps.dedup();

    let mut digests: Vec<&str> = ckpts.iter().map(|c| c.meta.config_digest.as_str()).collect();
    digests.sort_unstable();
    digests.dedup();
    let mut seeds: Vec<u64> = ckpts.iter().map(|c| c.meta.seed).collect();
    seeds.sort_unstable();

    CheckpointMeta {
        step: ckpts.iter().map(|c| c.meta.step).max().unwrap_or(0),
        seed: seeds[0],
        config_digest: digests.join("+"),
        merged_from: if steps.len() > 1 { steps } else { ckpts[0].meta.merged_from.clone() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(step: u64, values: &[f32]) -> Checkpoint {
        let mut c = Checkpoint::new(CheckpointMeta {
            step,
            seed: 1,
            config_digest: "d".into(),
            merged_from: vec![],
        });
        c.insert("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        c
    }

    #[test]
    fn mean_of_two() {
        let m = average_checkpoints(&[ckpt(2, &[0.0, 2.0]), ckpt(4, &[2.0, 0.0])]).unwrap();
        assert_eq!(m.get("w").unwrap().values, vec![1.0, 1.0]);
        assert_eq!(m.meta.step, 4);
        assert_eq!(m.meta.merged_from, vec![2, 4]);
    }

    #[test]
    fn identical_inputs_are_idempotent() {
        let c = ckpt(6, &[0.1, -3.5, 1e-40]);
        let m = average_checkpoints(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert!(m.bitwise_eq(&c));
    }

    #[test]
    fn mismatches_name_the_tensor() {
        let a = ckpt(1, &[0.0, 1.0]);
        let b = ckpt(1, &[0.0]);
        let err = average_checkpoints(&[a.clone(), b]).unwrap_err().to_string();
        assert!(err.contains("tensor w"), "{err}");
        let mut c = a.clone();
        c.insert("extra", Tensor::new(vec![1], vec![0.0]).unwrap());
        let err = average_checkpoints(&[a, c]).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
        assert!(average_checkpoints(&[]).is_err());
    }
}
