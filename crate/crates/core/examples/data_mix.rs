//! Teacher ensembling, triplet downsampling and post-training mixes.
//!
//! ```text
//! cargo run --release --example data_mix
//! ```

use liforge::harness::{generate, SynthSpec};
use liforge::training::{apportion, downsample_triplets, ensemble_teacher_scores, mix_records};
use liforge::Rng;

fn main() -> liforge::Result<()> {
    let spec = SynthSpec {
        n_way: 8,
        n_docs: 600,
        n_queries: 200,
        heldout_queries: 10,
        ..SynthSpec::default()
    };
    let mut data = generate(&spec)?;

    // A second, noisier teacher on a different scale.
    let mut rng = Rng::new(1);
    for r in &mut data.triplets {
        for d in &mut r.docs {
            let oracle = d.teacher_scores["oracle"];
            d.teacher_scores.insert("wide".into(), 40.0 * oracle + 3.0 + rng.gaussian());
        }
    }
    let teachers = ["oracle".to_string(), "wide".to_string()];
    let first = &data.triplets[0];
    println!("record {}: ensembled scores {:?}", first.query_id, ensemble_teacher_scores(first, &teachers)?);

    // 8-way records down to 4-way, keeping the positive.
    let small = downsample_triplets(&data.triplets, 100, 4, &mut Rng::new(2))?;
    println!("downsampled {} records to {}-way", small.len(), small[0].docs.len());

    let weights = [0.6401, 0.1993, 0.1606];
    println!("apportioned 10,000 records: {:?}", apportion(&weights, 10_000));

    let third = data.triplets.len() / 3;
    let sources = vec![
        (data.triplets[..third].to_vec(), weights[0]),
        (data.triplets[third..2 * third].to_vec(), weights[1]),
        (data.triplets[2 * third..].to_vec(), weights[2]),
    ];
    let pretrain = small.clone();
    let mixed = mix_records(sources, Some((pretrain, 0.099)), Some(2_000), &mut Rng::new(3))?;
    let injected = mixed.iter().filter(|r| r.docs.len() == 4).count();
    println!(
        "mix of {} records, {:.1}% reinjected pretraining data",
        mixed.len(),
        100.0 * injected as f64 / mixed.len() as f64
    );
    Ok(())
}
