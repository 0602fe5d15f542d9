//! Checkpoint averaging.
//!
//! Trains once, saving a checkpoint every 100 steps, then averages the last
//! three and compares held-out NDCG@10 of the average with each input.
//!
//! ```text
//! cargo run --release --example merge_checkpoints
//! ```

use liforge::encoder::EncoderParams;
use liforge::eval::parse_metrics;
use liforge::harness::{evaluate_heldout, generate, SynthSpec};
use liforge::training::{average_checkpoints, init_params, train, TrainConfig};

fn main() -> liforge::Result<()> {
    let data = generate(&SynthSpec {
        n_docs: 800,
        n_queries: 200,
        heldout_queries: 50,
        ..SynthSpec::default()
    })?;
    let config = TrainConfig {
        total_steps: 500,
        checkpoint_every: 100,
        ..TrainConfig::desk_scale()
    };
    let outcome = train(&config, &data.triplets, &data.vocab, init_params(&config, &data.vocab))?;
    let enc = config.encoder_config(data.vocab.len());
    let metrics = parse_metrics("ndcg@10")?;
    let ndcg = |ckpt: &liforge::Checkpoint| -> liforge::Result<f64> {
        let params = EncoderParams::from_checkpoint(ckpt)?;
        Ok(evaluate_heldout(&params, &enc, &data, &metrics)?.mean("ndcg@10").unwrap())
    };

    let last3 = &outcome.checkpoints[outcome.checkpoints.len() - 3..];
    for c in last3 {
        println!("step {:>4}: ndcg@10 {:.4}", c.meta.step, ndcg(c)?);
    }
    let merged = average_checkpoints(last3)?;
    println!("average of steps {:?}: ndcg@10 {:.4}", merged.meta.merged_from, ndcg(&merged)?);
    Ok(())
}
