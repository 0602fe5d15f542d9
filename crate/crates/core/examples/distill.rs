//! End-to-end distillation on a synthetic corpus.
//!
//! Generates a latent-topic dataset with an oracle teacher, trains the
//! desk-scale recipe (KL divergence on min-max normalized scores,
//! schedule-free AdamW, dynamic query length) and reports held-out metrics
//! before and after training. Checkpoints and the loss trace go to the
//! output directory.
//!
//! ```text
//! cargo run --release --example distill [-- OUT_DIR [STEPS]]
//! ```

use liforge::eval::parse_metrics;
use liforge::harness::{evaluate_heldout, generate, SynthSpec};
use liforge::training::{init_params, train, TrainConfig};

fn main() -> liforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "target/distill".into());
    let steps = args.next().map_or(600, |s| s.parse().expect("STEPS must be an integer"));

    let spec = SynthSpec {
        n_docs: 1000,
        n_queries: 300,
        heldout_queries: 50,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    println!(
        "{} docs, {} triplets, relevance threshold {:.3}",
        data.corpus.len(),
        data.triplets.len(),
        data.threshold
    );

    let config = TrainConfig {
        total_steps: steps,
        checkpoint_every: 200,
        ..TrainConfig::desk_scale()
    };
    let metrics = parse_metrics("ndcg@10,mrr@10,recall@10")?;
    let enc = config.encoder_config(data.vocab.len());
    let init = init_params(&config, &data.vocab);
    let before = evaluate_heldout(&init, &enc, &data, &metrics)?;

    let outcome = train(&config, &data.triplets, &data.vocab, init)?;
    let after = evaluate_heldout(&outcome.params, &enc, &data, &metrics)?;

    std::fs::create_dir_all(&out).map_err(|e| liforge::Error::Io { path: out.clone().into(), source: e })?;
    for ckpt in &outcome.checkpoints {
        liforge::save_checkpoint(ckpt, format!("{out}/step-{:06}.ckpt", ckpt.meta.step))?;
    }
    outcome.write_trace(format!("{out}/trace.tsv"))?;

    let first = outcome.trace.first().map_or(f64::NAN, |r| r.loss);
    let last: f64 = outcome.trace.iter().rev().take(50).map(|r| r.loss).sum::<f64>() / 50f64.min(outcome.trace.len() as f64);
    println!("loss: first step {first:.4}, mean of last 50 steps {last:.4}");
    println!("metric      untrained  trained");
    for name in after.names() {
        println!("{name:<11} {:.4}     {:.4}", before.mean(name).unwrap(), after.mean(name).unwrap());
    }
    println!("{} checkpoints written to {out}", outcome.checkpoints.len());
    Ok(())
}
