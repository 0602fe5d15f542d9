//! Calibration run for the end-to-end distillation check.
//!
//! Trains the desk-scale recipe (KL on min-max normalized scores,
//! schedule-free AdamW, dynamic query length) on the default synthetic
//! dataset for three seeds and records untrained and trained held-out
//! NDCG@10. The acceptance suite reproduces these numbers.
//!
//! ```text
//! cargo run --release --example calibrate [-- OUT.json]
//! ```

use std::time::Instant;

use liforge::eval::parse_metrics;
use liforge::harness::{generate, run_ablation, AblationCell, SynthSpec};
use liforge::training::TrainConfig;
use serde_json::json;

pub const SEEDS: [u64; 3] = [0, 1, 2];

fn main() -> liforge::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/calibration/e2e.json").to_string());
    let spec = SynthSpec::default();
    let data = generate(&spec)?;
    let grid: Vec<AblationCell> = SEEDS
        .iter()
        .map(|&seed| AblationCell {
            name: "final_recipe".into(),
            config: TrainConfig { seed, ..TrainConfig::desk_scale() },
        })
        .collect();
    let started = Instant::now();
    let table = run_ablation(&grid, &data, &parse_metrics("ndcg@10")?)?;
    let elapsed = started.elapsed().as_secs_f64();
    print!("{}", table.to_tsv());

    let runs: Vec<_> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed,
                "untrained_ndcg@10": r.untrained["ndcg@10"],
                "trained_ndcg@10": r.trained["ndcg@10"],
                "delta": r.delta("ndcg@10"),
            })
        })
        .collect();
    let min_delta = table
        .rows
        .iter()
        .filter_map(|r| r.delta("ndcg@10"))
        .fold(f64::INFINITY, f64::min);
    // The committed margin is the smallest observed gain, floored to 0.01.
    let margin = (min_delta * 100.0).floor() / 100.0;
    let report = json!({
        "synth": spec,
        "train": grid[0].config,
        "runs": runs,
        "margin": margin,
        "tolerance": 0.01,
        "seconds": elapsed,
    });
    let text = serde_json::to_string_pretty(&report).expect("json");
    std::fs::write(&out, text + "\n").map_err(|e| liforge::Error::Io { path: out.clone().into(), source: e })?;
    println!("margin {margin:.2}, {elapsed:.1}s -> {out}");
    Ok(())
}
