//! KL divergence versus MarginMSE on three seeds.
//!
//! Both variants share data and initialization per seed. The table lists
//! held-out metrics for every cell, followed by the per-seed difference.
//! No ordering is expected at this scale; the point is the comparison
//! machinery.
//!
//! ```text
//! cargo run --release --example ablation
//! ```

use liforge::eval::parse_metrics;
use liforge::harness::{generate, run_ablation, AblationCell, SynthSpec};
use liforge::losses::LossKind;
use liforge::training::TrainConfig;

fn main() -> liforge::Result<()> {
    let data = generate(&SynthSpec {
        n_docs: 800,
        n_queries: 200,
        heldout_queries: 50,
        ..SynthSpec::default()
    })?;
    let seeds = [0, 1, 2];
    let mut grid = Vec::new();
    for (name, kind) in [("kl_div", LossKind::KlDiv), ("margin_mse", LossKind::MarginMse)] {
        for seed in seeds {
            let mut config = TrainConfig { seed, total_steps: 400, ..TrainConfig::desk_scale() };
            config.loss.kind = kind;
            grid.push(AblationCell { name: name.into(), config });
        }
    }
    let table = run_ablation(&grid, &data, &parse_metrics("ndcg@10,mrr@10")?)?;
    print!("{}", table.to_tsv());

    println!("\nseed\tndcg@10 (kl_div - margin_mse)");
    for seed in seeds {
        let pick = |name: &str| table.rows.iter().find(|r| r.name == name && r.seed == seed).unwrap();
        let delta = pick("kl_div").trained["ndcg@10"] - pick("margin_mse").trained["ndcg@10"];
        println!("{seed}\t{delta:+.4}");
    }
    Ok(())
}
