//! Ranking metrics on a hand-written run.

use liforge::eval::{evaluate, parse_metrics, Gain};
use liforge::io::{parse_qrels, parse_run};

const RUN: &str = "\
q1 Q0 d3 1 9.1 demo
q1 Q0 d1 2 8.7 demo
q1 Q0 d7 3 4.2 demo
q2 Q0 d2 1 5.0 demo
q2 Q0 d9 2 3.3 demo
q3 Q0 d4 1 1.0 demo
";

const QRELS: &str = "\
q1 0 d1 1
q1 0 d7 2
q2 0 d2 1
q3 0 d4 0
";

fn main() -> liforge::Result<()> {
    let run = parse_run(RUN)?;
    let qrels = parse_qrels(QRELS)?;
    let metrics = parse_metrics("ndcg@10,mrr@10,recall@2,map@10,hit_rate@1")?;

    let report = evaluate(&run, &qrels, &metrics, Gain::Linear)?;
    print!("{}", report.to_text());
    println!("per query ndcg@10: {:?}", report.metrics["ndcg@10"].per_query);

    let exp = evaluate(&run, &qrels, &parse_metrics("ndcg@10")?, Gain::Exponential)?;
    println!("ndcg@10 with exponential gain: {:.6}", exp.mean("ndcg@10").unwrap());
    print!("{}", report.to_jsonl());
    Ok(())
}
