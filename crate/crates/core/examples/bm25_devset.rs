//! BM25 retrieval and small dev-set mining.
//!
//! Indexes a synthetic corpus, evaluates BM25 on the held-out queries, and
//! mines a compact dev set: the BM25 top-`depth` documents of every query
//! plus every judged positive.
//!
//! ```text
//! cargo run --release --example bm25_devset
//! ```

use liforge::eval::{evaluate, mine_small_devset, parse_metrics, terms, Bm25Index, Bm25Params, Gain};
use liforge::harness::{generate, SynthSpec};
use liforge::{RunEntry, RunList};

fn main() -> liforge::Result<()> {
    let data = generate(&SynthSpec::default())?;
    let index = Bm25Index::build(&data.corpus, Bm25Params::default())?;
    println!(
        "indexed {} docs, average length {:.1}, k1 = {}, b = {}",
        index.num_docs(),
        index.avg_doc_len(),
        index.params.k1,
        index.params.b
    );

    let mut run = RunList::new();
    for q in &data.heldout_queries {
        let hits = index.search(&terms(&q.text), 100);
        run.insert(q.id.clone(), hits.into_iter().map(|(doc_id, score)| RunEntry { doc_id, score }).collect())?;
    }
    let report = evaluate(&run, &data.heldout_qrels(), &parse_metrics("ndcg@10,recall@100")?, Gain::Linear)?;
    print!("BM25 on held-out queries:\n{}", report.to_text());

    let qrels = data.heldout_qrels();
    for depth in [10, 50, 250] {
        let (sub, _) = mine_small_devset(&data.heldout_queries, &qrels, &data.corpus, &index, depth);
        println!("depth {depth:>3}: dev corpus of {} docs out of {}", sub.len(), data.corpus.len());
    }
    Ok(())
}
