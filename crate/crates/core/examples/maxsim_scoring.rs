//! MaxSim scoring and query augmentation.
//!
//! Builds a tiny vocabulary, shows how each augmentation mode pads a query
//! with [MASK] tokens, then encodes a query and three documents with a
//! randomly initialized encoder and ranks the documents by MaxSim.
//!
//! ```text
//! cargo run --example maxsim_scoring
//! ```

use liforge::encoder::{encode, prepare_doc, prepare_query, EncoderConfig, EncoderParams};
use liforge::scoring::{augment_query, maxsim, padded_query_length, AugmentationMode};
use liforge::{tokenize, EmbeddingMatrix, Rng, Vocab};

fn main() -> liforge::Result<()> {
    let docs = [
        "the cat sat on the mat",
        "a dog chased the cat",
        "stock markets fell sharply today",
    ];
    let query = "where did the cat sit";
    let vocab = Vocab::from_texts(docs.iter().copied().chain([query]));

    println!("query length after augmentation ([Q] marker included):");
    for mode in [
        AugmentationMode::None,
        AugmentationMode::Fixed { k: 32 },
        AugmentationMode::FixedMax { max_len: 4 },
        AugmentationMode::Dynamic { base: 32, min_masks: 8 },
    ] {
        let tokens = augment_query(&tokenize(query, &vocab), mode);
        println!("  {mode:?}: {} tokens", tokens.len());
    }
    println!("dynamic length for 10/30/32/57 tokens:");
    for n in [10, 30, 32, 57] {
        println!("  {n} -> {}", padded_query_length(n, AugmentationMode::default()));
    }

    // Hand-made embeddings: the score is the sum over query rows of the best
    // dot product with any document row.
    let q = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?.normalized();
    let d = EmbeddingMatrix::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]])?.normalized();
    println!("toy maxsim = {:.2}", maxsim(&q, &d)?);

    let config = EncoderConfig::new(vocab.len(), 16, 8, true);
    let params = EncoderParams::init(&config, &mut Rng::new(0));
    let q = encode(&prepare_query(query, &vocab, config.aug_mode), &params, &config, true)?;
    let mut ranked: Vec<(f64, &str)> = docs
        .iter()
        .map(|d| {
            let e = encode(&prepare_doc(d, &vocab, config.max_doc_len), &params, &config, false)?;
            Ok((maxsim(&q, &e)?, *d))
        })
        .collect::<liforge::Result<_>>()?;
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    println!("untrained encoder ranking ({} query rows):", q.rows());
    for (score, doc) in ranked {
        println!("  {score:8.4}  {doc}");
    }
    Ok(())
}
