//! The `liforge` command line.
//!
//! Every subcommand reads the shared TOML config (see [`config`]), writes its
//! outputs to the paths it is given, and reports failures as one JSON line on
//! stderr with exit code 2 (missing or unreadable input), 3 (validation) or
//! 4 (internal failure).

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::eval::bm25::{mine_small_devset, Bm25Index};
use crate::eval::metrics::evaluate;
use crate::eval::search::{search_queries, EncodedCorpus};
use crate::harness::{generate, run_ablation};
use crate::io;
use crate::rng::Rng;
use crate::training::{average_checkpoints, build_posttrain_mix, ensemble_teacher_scores, init_params, train};
use crate::types::TripletRecord;
use crate::vocab::Vocab;

pub use config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "liforge", version, about = "Late-interaction retrieval training and evaluation toolkit")]
pub struct Cli {
    /// TOML config file
    #[arg(long, global = true, env = "LIFORGE_CONFIG")]
    pub config: Option<PathBuf>,

    /// Override a config key, e.g. `--set train.optim.lr=0.01` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true, env = "LIFORGE_THREADS")]
    pub threads: Option<usize>,

    /// Bitwise-reproducible outputs. Always on; `--deterministic=false` is
    /// rejected because no faster non-deterministic path exists.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, queries, qrels and oracle-scored triplets
    Synth(SynthArgs),
    /// Distillation training on triplet records
    Train(TrainArgs),
    /// Build a weighted post-training mix, optionally reinjecting pretraining data
    PosttrainMix(MixArgs),
    /// Add an ensembled teacher score to every triplet document
    Score(ScoreArgs),
    /// Average checkpoints elementwise
    Merge(MergeArgs),
    /// Build a BM25 index over a corpus
    IndexBm25(IndexArgs),
    /// Mine a small dev set: BM25 top-depth per query plus every positive
    MineDevset(MineArgs),
    /// Exact MaxSim search with a trained checkpoint
    Search(SearchArgs),
    /// Score a run against qrels
    Eval(EvalArgs),
    /// Train and evaluate every `[ablate]` cell on a synthetic dataset
    Ablate(AblateArgs),
    /// Print the fully resolved config as TOML
    Config,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_docs: Option<usize>,
    #[arg(long)]
    pub n_queries: Option<usize>,
    #[arg(long)]
    pub heldout_queries: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub n_way: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Triplet records (JSON lines)
    #[arg(long)]
    pub triplets: PathBuf,
    /// Vocabulary file; built from the triplet texts when absent
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Start from this checkpoint instead of a seeded initialization
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output directory for checkpoints, trace and vocab
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub total_steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// `PATH=WEIGHT`, repeatable; replaces `[mix].datasets`
    #[arg(long = "dataset", value_name = "PATH=WEIGHT")]
    pub datasets: Vec<String>,
    /// `PATH=FRACTION` of the final stream drawn from pretraining data
    #[arg(long, value_name = "PATH=FRACTION")]
    pub inject: Option<String>,
    /// Records drawn from the weighted datasets
    #[arg(long)]
    pub total: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub triplets: PathBuf,
    /// Comma-separated teacher names to ensemble
    #[arg(long, value_delimiter = ',', required = true)]
    pub teachers: Vec<String>,
    /// Name of the added teacher score
    #[arg(long, default_value = "ensemble")]
    pub name: String,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Checkpoints to average
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Prebuilt index from `index-bm25`; built on the fly when absent
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 250)]
    pub depth: usize,
    #[arg(long)]
    pub out_corpus: PathBuf,
    #[arg(long)]
    pub out_qrels: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Results per query (default `[eval].depth`)
    #[arg(short)]
    pub k: Option<usize>,
    #[arg(long, default_value = "liforge")]
    pub tag: String,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comma-separated metrics such as `ndcg@10,mrr@10` (default `[eval].metrics`)
    #[arg(long)]
    pub metrics: Option<String>,
    /// NDCG gain: linear or exponential
    #[arg(long)]
    pub gain: Option<String>,
    /// Output format: text or jsonl
    #[arg(long, default_value = "text")]
    pub format: String,
    /// Also write the report here
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Output directory for the table and per-cell checkpoints
    #[arg(short, long)]
    pub out: PathBuf,
    /// Comma-separated training seeds (default `[ablate].seeds`)
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Seed of the synthetic dataset (default `[synth].seed`)
    #[arg(long)]
    pub synth_seed: Option<u64>,
}

/// Exit code for an error, following the documented contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 2,
        Error::Argument(_) | Error::Format { .. } | Error::Data(_) | Error::Generation(_) | Error::Config(_) => 3,
        Error::NonFiniteLoss { .. } => 4,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Argument(_) => "argument",
        Error::Format { .. } => "format",
        Error::Data(_) => "data",
        Error::Generation(_) => "generation",
        Error::Config(_) => "config",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::Io { .. } => "io",
    }
}

/// Single-line JSON error report.
pub fn error_line(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({ "error": kind, "message": message, "exit_code": code }).to_string()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    io::write_text(path, text)
}

fn split_pair(item: &str, what: &str) -> Result<(PathBuf, f64)> {
    let (path, value) = item
        .rsplit_once('=')
        .ok_or_else(|| Error::arg(format!("{what} expects PATH=NUMBER, got {item:?}")))?;
    let value: f64 = value
        .parse()
        .map_err(|_| Error::arg(format!("{what}: {value:?} is not a number")))?;
    Ok((PathBuf::from(path), value))
}

fn vocab_from_triplets(records: &[TripletRecord]) -> Vocab {
    Vocab::from_texts(
        records
            .iter()
            .flat_map(|r| std::iter::once(r.query_text.as_str()).chain(r.docs.iter().map(|d| d.text.as_str()))),
    )
}

fn resolve_config(cli: &Cli) -> Result<CliConfig> {
    let env = config::env_overrides(std::env::vars())?;
    let set = config::set_overrides(&cli.set)?;
    CliConfig::resolve(cli.config.as_deref(), &[env, set])
}

fn cmd_synth(mut cfg: CliConfig, a: &SynthArgs) -> Result<()> {
    let s = &mut cfg.synth;
    s.seed = a.seed.unwrap_or(s.seed);
    s.n_docs = a.n_docs.unwrap_or(s.n_docs);
    s.n_queries = a.n_queries.unwrap_or(s.n_queries);
    s.heldout_queries = a.heldout_queries.unwrap_or(s.heldout_queries);
    s.vocab_size = a.vocab_size.unwrap_or(s.vocab_size);
    s.teacher_noise_sigma = a.sigma.unwrap_or(s.teacher_noise_sigma);
    s.n_way = a.n_way.unwrap_or(s.n_way);
    let data = generate(s)?;
    data.write(&a.out)?;
    write_string(&a.out.join("config.toml"), &cfg.to_toml()?)?;
    println!(
        "synth: {} docs, {} train + {} held-out queries, {} triplets -> {}",
        data.corpus.len(),
        data.train_queries.len(),
        data.heldout_queries.len(),
        data.triplets.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(mut cfg: CliConfig, a: &TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    t.seed = a.seed.unwrap_or(t.seed);
    t.total_steps = a.total_steps.unwrap_or(t.total_steps);
    t.optim.lr = a.lr.unwrap_or(t.optim.lr);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.validate()?;
    let records = io::read_triplets(&a.triplets)?;
    let vocab = match &a.vocab {
        Some(p) => io::read_vocab(p)?,
        None => vocab_from_triplets(&records),
    };
    let init = match &a.init {
        Some(p) => {
            let params = EncoderParams::from_checkpoint(&load_checkpoint(p)?)?;
            let want = t.encoder_config(vocab.len());
            if params.emb.rows != want.vocab_size || params.attention.is_some() != want.mixer {
                return Err(Error::arg(format!(
                    "init checkpoint {} does not match the configured encoder and vocabulary",
                    p.display()
                )));
            }
            params
        }
        None => init_params(t, &vocab),
    };
    let outcome = train(t, &records, &vocab, init)?;
    create_dir(&a.out)?;
    for ckpt in &outcome.checkpoints {
        save_checkpoint(ckpt, a.out.join(format!("step-{:06}.ckpt", ckpt.meta.step)))?;
    }
    save_checkpoint(outcome.final_checkpoint(), a.out.join("final.ckpt"))?;
    outcome.write_trace(a.out.join("trace.tsv"))?;
    io::write_vocab(a.out.join("vocab.txt"), &vocab)?;
    write_string(&a.out.join("config.toml"), &cfg.to_toml()?)?;
    println!(
        "train: {} steps, {} checkpoints, {} skipped batches -> {}",
        cfg.train.total_steps,
        outcome.checkpoints.len(),
        outcome.skipped_batches,
        a.out.display()
    );
    Ok(())
}

fn cmd_mix(cfg: CliConfig, a: &MixArgs) -> Result<()> {
    let mut spec = cfg.mix.unwrap_or(crate::training::MixSpec {
        datasets: Vec::new(),
        inject_pretrain: None,
        total: None,
    });
    if !a.datasets.is_empty() {
        spec.datasets = a
            .datasets
            .iter()
            .map(|d| split_pair(d, "--dataset").map(|(path, weight)| crate::training::MixSource { path, weight }))
            .collect::<Result<_>>()?;
    }
    if let Some(inj) = &a.inject {
        let (path, fraction) = split_pair(inj, "--inject")?;
        spec.inject_pretrain = Some(crate::training::PretrainInjection { path, fraction });
    }
    if a.total.is_some() {
        spec.total = a.total;
    }
    let records = build_posttrain_mix(&spec, &mut Rng::new(a.seed))?;
    io::write_triplets(&a.out, &records)?;
    println!("posttrain-mix: {} records -> {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let mut records = io::read_triplets(&a.triplets)?;
    for r in &mut records {
        let scores = ensemble_teacher_scores(r, &a.teachers)?;
        for (doc, s) in r.docs.iter_mut().zip(scores) {
            doc.teacher_scores.insert(a.name.clone(), s);
        }
    }
    io::write_triplets(&a.out, &records)?;
    println!("score: {} records -> {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_merge(a: &MergeArgs) -> Result<()> {
    let ckpts = a.inputs.iter().map(load_checkpoint).collect::<Result<Vec<Checkpoint>>>()?;
    let merged = average_checkpoints(&ckpts)?;
    save_checkpoint(&merged, &a.out)?;
    println!("merge: {} checkpoints -> {}", ckpts.len(), a.out.display());
    Ok(())
}

fn cmd_index(mut cfg: CliConfig, a: &IndexArgs) -> Result<()> {
    cfg.bm25.k1 = a.k1.unwrap_or(cfg.bm25.k1);
    cfg.bm25.b = a.b.unwrap_or(cfg.bm25.b);
    let index = Bm25Index::build(&io::read_corpus(&a.corpus)?, cfg.bm25)?;
    let json = serde_json::to_string(&index).map_err(|e| Error::data(e.to_string()))?;
    write_string(&a.out, &json)?;
    println!("index-bm25: {} docs -> {}", index.num_docs(), a.out.display());
    Ok(())
}

fn read_index(path: &Path) -> Result<Bm25Index> {
    let text = io::read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format("bm25 index", e.to_string()))
}

fn cmd_mine(cfg: CliConfig, a: &MineArgs) -> Result<()> {
    let corpus = io::read_corpus(&a.corpus)?;
    let queries = io::read_queries(&a.queries)?;
    let qrels = io::read_qrels(&a.qrels)?;
    let index = match &a.index {
        Some(p) => read_index(p)?,
        None => Bm25Index::build(&corpus, cfg.bm25)?,
    };
    let (sub, qrels) = mine_small_devset(&queries, &qrels, &corpus, &index, a.depth);
    io::write_corpus(&a.out_corpus, &sub)?;
    io::write_qrels(&a.out_qrels, &qrels)?;
    println!("mine-devset: {} of {} docs kept", sub.len(), corpus.len());
    Ok(())
}

fn cmd_search(cfg: CliConfig, a: &SearchArgs) -> Result<()> {
    let params = EncoderParams::from_checkpoint(&load_checkpoint(&a.checkpoint)?)?;
    let vocab = io::read_vocab(&a.vocab)?;
    let enc = params.config(cfg.train.aug_mode, cfg.train.max_doc_len);
    if enc.vocab_size != vocab.len() {
        return Err(Error::arg(format!(
            "checkpoint has {} embedding rows but the vocabulary has {} tokens",
            enc.vocab_size,
            vocab.len()
        )));
    }
    let corpus = EncodedCorpus::encode(&io::read_corpus(&a.corpus)?, &params, &enc, &vocab)?;
    let queries = io::read_queries(&a.queries)?;
    let run = search_queries(&queries, &corpus, &params, &enc, &vocab, a.k.unwrap_or(cfg.eval.depth))?;
    io::write_run(&a.out, &run, &a.tag)?;
    println!("search: {} queries -> {}", run.len(), a.out.display());
    Ok(())
}

fn cmd_eval(cfg: CliConfig, a: &EvalArgs) -> Result<()> {
    let specs = match &a.metrics {
        Some(m) => crate::eval::metrics::parse_metrics(m)?,
        None => cfg.eval.specs()?,
    };
    let gain = match a.gain.as_deref() {
        None => cfg.eval.gain,
        Some("linear") => config::GainName::Linear,
        Some("exponential") => config::GainName::Exponential,
        Some(other) => return Err(Error::arg(format!("unknown gain {other:?}"))),
    };
    let run = io::read_run(&a.run)?;
    let qrels = io::read_qrels(&a.qrels)?;
    let report = evaluate(&run, &qrels, &specs, gain.into())?;
    let text = match a.format.as_str() {
        "text" => report.to_text(),
        "jsonl" => report.to_jsonl(),
        other => return Err(Error::arg(format!("unknown format {other:?}"))),
    };
    print!("{text}");
    if let Some(out) = &a.out {
        write_string(out, &text)?;
    }
    Ok(())
}

fn cmd_ablate(mut cfg: CliConfig, a: &AblateArgs) -> Result<()> {
    if let Some(seeds) = &a.seeds {
        cfg.ablate.seeds = seeds.clone();
    }
    cfg.synth.seed = a.synth_seed.unwrap_or(cfg.synth.seed);
    cfg.validate()?;
    let grid = cfg.ablation_grid()?;
    let metrics = crate::eval::metrics::parse_metrics(&cfg.ablate.metrics.join(","))?;
    let data = generate(&cfg.synth)?;
    let table = run_ablation(&grid, &data, &metrics)?;
    let ckpt_dir = a.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for row in &table.rows {
        let base = format!("{}-seed{}", row.name, row.seed);
        let n = seen.entry(base.clone()).or_insert(0);
        let file = if *n == 0 { base.clone() } else { format!("{base}-{n}") };
        *n += 1;
        save_checkpoint(&row.final_checkpoint, ckpt_dir.join(format!("{file}.ckpt")))?;
    }
    let tsv = table.to_tsv();
    write_string(&a.out.join("table.tsv"), &tsv)?;
    write_string(&a.out.join("config.toml"), &cfg.to_toml()?)?;
    print!("{tsv}");
    Ok(())
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> Result<()> {
    if !cli.deterministic {
        return Err(Error::arg("non-deterministic mode is not supported"));
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::arg("--threads must be at least 1"));
        }
        // A pool may already exist when `run` is called twice in one process;
        // the first setting then stays in force.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::PosttrainMix(a) => cmd_mix(cfg, a),
        Command::Score(a) => cmd_score(a),
        Command::Merge(a) => cmd_merge(a),
        Command::IndexBm25(a) => cmd_index(cfg, a),
        Command::MineDevset(a) => cmd_mine(cfg, a),
        Command::Search(a) => cmd_search(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Ablate(a) => cmd_ablate(cfg, a),
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first, 2));
            return 2;
        }
    };
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            let code = exit_code(&e);
            eprintln!("{}", error_line(error_kind(&e), &e.to_string(), code));
            code
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "internal error".into());
            eprintln!("{}", error_line("internal", &message, 4));
            4
        }
    }
}
