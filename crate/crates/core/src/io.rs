//! Text file formats: corpus JSON-lines, query TSV, TREC qrels and runs,
//! triplet JSON-lines, and the vocabulary list.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Document, Qrels, Query, RunEntry, RunList, TripletRecord};
use crate::vocab::Vocab;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn non_empty_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_corpus(text: &str) -> Result<Vec<Document>> {
    non_empty_lines(text)
        .map(|(n, line)| {
            serde_json::from_str(line).map_err(|e| Error::format(format!("corpus line {n}"), e.to_string()))
        })
        .collect()
}

pub fn format_corpus(docs: &[Document]) -> String {
    docs.iter()
        .map(|d| serde_json::to_string(d).expect("document serializes") + "\n")
        .collect()
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    parse_corpus(&read(path.as_ref())?)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    write(path.as_ref(), &format_corpus(docs))
}

pub fn parse_queries(text: &str) -> Result<Vec<Query>> {
    non_empty_lines(text)
        .map(|(n, line)| {
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(format!("queries line {n}"), "expected id<TAB>text"))?;
            Ok(Query {
                id: id.to_string(),
                text: text.to_string(),
            })
        })
        .collect()
}

pub fn format_queries(queries: &[Query]) -> String {
    queries.iter().fold(String::new(), |mut s, q| {
        let _ = writeln!(s, "{}\t{}", q.id, q.text);
        s
    })
}

pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    parse_queries(&read(path.as_ref())?)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    write(path.as_ref(), &format_queries(queries))
}

/// TREC qrels: `qid 0 docid grade`.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (n, line) in non_empty_lines(text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::format(
                format!("qrels line {n}"),
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| Error::format(format!("qrels line {n}"), format!("bad grade {:?}", fields[3])))?;
        if grade < 0 {
            return Err(Error::format(format!("qrels line {n}"), "negative grade"));
        }
        qrels.insert(fields[0], fields[2], grade as u32);
    }
    if qrels.is_empty() {
        return Err(Error::format("qrels", "no judgments"));
    }
    Ok(qrels)
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut s = String::new();
    for (q, docs) in qrels.iter() {
        for (d, g) in docs {
            let _ = writeln!(s, "{q} 0 {d} {g}");
        }
    }
    s
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    parse_qrels(&read(path.as_ref())?)
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    write(path.as_ref(), &format_qrels(qrels))
}

/// TREC run: `qid Q0 docid rank score tag`. Ranks in the file are ignored;
/// entries are re-sorted by score with doc-id tie-breaking.
pub fn parse_run(text: &str) -> Result<RunList> {
    let mut grouped: std::collections::BTreeMap<String, Vec<RunEntry>> = Default::default();
    for (n, line) in non_empty_lines(text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::format(
                format!("run line {n}"),
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| Error::format(format!("run line {n}"), format!("bad score {:?}", fields[4])))?;
        grouped.entry(fields[0].to_string()).or_default().push(RunEntry {
            doc_id: fields[2].to_string(),
            score,
        });
    }
    let mut run = RunList::new();
    for (q, entries) in grouped {
        run.insert(q, entries)?;
    }
    Ok(run)
}

pub fn format_run(run: &RunList, tag: &str) -> String {
    let mut s = String::new();
    for (q, entries) in run.iter() {
        for (rank, e) in entries.iter().enumerate() {
            let _ = writeln!(s, "{q} Q0 {} {} {} {tag}", e.doc_id, rank + 1, e.score);
        }
    }
    s
}

pub fn read_run(path: impl AsRef<Path>) -> Result<RunList> {
    parse_run(&read(path.as_ref())?)
}

pub fn write_run(path: impl AsRef<Path>, run: &RunList, tag: &str) -> Result<()> {
    write(path.as_ref(), &format_run(run, tag))
}

pub fn parse_triplets(text: &str) -> Result<Vec<TripletRecord>> {
    non_empty_lines(text)
        .map(|(n, line)| {
            let rec: TripletRecord = serde_json::from_str(line)
                .map_err(|e| Error::format(format!("triplets line {n}"), e.to_string()))?;
            rec.validate()?;
            Ok(rec)
        })
        .collect()
}

pub fn format_triplets(records: &[TripletRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn read_triplets(path: impl AsRef<Path>) -> Result<Vec<TripletRecord>> {
    parse_triplets(&read(path.as_ref())?)
}

pub fn write_triplets(path: impl AsRef<Path>, records: &[TripletRecord]) -> Result<()> {
    write(path.as_ref(), &format_triplets(records))
}

/// One token per line, in id order.
pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vocab> {
    let text = read(path.as_ref())?;
    Vocab::from_tokens(text.lines().map(str::to_string).collect())
}

pub fn write_vocab(path: impl AsRef<Path>, vocab: &Vocab) -> Result<()> {
    let mut s = vocab.tokens().join("\n");
    s.push('\n');
    write(path.as_ref(), &s)
}

pub(crate) fn write_text(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    write(path.as_ref(), contents)
}

pub(crate) fn read_text(path: impl AsRef<Path>) -> Result<String> {
    read(path.as_ref())
}
