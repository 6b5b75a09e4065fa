//! TREC run / qrels files and tab-separated collections.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Query id → ranked `(doc id, score)` list, best first.
pub type Run = BTreeMap<String, Vec<(String, f64)>>;

/// Query id → doc id → grade.
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;

/// `qid Q0 docid rank score tag`. Ranks are renumbered when they are not
/// `1..=n` per query, in which case entries are re-sorted by score.
pub fn parse_run(text: &str) -> Result<Run> {
    let mut raw: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::parse(i + 1, format!("run lines have 6 fields, found {}", f.len())));
        }
        let rank: usize = f[3].parse().map_err(|_| Error::parse(i + 1, format!("bad rank '{}'", f[3])))?;
        let score: f64 = f[4].parse().map_err(|_| Error::parse(i + 1, format!("bad score '{}'", f[4])))?;
        if !score.is_finite() {
            return Err(Error::parse(i + 1, "score is not finite"));
        }
        raw.entry(f[0].to_string()).or_default().push((rank, f[2].to_string(), score));
    }
    let mut run = Run::new();
    for (qid, mut entries) in raw {
        entries.sort_by_key(|e| e.0);
        let contiguous = entries.iter().enumerate().all(|(i, e)| e.0 == i + 1);
        if !contiguous {
            warn!("query {qid}: ranks are not 1..={}; re-ranking by score", entries.len());
            entries.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.1.cmp(&b.1)));
        }
        let mut seen = std::collections::HashSet::new();
        let mut list = Vec::with_capacity(entries.len());
        for (_, doc, score) in entries {
            if seen.insert(doc.clone()) {
                list.push((doc, score));
            } else {
                warn!("query {qid}: duplicate document {doc} dropped");
            }
        }
        run.insert(qid, list);
    }
    Ok(run)
}

pub fn format_run(run: &Run, tag: &str) -> String {
    let mut out = String::new();
    for (qid, list) in run {
        for (i, (doc, score)) in list.iter().enumerate() {
            writeln!(out, "{qid} Q0 {doc} {} {score:.6} {tag}", i + 1).expect("string write");
        }
    }
    out
}

/// `qid 0 docid grade`. A repeated `(qid, docid)` keeps the last grade.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::parse(i + 1, format!("qrels lines have 4 fields, found {}", f.len())));
        }
        let grade: u32 = f[3]
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("grade must be a non-negative integer, got '{}'", f[3])))?;
        if qrels.entry(f[0].to_string()).or_default().insert(f[2].to_string(), grade).is_some() {
            warn!("qrels line {}: duplicate judgment for ({}, {}), keeping the last", i + 1, f[0], f[2]);
        }
    }
    Ok(qrels)
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (qid, docs) in qrels {
        for (doc, grade) in docs {
            writeln!(out, "{qid} 0 {doc} {grade}").expect("string write");
        }
    }
    out
}

/// `id \t text` lines, in file order. Used for both collections and queries.
pub fn parse_tsv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "expected 'id<TAB>text'"))?;
        if id.is_empty() {
            return Err(Error::parse(i + 1, "empty id"));
        }
        out.push((id.to_string(), body.to_string()));
    }
    Ok(out)
}

pub fn format_tsv(rows: &[(String, String)]) -> String {
    let mut out = String::new();
    for (id, text) in rows {
        writeln!(out, "{id}\t{text}").expect("string write");
    }
    out
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Run> {
    parse_run(&std::fs::read_to_string(path)?)
}

pub fn write_run(path: impl AsRef<Path>, run: &Run, tag: &str) -> Result<()> {
    std::fs::write(path, format_run(run, tag))?;
    Ok(())
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    parse_qrels(&std::fs::read_to_string(path)?)
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    std::fs::write(path, format_qrels(qrels))?;
    Ok(())
}

pub fn read_tsv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    parse_tsv(&std::fs::read_to_string(path)?)
}

pub fn write_tsv(path: impl AsRef<Path>, rows: &[(String, String)]) -> Result<()> {
    std::fs::write(path, format_tsv(rows))?;
    Ok(())
}
