//! Hard-negative sampling and the JSON-lines training sample format.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{Qrels, Run};

/// Candidate depth for negatives.
pub const NEGATIVE_POOL_DEPTH: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeDoc {
    pub id: String,
    pub text: String,
}

/// One positive and `k` negatives for a query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub qid: String,
    pub query: String,
    pub pos_id: String,
    pub pos: String,
    pub negs: Vec<NegativeDoc>,
}

fn is_relevant(qrels: &Qrels, qid: &str, doc: &str) -> bool {
    qrels.get(qid).and_then(|j| j.get(doc)).is_some_and(|g| *g >= 1)
}

/// The top-[`NEGATIVE_POOL_DEPTH`] run entries that are not judged relevant.
pub fn negative_pool<'a>(run: &'a Run, qrels: &Qrels, qid: &str) -> Vec<&'a str> {
    run.get(qid)
        .map(|list| {
            list.iter()
                .take(NEGATIVE_POOL_DEPTH)
                .map(|e| e.0.as_str())
                .filter(|d| !is_relevant(qrels, qid, d))
                .collect()
        })
        .unwrap_or_default()
}

/// Generator for the `i`-th query (in sorted query order) under `seed`.
fn query_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn draw<'a>(pool: &[&'a str], k: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    rand::seq::index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// `k` negatives per query, uniform without replacement from the pool.
/// Queries whose pool holds fewer than `k` documents are skipped.
pub fn sample_negatives(qrels: &Qrels, run: &Run, k: usize, seed: u64) -> BTreeMap<String, Vec<String>> {
    let mut out = BTreeMap::new();
    for (i, qid) in run.keys().enumerate() {
        let pool = negative_pool(run, qrels, qid);
        if pool.len() < k {
            warn!("query {qid}: only {} negative candidates for k={k}; skipped", pool.len());
            continue;
        }
        let mut rng = query_rng(seed, i);
        out.insert(qid.clone(), draw(&pool, k, &mut rng).into_iter().map(String::from).collect());
    }
    out
}

/// One sample per judged-relevant document found in the collection, each
/// with its own `k` negatives.
pub fn build_samples(
    run: &Run,
    qrels: &Qrels,
    queries: &HashMap<String, String>,
    docs: &HashMap<String, String>,
    k: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    let text = |id: &str| -> Result<String> {
        docs.get(id).cloned().ok_or_else(|| Error::Data(format!("no text for document '{id}'")))
    };
    let mut samples = Vec::new();
    for (i, qid) in run.keys().enumerate() {
        let Some(judged) = qrels.get(qid) else { continue };
        let pool = negative_pool(run, qrels, qid);
        if pool.len() < k {
            warn!("query {qid}: only {} negative candidates for k={k}; skipped", pool.len());
            continue;
        }
        let query = queries
            .get(qid)
            .ok_or_else(|| Error::Data(format!("no text for query '{qid}'")))?;
        let mut rng = query_rng(seed, i);
        for (pos_id, grade) in judged {
            if *grade < 1 {
                continue;
            }
            if !docs.contains_key(pos_id) {
                warn!("query {qid}: relevant document {pos_id} is not in the collection");
                continue;
            }
            let negs = draw(&pool, k, &mut rng)
                .into_iter()
                .map(|id| Ok(NegativeDoc { id: id.to_string(), text: text(id)? }))
                .collect::<Result<_>>()?;
            samples.push(TrainingSample {
                qid: qid.clone(),
                query: query.clone(),
                pos_id: pos_id.clone(),
                pos: text(pos_id)?,
                negs,
            });
        }
    }
    Ok(samples)
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[TrainingSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<TrainingSample>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}
