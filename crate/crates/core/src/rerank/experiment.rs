//! End-to-end reranking experiment on a small collection: BM25 top-100
//! candidates, hard-negative samples, and MRR@100 of any scorer.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::ParamSet;
use crate::error::{Error, Result};
use crate::models::Reranker;
use crate::rerank::{build_samples, input_ids, TrainingSample};
use crate::retrieval::toy::ToyCorpus;
use crate::retrieval::trec::{read_qrels, read_tsv};
use crate::retrieval::{self, mrr_at_k, retrieve_topk, Bm25Params, InvertedIndex, Qrels, Run};

/// First-stage depth and metric cutoff.
pub const DEPTH: usize = 100;

/// Scores the top `depth` candidates of every query and reorders them by
/// descending model score. Candidates are scored in parallel; the result
/// does not depend on the thread count.
pub fn rerank_with_model(
    run: &Run,
    queries: &HashMap<String, String>,
    docs: &HashMap<String, String>,
    model: &Reranker,
    params: &ParamSet,
    depth: usize,
) -> Result<Run> {
    let truncated: Run = run
        .iter()
        .map(|(q, list)| (q.clone(), list.iter().take(depth).cloned().collect()))
        .collect();
    let kind = model.config().kind;
    let max_len = model.config().max_len;
    let mut pairs: Vec<(&str, &str)> = Vec::new();
    for (q, list) in &truncated {
        let qt = queries.get(q).ok_or_else(|| Error::Data(format!("no text for query '{q}'")))?;
        for (d, _) in list {
            let dt = docs.get(d).ok_or_else(|| Error::Data(format!("no text for document '{d}'")))?;
            pairs.push((qt, dt));
        }
    }
    // keyed by text: identical pairs score identically
    let scores: HashMap<(&str, &str), f64> = pairs
        .par_iter()
        .map(|&(q, d)| Ok(((q, d), model.score_value(params, &input_ids(q, d, kind, max_len)?)?)))
        .collect::<Result<_>>()?;
    retrieval::rerank(&truncated, queries, docs, |q, d| Ok(scores[&(q, d)]))
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub docs: HashMap<String, String>,
    pub eval_queries: HashMap<String, String>,
    pub eval_qrels: Qrels,
    /// BM25 top-[`DEPTH`] for the evaluation queries.
    pub eval_run: Run,
    pub samples: Vec<TrainingSample>,
}

fn bm25_run(index: &InvertedIndex, queries: &[(String, String)]) -> Result<Run> {
    queries
        .iter()
        .map(|(q, t)| Ok((q.clone(), retrieve_topk(index, t, DEPTH, Bm25Params::default())?)))
        .collect()
}

impl Experiment {
    pub fn new(
        docs: &[(String, String)],
        eval_queries: &[(String, String)],
        eval_qrels: Qrels,
        train_queries: &[(String, String)],
        train_qrels: &Qrels,
        negatives: usize,
        seed: u64,
    ) -> Result<Self> {
        let index = InvertedIndex::build(docs.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;
        let doc_map: HashMap<String, String> = docs.iter().cloned().collect();
        let train_map: HashMap<String, String> = train_queries.iter().cloned().collect();
        let train_run = bm25_run(&index, train_queries)?;
        let samples = build_samples(&train_run, train_qrels, &train_map, &doc_map, negatives, seed)?;
        Ok(Experiment {
            eval_run: bm25_run(&index, eval_queries)?,
            docs: doc_map,
            eval_queries: eval_queries.iter().cloned().collect(),
            eval_qrels,
            samples,
        })
    }

    pub fn from_corpus(corpus: &ToyCorpus, negatives: usize, seed: u64) -> Result<Self> {
        Self::new(
            &corpus.docs,
            &corpus.eval_queries,
            corpus.eval_qrels.clone(),
            &corpus.train_queries,
            &corpus.train_qrels,
            negatives,
            seed,
        )
    }

    /// Reads the five files written by [`ToyCorpus::write`].
    pub fn from_dir(dir: impl AsRef<Path>, negatives: usize, seed: u64) -> Result<Self> {
        let dir = dir.as_ref();
        Self::new(
            &read_tsv(dir.join("collection.tsv"))?,
            &read_tsv(dir.join("queries.tsv"))?,
            read_qrels(dir.join("qrels.txt"))?,
            &read_tsv(dir.join("train_queries.tsv"))?,
            &read_qrels(dir.join("train_qrels.txt"))?,
            negatives,
            seed,
        )
    }

    pub fn bm25_mrr(&self) -> Result<f64> {
        mrr_at_k(&self.eval_run, &self.eval_qrels, DEPTH)
    }

    /// MRR@100 after shuffling each candidate list uniformly.
    pub fn shuffled_mrr(&self, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut run = self.eval_run.clone();
        for list in run.values_mut() {
            list.shuffle(&mut rng);
        }
        mrr_at_k(&run, &self.eval_qrels, DEPTH)
    }

    pub fn rerank(&self, model: &Reranker, params: &ParamSet) -> Result<Run> {
        rerank_with_model(&self.eval_run, &self.eval_queries, &self.docs, model, params, DEPTH)
    }

    pub fn model_mrr(&self, model: &Reranker, params: &ParamSet) -> Result<f64> {
        mrr_at_k(&self.rerank(model, params)?, &self.eval_qrels, DEPTH)
    }
}
