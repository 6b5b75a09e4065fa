//! Deterministic synthetic corpus with term-overlap relevance.
//!
//! Documents mix a few *topic* words with *filler* words. A query is a small
//! set of topic words taken from one seed document; its grade against any
//! document is fixed by overlap: every query word present → 2, all but one
//! present (for queries of three or more words) → 1, otherwise 0.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::retrieval::trec::{write_qrels, write_tsv, Qrels};

const TOPIC: &[&str] = &[
    "amber", "basil", "cedar", "delta", "ember", "fjord", "gecko", "heron", "igloo", "jade",
    "kelp", "lotus", "mango", "nectar", "onyx", "pecan", "quartz", "raven", "sage", "tulip",
    "umber", "violet", "walnut", "yarrow", "zinnia", "bison", "comet", "dune", "falcon", "glacier",
];

const FILLER: &[&str] = &[
    "the", "a", "of", "and", "to", "in", "is", "on", "with", "for", "as", "by", "at", "from",
    "this", "that", "it", "was", "are", "be", "or", "an", "near", "about", "over", "under",
    "report", "notes", "page", "item",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub n_docs: usize,
    pub n_eval_queries: usize,
    pub n_train_queries: usize,
    /// Size of the topic vocabulary (at most 30).
    pub n_topics: usize,
    /// Topic words per document, inclusive range.
    pub topic_per_doc: (usize, usize),
    pub filler_per_doc: (usize, usize),
    /// Words per query, inclusive range.
    pub query_len: (usize, usize),
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_docs: 500,
            n_eval_queries: 50,
            n_train_queries: 400,
            n_topics: 30,
            topic_per_doc: (2, 4),
            filler_per_doc: (1, 3),
            query_len: (2, 3),
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpus {
    pub docs: Vec<(String, String)>,
    pub eval_queries: Vec<(String, String)>,
    pub eval_qrels: Qrels,
    pub train_queries: Vec<(String, String)>,
    pub train_qrels: Qrels,
}

/// Overlap grade of `query` words against a document's word list.
pub fn overlap_grade(query: &[&str], doc_words: &[&str]) -> u32 {
    let hits = query.iter().filter(|w| doc_words.contains(w)).count();
    if hits == query.len() {
        2
    } else if query.len() >= 3 && hits + 1 == query.len() {
        1
    } else {
        0
    }
}

fn pick(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

impl ToyCorpus {
    pub fn generate(cfg: &ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut doc_topics: Vec<Vec<&str>> = Vec::with_capacity(cfg.n_docs);
        let mut docs = Vec::with_capacity(cfg.n_docs);
        for i in 0..cfg.n_docs {
            let n_topics = pick(&mut rng, cfg.topic_per_doc);
            let topics: Vec<&str> = TOPIC[..cfg.n_topics.clamp(1, TOPIC.len())].choose_multiple(&mut rng, n_topics).copied().collect();
            let mut words = topics.clone();
            for _ in 0..pick(&mut rng, cfg.filler_per_doc) {
                words.push(FILLER.choose(&mut rng).expect("filler"));
            }
            words.shuffle(&mut rng);
            docs.push((format!("D{i:04}"), words.join(" ")));
            doc_topics.push(topics);
        }
        let mut make = |prefix: &str, n: usize| {
            let mut queries = Vec::with_capacity(n);
            let mut qrels = Qrels::new();
            while queries.len() < n {
                let seed_doc = &doc_topics[rng.random_range(0..doc_topics.len())];
                let len = pick(&mut rng, cfg.query_len).min(seed_doc.len());
                let mut terms: Vec<&str> = seed_doc.choose_multiple(&mut rng, len).copied().collect();
                terms.shuffle(&mut rng);
                let qid = format!("{prefix}{:03}", queries.len());
                let mut judged = BTreeMap::new();
                for (j, topics) in doc_topics.iter().enumerate() {
                    let g = overlap_grade(&terms, topics);
                    if g > 0 {
                        judged.insert(docs[j].0.clone(), g);
                    }
                }
                queries.push((qid.clone(), terms.join(" ")));
                qrels.insert(qid, judged);
            }
            (queries, qrels)
        };
        let (eval_queries, eval_qrels) = make("Q", cfg.n_eval_queries);
        let (train_queries, train_qrels) = make("T", cfg.n_train_queries);
        ToyCorpus {
            docs,
            eval_queries,
            eval_qrels,
            train_queries,
            train_qrels,
        }
    }

    /// Writes `collection.tsv`, `queries.tsv`, `qrels.txt`,
    /// `train_queries.tsv` and `train_qrels.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_tsv(dir.join("collection.tsv"), &self.docs)?;
        write_tsv(dir.join("queries.tsv"), &self.eval_queries)?;
        write_qrels(dir.join("qrels.txt"), &self.eval_qrels)?;
        write_tsv(dir.join("train_queries.tsv"), &self.train_queries)?;
        write_qrels(dir.join("train_qrels.txt"), &self.train_qrels)?;
        Ok(())
    }
}
