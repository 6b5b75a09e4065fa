//! Inverted index and BM25 scoring.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and splits on every non-alphanumeric character.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 4.46, b: 0.82 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Parameter(format!(
                "BM25 needs k1 >= 0 and 0 <= b <= 1, got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

/// Term → postings `(doc index, tf)`, sorted by doc index, plus per-document
/// lengths. Document indices follow insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut index = Self::new();
        for (id, text) in docs {
            index.add_document(id, text)?;
        }
        Ok(index)
    }

    pub fn add_document(&mut self, doc_id: &str, text: &str) -> Result<()> {
        if self.lookup.contains_key(doc_id) {
            return Err(Error::Data(format!("duplicate document id '{doc_id}'")));
        }
        let idx = self.doc_ids.len() as u32;
        let terms = analyze(text);
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in &terms {
            *tf.entry(t).or_default() += 1;
        }
        for (term, count) in tf {
            self.postings.entry(term.to_string()).or_default().push((idx, count));
        }
        self.doc_ids.push(doc_id.to_string());
        self.doc_lengths.push(terms.len() as u32);
        self.lookup.insert(doc_id.to_string(), idx);
        let total: u64 = self.doc_lengths.iter().map(|l| *l as u64).sum();
        self.avg_doc_length = total as f64 / self.doc_ids.len() as f64;
        Ok(())
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.lookup.get(doc_id).map(|i| self.doc_lengths[*i as usize])
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], |p| p.as_slice())
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn tf(&self, term: &str, doc_id: &str) -> Result<u32> {
        let idx = *self.lookup.get(doc_id).ok_or_else(|| Error::Lookup(doc_id.to_string()))?;
        let p = self.postings(term);
        Ok(p.binary_search_by_key(&idx, |e| e.0).map_or(0, |i| p[i].1))
    }

    /// Lucene IDF: `ln(1 + (N − df + 0.5)/(df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, dl: u32, p: Bm25Params) -> f64 {
        let tf = tf as f64;
        let norm = p.k1 * (1.0 - p.b + p.b * dl as f64 / self.avg_doc_length);
        idf * tf * (p.k1 + 1.0) / (tf + norm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut index: InvertedIndex = serde_json::from_reader(f)?;
        index.lookup = index
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as u32))
            .collect();
        Ok(index)
    }
}

/// BM25 score of one document. Each query term occurrence contributes once.
pub fn bm25_score(index: &InvertedIndex, query_terms: &[String], doc_id: &str, params: Bm25Params) -> Result<f64> {
    params.validate()?;
    let dl = index.doc_length(doc_id).ok_or_else(|| Error::Lookup(doc_id.to_string()))?;
    let mut score = 0.0;
    for term in query_terms {
        let tf = index.tf(term, doc_id)?;
        if tf > 0 {
            score += index.term_weight(index.idf(term), tf, dl, params);
        }
    }
    Ok(score)
}

/// Exact top-`k` documents with a positive score, best first; equal scores
/// are ordered by ascending document id.
pub fn retrieve_topk(index: &InvertedIndex, query: &str, k: usize, params: Bm25Params) -> Result<Vec<(String, f64)>> {
    params.validate()?;
    if index.doc_count() == 0 {
        return Err(Error::Data("cannot retrieve from an empty index".into()));
    }
    let terms = analyze(query);
    let mut acc = vec![0.0; index.doc_count()];
    let mut hit = vec![false; index.doc_count()];
    for term in &terms {
        let idf = index.idf(term);
        for &(d, tf) in index.postings(term) {
            acc[d as usize] += index.term_weight(idf, tf, index.doc_lengths[d as usize], params);
            hit[d as usize] = true;
        }
    }
    let mut scored: Vec<(usize, f64)> = (0..acc.len()).filter(|d| hit[*d]).map(|d| (d, acc[d])).collect();
    let ids = &index.doc_ids;
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]));
    if scored.len() > k {
        scored.select_nth_unstable_by(k, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(scored.into_iter().map(|(d, s)| (ids[d].clone(), s)).collect())
}
