//! MRR@k and NDCG@k over a run and graded judgments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};
use crate::retrieval::trec::{Qrels, Run};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Gain {
    /// `gain(g) = g`, as in trec_eval.
    #[default]
    Linear,
    /// `gain(g) = 2^g − 1`.
    Exponential,
}

impl Gain {
    pub fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

impl FromStr for Gain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Gain::Linear),
            "exponential" => Ok(Gain::Exponential),
            other => Err(Error::Parameter(format!("unknown gain '{other}'"))),
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Parameter("metric cutoff k must be >= 1".into()));
    }
    Ok(())
}

static NO_JUDGMENTS: BTreeMap<String, u32> = BTreeMap::new();

/// `1/rank` of the first document with grade ≥ 1 within the top `k`, else 0.
pub fn reciprocal_rank(ranked: &[&str], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|d| judged.get(*d).is_some_and(|g| *g >= 1))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

fn dcg(grades: impl Iterator<Item = u32>, gain: Gain) -> f64 {
    grades.enumerate().map(|(i, g)| gain.apply(g) / ((i + 2) as f64).log2()).sum()
}

/// NDCG@k of one ranking; unjudged documents count as grade 0. Returns 0
/// when the query has no relevant documents.
pub fn ndcg(ranked: &[&str], judged: &BTreeMap<String, u32>, k: usize, gain: Gain) -> f64 {
    let mut ideal: Vec<u32> = judged.values().copied().filter(|g| *g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k), gain);
    if idcg == 0.0 {
        return 0.0;
    }
    let got = dcg(ranked.iter().take(k).map(|d| judged.get(*d).copied().unwrap_or(0)), gain);
    got / idcg
}

fn per_query(run: &Run, qrels: &Qrels, f: impl Fn(&[&str], &BTreeMap<String, u32>) -> f64) -> f64 {
    if run.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (qid, list) in run {
        let judged = qrels.get(qid).unwrap_or(&NO_JUDGMENTS);
        if !judged.values().any(|g| *g > 0) {
            warn!("query {qid} has no relevant judgments; it scores 0");
        }
        let ids: Vec<&str> = list.iter().map(|e| e.0.as_str()).collect();
        total += f(&ids, judged);
    }
    total / run.len() as f64
}

/// Mean reciprocal rank at cutoff `k` over the run's queries.
pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(per_query(run, qrels, |r, j| reciprocal_rank(r, j, k)))
}

/// Mean NDCG at cutoff `k` over the run's queries.
pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize, gain: Gain) -> Result<f64> {
    check_k(k)?;
    Ok(per_query(run, qrels, |r, j| ndcg(r, j, k, gain)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Mrr,
    Ndcg,
}

/// A metric name with its cutoff, written `mrr@100` or `ndcg@10`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub k: usize,
}

impl FromStr for MetricSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = s
            .trim()
            .split_once('@')
            .ok_or_else(|| Error::Parameter(format!("metric '{s}' must look like name@k")))?;
        let k: usize = k.parse().map_err(|_| Error::Parameter(format!("bad cutoff in '{s}'")))?;
        check_k(k)?;
        let kind = match name {
            "mrr" => MetricKind::Mrr,
            "ndcg" => MetricKind::Ndcg,
            other => return Err(Error::Parameter(format!("unknown metric '{other}'"))),
        };
        Ok(MetricSpec { kind, k })
    }
}

pub fn parse_metric_list(s: &str) -> Result<Vec<MetricSpec>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub k: usize,
    pub value: f64,
    pub num_queries: usize,
}

pub fn evaluate(run: &Run, qrels: &Qrels, metrics: &[MetricSpec], gain: Gain) -> Result<Vec<MetricRow>> {
    metrics
        .iter()
        .map(|m| {
            let (metric, value) = match m.kind {
                MetricKind::Mrr => ("mrr", mrr_at_k(run, qrels, m.k)?),
                MetricKind::Ndcg => ("ndcg", ndcg_at_k(run, qrels, m.k, gain)?),
            };
            Ok(MetricRow {
                metric: metric.to_string(),
                k: m.k,
                value,
                num_queries: run.len(),
            })
        })
        .collect()
}

/// CSV with header `metric,k,value,num_queries`.
pub fn format_metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("metric,k,value,num_queries\n");
    for r in rows {
        writeln!(out, "{},{},{:.6},{}", r.metric, r.k, r.value, r.num_queries).expect("string write");
    }
    out
}
