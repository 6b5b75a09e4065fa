//! First-stage BM25 retrieval, reranking, IR metrics and TREC file formats.

mod index;
mod metrics;
mod rerank;
pub mod toy;
pub mod trec;

pub use index::{analyze, bm25_score, retrieve_topk, Bm25Params, InvertedIndex};
pub use metrics::{
    evaluate, format_metrics_csv, mrr_at_k, ndcg, ndcg_at_k, parse_metric_list, reciprocal_rank, Gain,
    MetricKind, MetricRow, MetricSpec,
};
pub use rerank::rerank;
pub use trec::{Qrels, Run};
