//! First-stage retrieval and evaluation on the generated toy corpus: BM25
//! top-100 with k1=4.46, b=0.82, then MRR@100 and NDCG@10.

use rankssm::retrieval::toy::{ToyConfig, ToyCorpus};
use rankssm::retrieval::{
    evaluate, format_metrics_csv, parse_metric_list, retrieve_topk, Bm25Params, Gain, InvertedIndex, Run,
};

fn main() -> rankssm::Result<()> {
    let corpus = ToyCorpus::generate(&ToyConfig::default());
    let index = InvertedIndex::build(corpus.docs.iter().map(|(id, t)| (id.as_str(), t.as_str())))?;
    println!("{} documents, average length {:.2} terms", index.doc_count(), index.avg_doc_length());

    let params = Bm25Params::default();
    let run: Run = corpus
        .eval_queries
        .iter()
        .map(|(qid, text)| Ok((qid.clone(), retrieve_topk(&index, text, 100, params)?)))
        .collect::<rankssm::Result<_>>()?;
    let (qid, text) = &corpus.eval_queries[0];
    println!("query {qid} '{text}':");
    for (doc, score) in run[qid].iter().take(3) {
        let grade = corpus.eval_qrels[qid].get(doc).copied().unwrap_or(0);
        println!("  {doc} {score:.4} grade={grade}");
    }
    let rows = evaluate(&run, &corpus.eval_qrels, &parse_metric_list("mrr@100,ndcg@10")?, Gain::Linear)?;
    print!("{}", format_metrics_csv(&rows));
    Ok(())
}
