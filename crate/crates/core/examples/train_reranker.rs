//! Train a small Mamba reranker on the toy corpus with InfoNCE over seven
//! BM25 hard negatives, then rerank the evaluation queries.
//!
//! Defaults to a short run; pass a sample count (or `all`) to train longer:
//! `cargo run --release --example train_reranker -- all`.

use rankssm::models::{BackboneConfig, Reranker};
use rankssm::rerank::{smoothed, train, Experiment, TrainConfig};
use rankssm::retrieval::toy::{ToyConfig, ToyCorpus};

fn main() -> rankssm::Result<()> {
    let limit = match std::env::args().nth(1).as_deref() {
        Some("all") => usize::MAX,
        Some(n) => n.parse().expect("sample count"),
        None => 200,
    };
    let corpus = ToyCorpus::generate(&ToyConfig::default());
    let exp = Experiment::from_corpus(&corpus, 7, 0)?;
    let samples = &exp.samples[..limit.min(exp.samples.len())];
    println!("{} training samples (of {})", samples.len(), exp.samples.len());

    let cfg = BackboneConfig { n_layers: 2, d_model: 64, n_state: 8, ..Default::default() };
    let (mut params, mut model) = Reranker::new(&cfg)?;
    println!("parameters: {:?}", model.summary(&params));
    println!("MRR@100 bm25 {:.4} shuffled {:.4}", exp.bm25_mrr()?, exp.shuffled_mrr(1)?);
    println!("MRR@100 untrained {:.4}", exp.model_mrr(&model, &params)?);

    let tc = TrainConfig { lr: 1e-3, warmup_steps: 30, queries_per_batch: 2, seed: 0, ..Default::default() };
    let report = train(samples, &mut model, &mut params, &tc, None)?;
    let s = smoothed(&report.losses(), 50);
    println!("{} steps, smoothed loss {:.4} -> {:.4}", report.steps, s[0], s[s.len() - 1]);
    println!("MRR@100 trained {:.4}", exp.model_mrr(&model, &params)?);
    Ok(())
}
