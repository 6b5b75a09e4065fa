//! The command line stages chained on the toy corpus in a temporary
//! directory: toy-corpus, index, retrieve, build-train, train, rerank, eval.

use std::path::Path;

use rankssm::cli::main_with_args;

fn stage(args: &[&str]) {
    let mut argv = vec!["rankssm", "--seed", "0", "--threads", "1"];
    argv.extend_from_slice(args);
    let code = main_with_args(argv);
    assert_eq!(code, 0, "stage {:?} failed", args);
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn main() {
    let tmp = std::env::temp_dir().join(format!("rankssm-pipeline-{}", std::process::id()));
    let d = tmp.as_path();
    stage(&["toy-corpus", "--out", &p(d, "toy")]);
    stage(&["index", "--collection", &p(d, "toy/collection.tsv"), "--out", &p(d, "index")]);
    for (queries, out) in [("toy/queries.tsv", "bm25.run"), ("toy/train_queries.tsv", "train.run")] {
        stage(&["retrieve", "--index", &p(d, "index"), "--queries", &p(d, queries), "--out", &p(d, out)]);
    }
    stage(&[
        "build-train", "--run", &p(d, "train.run"), "--qrels", &p(d, "toy/train_qrels.txt"),
        "--collection", &p(d, "toy/collection.tsv"), "--queries", &p(d, "toy/train_queries.tsv"),
        "--out", &p(d, "train.jsonl"),
    ]);
    // a short run: keep only the first samples
    let text = std::fs::read_to_string(d.join("train.jsonl")).unwrap();
    let head: String = text.lines().take(64).map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("small.jsonl"), head).unwrap();
    std::fs::write(d.join("model.cfg"), "kind=mamba\nn_layers=1\nd_model=16\nn_state=4\n").unwrap();
    stage(&[
        "train", "--samples", &p(d, "small.jsonl"), "--model-config", &p(d, "model.cfg"),
        "--lr", "1e-3", "--warmup", "5", "--batch", "4", "--out", &p(d, "ckpt"),
    ]);
    stage(&[
        "rerank", "--run", &p(d, "bm25.run"), "--checkpoint", &p(d, "ckpt/final.rksm"),
        "--collection", &p(d, "toy/collection.tsv"), "--queries", &p(d, "toy/queries.tsv"),
        "--out", &p(d, "reranked.run"),
    ]);
    for run in ["bm25.run", "reranked.run"] {
        println!("== {run}");
        stage(&["eval", "--run", &p(d, run), "--qrels", &p(d, "toy/qrels.txt")]);
    }
    std::fs::remove_dir_all(d).unwrap();
}
