//! Stage-per-subcommand command line front end.
//!
//! Every stage reads and writes plain files, prints its resolved settings as
//! one `config:` line, and maps failures to exit codes 1 (usage or
//! configuration), 2 (data or I/O) and 3 (numeric).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use crate::autograd::ParamSet;
use crate::bench::{self, BenchConfig};
use crate::error::{Error, Result};
use crate::models::{BackboneConfig, LoraSpec, Reranker};
use crate::nn::checkpoint;
use crate::rerank::{self, TrainConfig};
use crate::retrieval::toy::{ToyConfig, ToyCorpus};
use crate::retrieval::trec::{read_qrels, read_run, read_tsv, write_run};
use crate::retrieval::{self, Bm25Params, InvertedIndex, Run};

/// File name of the persisted index inside its directory.
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Parser)]
#[command(name = "rankssm", version, about = "BM25 retrieval, state space rerankers and throughput benchmarks")]
pub struct Cli {
    /// Seed for every randomized stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an inverted index from a collection TSV.
    Index(IndexArgs),
    /// BM25 top-k retrieval into a TREC run file.
    Retrieve(RetrieveArgs),
    /// Build hard-negative training samples (JSON lines).
    BuildTrain(BuildTrainArgs),
    /// Train a reranker with InfoNCE.
    Train(TrainArgs),
    /// Rescore a run with a trained reranker.
    Rerank(RerankArgs),
    /// Compute MRR/NDCG for a run.
    Eval(EvalArgs),
    /// Forward+backward throughput sweep.
    Bench(BenchArgs),
    /// Write the synthetic toy corpus.
    ToyCorpus(ToyArgs),
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub collection: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 4.46)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.82)]
    pub b: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildTrainArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub collection: PathBuf,
    /// Query texts (TSV).
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub negatives: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub model_config: PathBuf,
    #[arg(long)]
    pub lr: f64,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Samples averaged per optimizer step.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, requires = "lora_alpha")]
    pub lora_rank: Option<usize>,
    #[arg(long, requires = "lora_rank")]
    pub lora_alpha: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to `model.cfg` next to the checkpoint.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub collection: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Candidates rescored per query.
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value = "mrr@100,ndcg@10")]
    pub metrics: String,
    /// `linear` or `exponential`.
    #[arg(long, default_value = "linear")]
    pub gain: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated kernel names, or `all`.
    #[arg(long, default_value = "selective_scan,attention")]
    pub kernels: String,
    #[arg(long, default_value = "256,512,1024,2048,4096")]
    pub lengths: String,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 16)]
    pub d_model: usize,
    #[arg(long, default_value_t = 16)]
    pub n_state: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Generator seed; the bundled corpus under data/toy uses the default.
    #[arg(long, default_value_t = ToyConfig::default().seed)]
    pub corpus_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn print_config(stage: &str, pairs: &[(&str, String)]) {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("config: {stage} {}", body.join(" "));
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

fn text_map(path: &Path) -> Result<HashMap<String, String>> {
    Ok(read_tsv(path)?.into_iter().collect())
}

fn index(args: &IndexArgs) -> Result<()> {
    print_config("index", &[("collection", path(&args.collection)), ("out", path(&args.out))]);
    let docs = read_tsv(&args.collection)?;
    let index = InvertedIndex::build(docs.iter().map(|(id, t)| (id.as_str(), t.as_str())))?;
    std::fs::create_dir_all(&args.out)?;
    index.save(args.out.join(INDEX_FILE))?;
    info!("indexed {} documents", index.doc_count());
    Ok(())
}

fn index_file(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(INDEX_FILE)
    } else {
        p.to_path_buf()
    }
}

fn retrieve(args: &RetrieveArgs) -> Result<()> {
    let params = Bm25Params { k1: args.k1, b: args.b };
    params.validate()?;
    print_config(
        "retrieve",
        &[
            ("index", path(&args.index)),
            ("queries", path(&args.queries)),
            ("k", args.k.to_string()),
            ("k1", args.k1.to_string()),
            ("b", args.b.to_string()),
            ("out", path(&args.out)),
        ],
    );
    let index = InvertedIndex::load(index_file(&args.index))?;
    let queries = read_tsv(&args.queries)?;
    let lists: Vec<(String, Vec<(String, f64)>)> = queries
        .par_iter()
        .map(|(qid, text)| Ok((qid.clone(), retrieval::retrieve_topk(&index, text, args.k, params)?)))
        .collect::<Result<_>>()?;
    let run: Run = lists.into_iter().collect();
    write_run(&args.out, &run, "bm25")
}

fn build_train(args: &BuildTrainArgs, seed: u64) -> Result<()> {
    print_config(
        "build-train",
        &[
            ("run", path(&args.run)),
            ("qrels", path(&args.qrels)),
            ("collection", path(&args.collection)),
            ("queries", path(&args.queries)),
            ("negatives", args.negatives.to_string()),
            ("seed", seed.to_string()),
            ("out", path(&args.out)),
        ],
    );
    let run = read_run(&args.run)?;
    let qrels = read_qrels(&args.qrels)?;
    let docs = text_map(&args.collection)?;
    let queries = text_map(&args.queries)?;
    let samples = rerank::build_samples(&run, &qrels, &queries, &docs, args.negatives, seed)?;
    info!("{} training samples", samples.len());
    rerank::write_samples(&args.out, &samples)
}

fn train(args: &TrainArgs, seed: u64) -> Result<()> {
    let samples = rerank::read_samples(&args.samples)?;
    let model_cfg = BackboneConfig::load(&args.model_config)?;
    let lora = match (args.lora_rank, args.lora_alpha) {
        (Some(rank), Some(alpha)) => Some(LoraSpec { rank, alpha }),
        _ => None,
    };
    let negatives = samples.first().map_or(7, |s| s.negs.len());
    let cfg = TrainConfig {
        lr: args.lr,
        warmup_steps: args.warmup,
        epochs: args.epochs,
        negatives,
        queries_per_batch: args.batch,
        seed,
        lora,
        max_len: model_cfg.max_len,
        ..Default::default()
    };
    let mut pairs = vec![
        ("samples", path(&args.samples)),
        ("model_config", path(&args.model_config)),
        ("kind", model_cfg.kind.to_string()),
        ("n_layers", model_cfg.n_layers.to_string()),
        ("d_model", model_cfg.d_model.to_string()),
        ("lr", args.lr.to_string()),
        ("warmup", args.warmup.to_string()),
        ("epochs", args.epochs.to_string()),
        ("batch", args.batch.to_string()),
        ("negatives", negatives.to_string()),
        ("seed", seed.to_string()),
    ];
    if let Some(l) = lora {
        pairs.push(("lora_rank", l.rank.to_string()));
        pairs.push(("lora_alpha", l.alpha.to_string()));
    }
    pairs.push(("out", path(&args.out)));
    print_config("train", &pairs);
    let (mut params, mut model) = Reranker::new(&model_cfg)?;
    let report = rerank::train(&samples, &mut model, &mut params, &cfg, Some(&args.out))?;
    let losses = report.losses();
    info!(
        "{} steps, warmup {}, first loss {:.4}, last loss {:.4}",
        report.steps,
        report.warmup_steps,
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Loads a reranker from a checkpoint and its `key=value` config.
pub fn load_reranker(checkpoint_path: &Path, config_path: &Path) -> Result<(ParamSet, Reranker)> {
    let cfg = BackboneConfig::load(config_path)?;
    let (mut params, model) = Reranker::new(&cfg)?;
    checkpoint::load_into(&mut params, checkpoint_path)?;
    Ok((params, model))
}

fn rerank_cmd(args: &RerankArgs) -> Result<()> {
    let cfg_path = match &args.model_config {
        Some(p) => p.clone(),
        None => args
            .checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("model.cfg"),
    };
    print_config(
        "rerank",
        &[
            ("run", path(&args.run)),
            ("checkpoint", path(&args.checkpoint)),
            ("model_config", path(&cfg_path)),
            ("collection", path(&args.collection)),
            ("queries", path(&args.queries)),
            ("depth", args.depth.to_string()),
            ("out", path(&args.out)),
        ],
    );
    let (params, model) = load_reranker(&args.checkpoint, &cfg_path)?;
    let run = read_run(&args.run)?;
    let queries = text_map(&args.queries)?;
    let docs = text_map(&args.collection)?;
    let reranked = rerank::rerank_with_model(&run, &queries, &docs, &model, &params, args.depth)?;
    write_run(&args.out, &reranked, "rankssm")
}

fn eval(args: &EvalArgs) -> Result<()> {
    let metrics = retrieval::parse_metric_list(&args.metrics)?;
    let gain: retrieval::Gain = args.gain.parse()?;
    print_config(
        "eval",
        &[
            ("run", path(&args.run)),
            ("qrels", path(&args.qrels)),
            ("metrics", args.metrics.clone()),
            ("gain", args.gain.clone()),
            ("out", args.out.as_deref().map(path).unwrap_or_else(|| "-".into())),
        ],
    );
    let run = read_run(&args.run)?;
    let qrels = read_qrels(&args.qrels)?;
    let rows = retrieval::evaluate(&run, &qrels, &metrics, gain)?;
    let csv = retrieval::format_metrics_csv(&rows);
    match &args.out {
        Some(out) => std::fs::write(out, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn parse_lengths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad sequence length '{v}'")))
        })
        .collect()
}

fn bench_cmd(args: &BenchArgs, seed: u64, threads: usize) -> Result<()> {
    let kernels = bench::parse_kernel_list(&args.kernels)?;
    let lengths = parse_lengths(&args.lengths)?;
    let cfg = BenchConfig {
        d_model: args.d_model,
        n_state: args.n_state,
        batch: args.batch,
        threads,
        seed,
    };
    print_config(
        "bench",
        &[
            ("kernels", args.kernels.clone()),
            ("lengths", args.lengths.clone()),
            ("repeats", args.repeats.to_string()),
            ("warmup", args.warmup.to_string()),
            ("batch", args.batch.to_string()),
            ("d_model", args.d_model.to_string()),
            ("n_state", args.n_state.to_string()),
            ("threads", threads.to_string()),
            ("out", path(&args.out)),
        ],
    );
    let records = bench::run_benchmark(&kernels, &lengths, &cfg, args.repeats, args.warmup)?;
    bench::write_outputs(&args.out, &records)?;
    print!("{}", bench::format_scaling(&bench::scaling_report(&records)));
    Ok(())
}

fn toy(args: &ToyArgs) -> Result<()> {
    let cfg = ToyConfig { seed: args.corpus_seed, ..ToyConfig::default() };
    print_config("toy-corpus", &[("corpus_seed", cfg.seed.to_string()), ("out", path(&args.out))]);
    ToyCorpus::generate(&cfg).write(&args.out)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Index(a) => index(a),
        Command::Retrieve(a) => retrieve(a),
        Command::BuildTrain(a) => build_train(a, cli.seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Rerank(a) => rerank_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a, cli.seed, cli.threads),
        Command::ToyCorpus(a) => toy(a),
    })
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
