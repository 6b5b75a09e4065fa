//! Forward+backward throughput and peak-memory harness.
//!
//! Each (kernel, L) pair runs `warmup` discarded passes then `repeats` timed
//! passes over a batch of random sequences. Peak bytes come from the
//! per-thread [`crate::memory`] counter, so only tensor and scan buffers are
//! counted.

use std::fmt;
use std::io::Write;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::memory;
use crate::models::attention;
use crate::ssm::{
    conv_apply_op, conv_kernel_op, selective_scan_op, BackwardMemory, MambaBlock, MambaConfig, ScanConfig,
    ScanMode,
};
use crate::tensor::Tensor;

pub const CSV_HEADER: &str =
    "kernel,L,d_model,n_state,batch,median_ns,tokens_per_sec,peak_bytes,threads,min_ns,max_ns,status";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kernel {
    /// Selective scan, sequential, store-all backward.
    SelectiveScan,
    SelectiveScanParallel,
    SelectiveScanRecompute,
    /// LTI kernel construction plus causal convolution.
    LtiConv,
    /// Single-head causal softmax attention that materializes `L×L` scores.
    Attention,
    MambaBlock,
}

impl Kernel {
    pub const ALL: [Kernel; 6] = [
        Kernel::SelectiveScan,
        Kernel::SelectiveScanParallel,
        Kernel::SelectiveScanRecompute,
        Kernel::LtiConv,
        Kernel::Attention,
        Kernel::MambaBlock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::SelectiveScan => "selective_scan",
            Kernel::SelectiveScanParallel => "selective_scan_parallel",
            Kernel::SelectiveScanRecompute => "selective_scan_recompute",
            Kernel::LtiConv => "lti_conv",
            Kernel::Attention => "attention",
            Kernel::MambaBlock => "mamba_block",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown kernel '{s}'")))
    }
}

/// Comma-separated kernel names; `all` expands to every kernel.
pub fn parse_kernel_list(s: &str) -> Result<Vec<Kernel>> {
    if s.trim() == "all" {
        return Ok(Kernel::ALL.to_vec());
    }
    s.split(',').map(|k| k.trim().parse()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub d_model: usize,
    pub n_state: usize,
    pub batch: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            d_model: 16,
            n_state: 16,
            batch: 4,
            threads: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub kernel: String,
    pub len: usize,
    pub d_model: usize,
    pub n_state: usize,
    pub batch: usize,
    pub median_ns: u64,
    pub tokens_per_sec: f64,
    pub peak_bytes: usize,
    pub threads: usize,
    pub min_ns: u64,
    pub max_ns: u64,
    pub status: Status,
}

impl BenchRecord {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

/// Random inputs for one sequence of one kernel.
struct Case {
    tensors: Vec<Tensor>,
    params: Option<(ParamSet, MambaBlock)>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

fn make_case(kernel: Kernel, len: usize, cfg: &BenchConfig, rng: &mut ChaCha8Rng) -> Result<Case> {
    let (d, n) = (cfg.d_model, cfg.n_state);
    let tensors = match kernel {
        Kernel::SelectiveScan | Kernel::SelectiveScanParallel | Kernel::SelectiveScanRecompute => vec![
            uniform(rng, &[len, d], -1.0, 1.0),
            uniform(rng, &[len, d], 0.001, 0.1),
            uniform(rng, &[d, n], -1.0, 1.0),
            uniform(rng, &[len, n], -1.0, 1.0),
            uniform(rng, &[len, n], -1.0, 1.0),
        ],
        Kernel::LtiConv => vec![
            uniform(rng, &[d, len], -1.0, 1.0),
            uniform(rng, &[d], 0.001, 0.1),
            uniform(rng, &[d, n], -1.0, 1.0),
            uniform(rng, &[d, n], -1.0, 1.0),
            uniform(rng, &[d, n], -1.0, 1.0),
        ],
        Kernel::Attention => (0..3).map(|_| uniform(rng, &[len, d], -1.0, 1.0)).collect(),
        Kernel::MambaBlock => vec![uniform(rng, &[len, d], -1.0, 1.0)],
    };
    let params = if kernel == Kernel::MambaBlock {
        let mut params = ParamSet::new();
        let block = MambaBlock::new(&mut params, "bench", MambaConfig::new(d, n), rng)?;
        Some((params, block))
    } else {
        None
    };
    Ok(Case { tensors, params })
}

fn scan_config(kernel: Kernel) -> ScanConfig {
    match kernel {
        Kernel::SelectiveScanParallel => ScanConfig { mode: ScanMode::Parallel, memory: BackwardMemory::StoreAll },
        Kernel::SelectiveScanRecompute => ScanConfig { mode: ScanMode::Sequential, memory: BackwardMemory::Recompute },
        _ => ScanConfig { mode: ScanMode::Sequential, memory: BackwardMemory::StoreAll },
    }
}

/// One forward+backward pass. Returns the forward output.
fn run_case(kernel: Kernel, case: &Case) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = match kernel {
        Kernel::SelectiveScan | Kernel::SelectiveScanParallel | Kernel::SelectiveScanRecompute => {
            selective_scan_op(&mut tape, vars[0], vars[1], vars[2], vars[3], vars[4], None, scan_config(kernel))?
        }
        Kernel::LtiConv => {
            let len = case.tensors[0].shape()[1];
            let taps = conv_kernel_op(&mut tape, vars[1], vars[2], vars[3], vars[4], len)?;
            conv_apply_op(&mut tape, vars[0], taps)?
        }
        Kernel::Attention => attention(&mut tape, vars[0], vars[1], vars[2], 1, true)?,
        Kernel::MambaBlock => {
            let (params, block) = case.params.as_ref().expect("mamba case carries parameters");
            block.forward(&mut tape, params, vars[0], ScanConfig::default())?
        }
    };
    let loss = tape.sum(y)?;
    tape.backward(loss)?;
    Ok(tape.value(y).clone())
}

fn run_batch(kernel: Kernel, cases: &[Case]) -> Result<Vec<Tensor>> {
    cases.iter().map(|c| run_case(kernel, c)).collect()
}

/// The three scan variants share inputs so their outputs can be compared.
fn seed_for(cfg: &BenchConfig, kernel: Kernel, len: usize) -> u64 {
    let family = match kernel {
        Kernel::SelectiveScanParallel | Kernel::SelectiveScanRecompute => Kernel::SelectiveScan,
        k => k,
    };
    cfg.seed ^ ((family as u64) << 40) ^ len as u64
}

fn make_cases(kernel: Kernel, len: usize, cfg: &BenchConfig) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(cfg, kernel, len));
    (0..cfg.batch).map(|_| make_case(kernel, len, cfg, &mut rng)).collect()
}

/// Forward outputs of one batch, computed outside any timing loop. The
/// harness checks every timed pass against this.
pub fn reference_outputs(kernel: Kernel, len: usize, cfg: &BenchConfig) -> Result<Vec<Tensor>> {
    run_batch(kernel, &make_cases(kernel, len, cfg)?)
}

fn median(sorted: &[u64]) -> u64 {
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        (sorted[m - 1] + sorted[m]) / 2
    }
}

fn measure(kernel: Kernel, len: usize, cfg: &BenchConfig, repeats: usize, warmup: usize) -> Result<(Vec<u64>, usize)> {
    let cases = make_cases(kernel, len, cfg)?;
    let mut reference = None;
    for _ in 0..warmup {
        reference = Some(run_batch(kernel, &cases)?);
    }
    let reference = reference.expect("at least one warmup run");
    let mut times = Vec::with_capacity(repeats);
    memory::reset_peak();
    let base = memory::live_bytes();
    for _ in 0..repeats {
        let start = Instant::now();
        let out = run_batch(kernel, &cases)?;
        times.push((start.elapsed().as_nanos() as u64).max(1));
        if out != reference {
            return Err(Error::Numeric(format!("{kernel} output changed between runs at L={len}")));
        }
    }
    let peak = memory::peak_bytes().saturating_sub(base);
    times.sort_unstable();
    Ok((times, peak))
}

/// Runs the sweep. A kernel that fails or panics at some length yields a
/// `Failed` record and the sweep continues.
pub fn run_benchmark(
    kernels: &[Kernel],
    lengths: &[usize],
    cfg: &BenchConfig,
    repeats: usize,
    warmup: usize,
) -> Result<Vec<BenchRecord>> {
    if repeats < 5 || warmup < 1 {
        return Err(Error::Parameter(format!(
            "need at least 5 repeats and 1 warmup, got {repeats} and {warmup}"
        )));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) || lengths.contains(&0) {
        return Err(Error::Parameter(format!("lengths must be positive and ascending: {lengths:?}")));
    }
    if cfg.batch == 0 || cfg.d_model == 0 || cfg.n_state == 0 || cfg.threads == 0 {
        return Err(Error::Config("batch, d_model, n_state and threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut records = Vec::new();
    for &kernel in kernels {
        for &len in lengths {
            let outcome = pool.install(|| {
                std::panic::catch_unwind(AssertUnwindSafe(|| measure(kernel, len, cfg, repeats, warmup)))
            });
            let mut rec = BenchRecord {
                kernel: kernel.name().to_string(),
                len,
                d_model: cfg.d_model,
                n_state: cfg.n_state,
                batch: cfg.batch,
                median_ns: 0,
                tokens_per_sec: 0.0,
                peak_bytes: 0,
                threads: cfg.threads,
                min_ns: 0,
                max_ns: 0,
                status: Status::Failed,
            };
            match outcome {
                Ok(Ok((times, peak))) => {
                    rec.median_ns = median(&times);
                    rec.min_ns = times[0];
                    rec.max_ns = times[times.len() - 1];
                    rec.tokens_per_sec = (len * cfg.batch) as f64 / (rec.median_ns as f64 * 1e-9);
                    rec.peak_bytes = peak;
                    rec.status = Status::Ok;
                }
                Ok(Err(e)) => warn!("{kernel} at L={len} failed: {e}"),
                Err(_) => warn!("{kernel} at L={len} panicked"),
            }
            records.push(rec);
        }
    }
    Ok(records)
}

pub fn format_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let status = match r.status {
            Status::Ok => "ok",
            Status::Failed => "failed",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.kernel,
            r.len,
            r.d_model,
            r.n_state,
            r.batch,
            r.median_ns,
            r.tokens_per_sec,
            r.peak_bytes,
            r.threads,
            r.min_ns,
            r.max_ns,
            status
        ));
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::parse(1, "missing benchmark CSV header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::parse(i + 1, format!("expected 12 fields, got {}", f.len())));
        }
        let bad = |what: &str| Error::parse(i + 1, format!("bad {what}"));
        let int = |j: usize, what: &str| f[j].parse::<u64>().map_err(|_| bad(what));
        out.push(BenchRecord {
            kernel: f[0].to_string(),
            len: int(1, "L")? as usize,
            d_model: int(2, "d_model")? as usize,
            n_state: int(3, "n_state")? as usize,
            batch: int(4, "batch")? as usize,
            median_ns: int(5, "median_ns")?,
            tokens_per_sec: f[6].parse().map_err(|_| bad("tokens_per_sec"))?,
            peak_bytes: int(7, "peak_bytes")? as usize,
            threads: int(8, "threads")? as usize,
            min_ns: int(9, "min_ns")?,
            max_ns: int(10, "max_ns")?,
            status: match f[11] {
                "ok" => Status::Ok,
                "failed" => Status::Failed,
                _ => return Err(bad("status")),
            },
        });
    }
    Ok(out)
}

pub fn write_csv(path: impl AsRef<Path>, records: &[BenchRecord]) -> Result<()> {
    std::fs::write(path, format_csv(records))?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>> {
    parse_csv(&std::fs::read_to_string(path)?)
}

fn kernel_names(records: &[BenchRecord]) -> Vec<&str> {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.kernel.as_str()) {
            names.push(&r.kernel);
        }
    }
    names
}

/// Gnuplot data: one row per length, one median-seconds column per kernel,
/// `NaN` where a kernel has no successful record.
pub fn format_gnuplot(records: &[BenchRecord]) -> String {
    let names = kernel_names(records);
    let mut lengths: Vec<usize> = records.iter().map(|r| r.len).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut out = format!("# L {}\n", names.join(" "));
    for len in lengths {
        out.push_str(&len.to_string());
        for name in &names {
            let v = records
                .iter()
                .find(|r| r.kernel == *name && r.len == len && r.is_ok())
                .map(|r| format!("{:e}", r.median_ns as f64 * 1e-9))
                .unwrap_or_else(|| "NaN".into());
            out.push(' ');
            out.push_str(&v);
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub kernel: String,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares fit of `ln(time) = slope·ln(L) + intercept` per kernel over
/// successful records. Kernels with fewer than three points are left out.
pub fn scaling_report(records: &[BenchRecord]) -> Vec<ScalingRow> {
    let mut rows = Vec::new();
    for name in kernel_names(records) {
        let pts: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.kernel == name && r.is_ok())
            .map(|r| ((r.len as f64).ln(), (r.median_ns as f64).ln()))
            .collect();
        if pts.len() < 3 {
            warn!("{name}: {} points, need 3 for a slope", pts.len());
            continue;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        rows.push(ScalingRow {
            kernel: name.to_string(),
            points: pts.len(),
            slope,
            intercept: my - slope * mx,
        });
    }
    rows
}

pub fn format_scaling(rows: &[ScalingRow]) -> String {
    let mut out = String::from("kernel,points,slope\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.4}\n", r.kernel, r.points, r.slope));
    }
    out
}

/// Writes `<stem>.csv`-style output plus a gnuplot `.dat` next to it.
pub fn write_outputs(csv_path: impl AsRef<Path>, records: &[BenchRecord]) -> Result<()> {
    let csv_path = csv_path.as_ref();
    write_csv(csv_path, records)?;
    let mut dat = std::fs::File::create(csv_path.with_extension("dat"))?;
    dat.write_all(format_gnuplot(records).as_bytes())?;
    Ok(())
}
