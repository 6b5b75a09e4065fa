//! One-pass contrastive training of a [`Reranker`].

use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamSet, Tape};
use crate::error::{Error, Result};
use crate::models::{LoraSpec, Reranker};
use crate::nn::{checkpoint, warmup_linear_lr, AdamW, AdamWConfig};
use crate::rerank::{infonce_loss, input_ids, write_samples, TrainingSample};

/// Number of intermediate checkpoints written during a run.
pub const INTERMEDIATE_CHECKPOINTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub negatives: usize,
    /// Samples averaged per optimizer step.
    pub queries_per_batch: usize,
    pub seed: u64,
    pub lora: Option<LoraSpec>,
    /// Token budget per formatted pair.
    pub max_len: usize,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            warmup_steps: 1000,
            epochs: 1,
            negatives: 7,
            queries_per_batch: 8,
            seed: 0,
            lora: None,
            max_len: 512,
            adamw: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.queries_per_batch == 0 || self.negatives == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "epochs, queries_per_batch, negatives and max_len must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Warmup actually used for a run of `total` steps. A warmup that does
    /// not fit is shortened to a tenth of the run.
    pub fn effective_warmup(&self, total: usize) -> usize {
        if self.warmup_steps >= 1 && self.warmup_steps < total {
            self.warmup_steps
        } else {
            total.div_ceil(10).min(total.saturating_sub(1)).max(1)
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub steps: usize,
    pub warmup_steps: usize,
    /// `(step, lr, mean loss)` per optimizer step.
    pub log: Vec<(usize, f64, f64)>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.2).collect()
    }
}

/// Steps after which intermediate checkpoints `1..=10` are written.
pub fn checkpoint_schedule(total_steps: usize) -> Vec<usize> {
    (1..=INTERMEDIATE_CHECKPOINTS)
        .map(|i| (i * total_steps).div_ceil(INTERMEDIATE_CHECKPOINTS + 1).max(1))
        .collect()
}

/// Moving averages over every full window (the whole series if shorter).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.clamp(1, values.len().max(1));
    values.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

fn lr_at(config: &TrainConfig, index: usize, warmup: usize, total: usize) -> Result<f64> {
    if total < 2 {
        return Ok(config.lr);
    }
    warmup_linear_lr(index, config.lr, warmup, total)
}

fn sample_loss(model: &Reranker, params: &mut ParamSet, s: &TrainingSample, max_len: usize, scale: f64) -> Result<f64> {
    let kind = model.config().kind;
    let mut tape = Tape::new();
    let pos_ids = input_ids(&s.query, &s.pos, kind, max_len)?;
    let pos = model.score(&mut tape, params, &pos_ids)?;
    let mut negs = Vec::with_capacity(s.negs.len());
    for n in &s.negs {
        let ids = input_ids(&s.query, &n.text, kind, max_len)?;
        negs.push(model.score(&mut tape, params, &ids)?);
    }
    let loss = infonce_loss(&mut tape, pos, &negs)?;
    let value = tape.value(loss).data()[0];
    let scaled = tape.scale(loss, scale)?;
    let grads = tape.backward(scaled)?;
    params.accumulate(&tape, &grads)?;
    Ok(value)
}

fn dump_batch(dir: Option<&Path>, step: usize, batch: &[&TrainingSample]) -> String {
    let Some(dir) = dir else { return String::new() };
    let path = dir.join(format!("nonfinite-step{step}.jsonl"));
    let owned: Vec<TrainingSample> = batch.iter().map(|s| (*s).clone()).collect();
    match write_samples(&path, &owned) {
        Ok(()) => format!("; batch written to {}", path.display()),
        Err(e) => format!("; could not write batch dump: {e}"),
    }
}

/// Trains `model` in place. Samples are visited once per epoch in an order
/// fixed by `config.seed`; each optimizer step averages the InfoNCE loss of
/// `queries_per_batch` samples. With `out_dir`, ten intermediate checkpoints,
/// `final.rksm`, `model.cfg` and `loss.csv` are written there.
pub fn train(
    samples: &[TrainingSample],
    model: &mut Reranker,
    params: &mut ParamSet,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.negs.len() != config.negatives) {
        return Err(Error::Data(format!(
            "sample for query {} has {} negatives, expected {}",
            bad.qid,
            bad.negs.len(),
            config.negatives
        )));
    }
    if let Some(l) = config.lora {
        match model.config().lora {
            None => model.apply_lora(params, l.rank, l.alpha)?,
            Some(have) if have == l => {}
            Some(have) => {
                return Err(Error::Config(format!(
                    "model carries LoRA rank {} alpha {}, config asks for rank {} alpha {}",
                    have.rank, have.alpha, l.rank, l.alpha
                )))
            }
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        model.config().save(dir.join("model.cfg"))?;
    }

    let per_epoch = samples.len().div_ceil(config.queries_per_batch);
    let total = per_epoch * config.epochs;
    let warmup = config.effective_warmup(total);
    if warmup != config.warmup_steps {
        warn!("warmup of {} steps does not fit {total} steps; using {warmup}", config.warmup_steps);
    }
    let schedule = checkpoint_schedule(total);
    let mut optimizer = AdamW::new(config.adamw, params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = TrainReport {
        steps: total,
        warmup_steps: warmup,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.queries_per_batch) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut total_loss = 0.0;
            for s in &batch {
                match sample_loss(model, params, s, config.max_len, scale) {
                    Ok(l) => total_loss += l,
                    Err(Error::Numeric(msg)) => {
                        let where_ = dump_batch(out_dir, step + 1, &batch);
                        return Err(Error::Numeric(format!("{msg} at step {}{where_}", step + 1)));
                    }
                    Err(e) => return Err(e),
                }
            }
            let loss = total_loss * scale;
            if !loss.is_finite() {
                let where_ = dump_batch(out_dir, step + 1, &batch);
                return Err(Error::Numeric(format!("loss became {loss} at step {}{where_}", step + 1)));
            }
            let lr = lr_at(config, step, warmup, total)?;
            optimizer.step(params, lr)?;
            step += 1;
            report.log.push((step, lr, loss));
            if step % 50 == 0 || step == total {
                info!("epoch {epoch} step {step}/{total} lr {lr:.3e} loss {loss:.4}");
            }
            if let Some(dir) = out_dir {
                for (i, _) in schedule.iter().enumerate().filter(|(_, s)| **s == step) {
                    let path = dir.join(format!("checkpoint-{:02}.rksm", i + 1));
                    checkpoint::save(params, &path)?;
                    report.checkpoints.push(path);
                }
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join("final.rksm");
        checkpoint::save(params, &path)?;
        report.final_checkpoint = Some(path);
        write_loss_log(dir.join("loss.csv"), &report.log)?;
    }
    Ok(report)
}

pub fn write_loss_log(path: impl AsRef<Path>, log: &[(usize, f64, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,lr,loss")?;
    for (step, lr, loss) in log {
        writeln!(f, "{step},{lr:e},{loss:.9}")?;
    }
    f.flush()?;
    Ok(())
}
