//! The scoring function `f(q, d) → s`: backbone plus a linear head on one
//! designated token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::models::backbone::{config_rng, Backbone};
use crate::models::config::{BackboneConfig, LoraSpec};
use crate::models::vocab::{CLS, EOS};
use crate::nn::{init, Linear};
use crate::ssm::ScanConfig;
use crate::tensor::Tensor;

/// `d_model → 1` linear layer with bias.
#[derive(Clone, Debug)]
pub struct RankingHead {
    pub linear: Linear,
}

impl RankingHead {
    pub fn new(params: &mut ParamSet, d_model: usize, rng: &mut ChaCha8Rng) -> Self {
        RankingHead {
            linear: Linear::new(params, "head", d_model, 1, true, init::INIT_STD, rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Reranker {
    pub backbone: Backbone,
    pub head: RankingHead,
    pub scan: ScanConfig,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSummary {
    pub total: usize,
    pub trainable: usize,
    pub backbone: usize,
    pub head: usize,
}

impl Reranker {
    /// Builds a model and its parameters; weights depend only on `config.seed`.
    pub fn new(config: &BackboneConfig) -> Result<(ParamSet, Self)> {
        let mut params = ParamSet::new();
        let mut rng = config_rng(config);
        let backbone = Backbone::new(&mut params, config, &mut rng)?;
        let head = RankingHead::new(&mut params, config.d_model, &mut rng);
        let mut model = Reranker {
            backbone,
            head,
            scan: ScanConfig::default(),
        };
        if let Some(l) = config.lora {
            model.attach_lora(&mut params, l.rank, l.alpha)?;
        }
        Ok((params, model))
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.backbone.config
    }

    /// Freezes the backbone and attaches adapters; the head stays trainable.
    pub fn apply_lora(&mut self, params: &mut ParamSet, rank: usize, alpha: f64) -> Result<()> {
        if self.config().lora.is_some() {
            return Err(Error::Config("model already carries LoRA adapters".into()));
        }
        self.attach_lora(params, rank, alpha)
    }

    fn attach_lora(&mut self, params: &mut ParamSet, rank: usize, alpha: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config().seed ^ 0x4c6f5241);
        self.backbone.apply_lora(params, rank, alpha, &mut rng)?;
        self.backbone.config.lora = Some(LoraSpec { rank, alpha });
        Ok(())
    }

    /// Position whose representation feeds the head.
    pub fn score_position(&self, ids: &[usize]) -> Result<usize> {
        if self.config().kind.is_causal() {
            match ids.last() {
                Some(&EOS) => Ok(ids.len() - 1),
                _ => Err(Error::InputFormat("causal scoring needs the sequence to end with EOS".into())),
            }
        } else {
            match ids.first() {
                Some(&CLS) => Ok(0),
                _ => Err(Error::InputFormat("bidirectional scoring needs the sequence to start with CLS".into())),
            }
        }
    }

    /// Scalar relevance score recorded on `tape`.
    pub fn score(&self, tape: &mut Tape, params: &ParamSet, ids: &[usize]) -> Result<Var> {
        let pos = self.score_position(ids)?;
        let h = self.backbone.forward(tape, params, ids, self.scan)?;
        let d = self.config().d_model;
        let row = tape.row(h, pos)?;
        let row = tape.reshape(row, &[1, d])?;
        let s = self.head.linear.forward(tape, params, row)?;
        tape.reshape(s, &[])
    }

    /// Forward-only score.
    pub fn score_value(&self, params: &ParamSet, ids: &[usize]) -> Result<f64> {
        let mut tape = Tape::no_grad();
        let s = self.score(&mut tape, params, ids)?;
        tape.value(s).item()
    }

    pub fn summary(&self, params: &ParamSet) -> ParamSummary {
        let mut s = ParamSummary {
            total: 0,
            trainable: 0,
            backbone: 0,
            head: 0,
        };
        for id in params.ids() {
            let n = params.get(id).len();
            s.total += n;
            if params.is_trainable(id) {
                s.trainable += n;
            }
            if params.name(id).starts_with("head.") {
                s.head += n;
            } else {
                s.backbone += n;
            }
        }
        s
    }

    /// Sets the head to a constant: zero weight, the given bias.
    pub fn set_constant_head(&self, params: &mut ParamSet, bias: f64) -> Result<()> {
        params.set(self.head.linear.weight, Tensor::zeros(&[self.config().d_model, 1]))?;
        params.set(self.head.linear.bias.expect("head has a bias"), Tensor::vector(vec![bias])?)
    }
}
