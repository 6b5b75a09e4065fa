//! Token embedding, a stack of Mamba or attention layers, and a final norm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::models::attention::AttentionLayer;
use crate::models::config::{BackboneConfig, BackboneKind};
use crate::models::vocab::VOCAB_SIZE;
use crate::nn::init;
use crate::ssm::{MambaBlock, MambaConfig, ScanConfig, RMS_EPS};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Layer {
    Mamba(MambaBlock),
    Attention(AttentionLayer),
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub embed: ParamId,
    /// Learned absolute positions (`max_len×d_model`); attention kinds only.
    pub pos: Option<ParamId>,
    pub layers: Vec<Layer>,
    pub final_norm: ParamId,
}

impl Backbone {
    /// Registers all parameters under `backbone.*`, initialized from `rng`.
    pub fn new(params: &mut ParamSet, config: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let embed = params.add("backbone.embed", init::normal(rng, &[VOCAB_SIZE, d], init::INIT_STD));
        let pos = match config.kind {
            BackboneKind::Mamba => None,
            _ => Some(params.add("backbone.pos", init::normal(rng, &[config.max_len, d], init::INIT_STD))),
        };
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let name = format!("backbone.layers.{i}");
            layers.push(match config.kind {
                BackboneKind::Mamba => {
                    Layer::Mamba(MambaBlock::new(params, &name, MambaConfig::new(d, config.n_state), rng)?)
                }
                kind => Layer::Attention(AttentionLayer::new(params, &name, d, config.n_heads, kind.is_causal(), rng)?),
            });
        }
        let final_norm = params.add("backbone.final_norm", Tensor::ones(&[d]));
        Ok(Backbone {
            config: config.clone(),
            embed,
            pos,
            layers,
            final_norm,
        })
    }

    /// Parameter count predicted from the configuration alone.
    pub fn expected_num_scalars(config: &BackboneConfig) -> usize {
        let d = config.d_model;
        let per_layer = match config.kind {
            BackboneKind::Mamba => MambaConfig::new(d, config.n_state).num_scalars(),
            _ => AttentionLayer::num_scalars(d),
        };
        let pos = match config.kind {
            BackboneKind::Mamba => 0,
            _ => config.max_len * d,
        };
        VOCAB_SIZE * d + pos + config.n_layers * per_layer + d
    }

    /// Token representations, `len(ids)×d_model`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, ids: &[usize], scan: ScanConfig) -> Result<Var> {
        if ids.is_empty() || ids.len() > self.config.max_len {
            return Err(Error::Contract(format!(
                "sequence of {} tokens is outside 1..={}; truncate before calling the backbone",
                ids.len(),
                self.config.max_len
            )));
        }
        let table = tape.param(params, self.embed)?;
        let mut h = tape.embedding(table, ids)?;
        if let Some(pos) = self.pos {
            let table = tape.param(params, pos)?;
            let positions: Vec<usize> = (0..ids.len()).collect();
            let p = tape.embedding(table, &positions)?;
            h = tape.add(h, p)?;
        }
        for layer in &self.layers {
            h = match layer {
                Layer::Mamba(b) => b.forward(tape, params, h, scan)?,
                Layer::Attention(a) => a.forward(tape, params, h)?,
            };
        }
        let w = tape.param(params, self.final_norm)?;
        tape.rmsnorm(h, w, RMS_EPS)
    }

    /// Freezes every backbone parameter, then adds trainable low-rank adapters
    /// to the layer projections.
    pub fn apply_lora(&mut self, params: &mut ParamSet, rank: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let ids: Vec<ParamId> = params.ids().filter(|id| params.name(*id).starts_with("backbone.")).collect();
        for id in ids {
            params.set_trainable(id, false);
        }
        for layer in &mut self.layers {
            match layer {
                Layer::Mamba(b) => b.apply_lora(params, rank, alpha, rng)?,
                Layer::Attention(a) => a.apply_lora(params, rank, alpha, rng)?,
            }
        }
        Ok(())
    }
}

/// Deterministic generator for a configuration's initial weights.
pub(crate) fn config_rng(config: &BackboneConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(config.seed)
}
