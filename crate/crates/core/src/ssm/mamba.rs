//! The Mamba block: gated selective SSM with a short causal convolution.
//!
//! ```text
//! x      = rmsnorm(u)
//! [s, z] = x·W_in                      (L×2·d_inner)
//! s      = silu(conv1d(s))
//! y      = selective_scan(s) ⊙ silu(z)
//! out    = u + y·W_out
//! ```

use rand::Rng;

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{init, Linear, Projection};
use crate::ssm::conv1d::causal_conv1d;
use crate::ssm::selective::{ScanConfig, SelectiveSsm};
use crate::tensor::Tensor;

pub const RMS_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MambaConfig {
    pub d_model: usize,
    pub d_inner: usize,
    pub n_state: usize,
    pub conv_width: usize,
}

impl MambaConfig {
    /// `d_inner = 2·d_model`, conv width 4.
    pub fn new(d_model: usize, n_state: usize) -> Self {
        MambaConfig {
            d_model,
            d_inner: 2 * d_model,
            n_state,
            conv_width: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_state == 0 || self.conv_width == 0 {
            return Err(Error::Config(format!("degenerate Mamba config {self:?}")));
        }
        if self.d_inner == 0 || !self.d_inner.is_multiple_of(self.d_model) {
            return Err(Error::Config(format!(
                "d_inner ({}) must be a positive multiple of d_model ({})",
                self.d_inner, self.d_model
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count of one block.
    pub fn num_scalars(&self) -> usize {
        let (d, di, n, k) = (self.d_model, self.d_inner, self.n_state, self.conv_width);
        d                                        // norm
            + d * 2 * di                         // in_proj
            + di * k + di                        // conv
            + SelectiveSsm::num_scalars(di, n, true)
            + di * d // out_proj
    }
}

impl Default for MambaConfig {
    fn default() -> Self {
        MambaConfig::new(64, 16)
    }
}

#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub config: MambaConfig,
    pub norm: ParamId,
    pub in_proj: Projection,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub ssm: SelectiveSsm,
    pub out_proj: Projection,
}

impl MambaBlock {
    pub fn new(params: &mut ParamSet, name: &str, config: MambaConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let MambaConfig { d_model, d_inner, n_state, conv_width } = config;
        let std = init::INIT_STD;
        let norm = params.add(format!("{name}.norm"), Tensor::ones(&[d_model]));
        let in_proj = Linear::new(params, &format!("{name}.in_proj"), d_model, 2 * d_inner, false, std, rng);
        let bound = 1.0 / (conv_width as f64).sqrt();
        let conv_weight = params.add(
            format!("{name}.conv.weight"),
            init::uniform(rng, &[d_inner, conv_width], bound),
        );
        let conv_bias = params.add(format!("{name}.conv.bias"), Tensor::zeros(&[d_inner]));
        let ssm = SelectiveSsm::new(params, &format!("{name}.ssm"), d_inner, n_state, true, rng)?;
        let out_proj = Linear::new(params, &format!("{name}.out_proj"), d_inner, d_model, false, std, rng);
        Ok(MambaBlock {
            config,
            norm,
            in_proj: Projection::Plain(in_proj),
            conv_weight,
            conv_bias,
            ssm,
            out_proj: Projection::Plain(out_proj),
        })
    }

    /// `u` is `L×d_model`; the result has the same shape.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, u: Var, scan: ScanConfig) -> Result<Var> {
        let shape = tape.value(u).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.config.d_model {
            return Err(Error::dim("mamba_block", &[0, self.config.d_model], &shape));
        }
        let di = self.config.d_inner;
        let w = tape.param(params, self.norm)?;
        let x = tape.rmsnorm(u, w, RMS_EPS)?;
        let xz = self.in_proj.forward(tape, params, x)?;
        let s = tape.columns(xz, 0, di)?;
        let z = tape.columns(xz, di, di)?;
        let cw = tape.param(params, self.conv_weight)?;
        let cb = tape.param(params, self.conv_bias)?;
        let s = causal_conv1d(tape, s, cw, Some(cb))?;
        let s = tape.silu(s)?;
        let y = self.ssm.forward(tape, params, s, scan)?;
        let gate = tape.silu(z)?;
        let y = tape.mul(y, gate)?;
        let out = self.out_proj.forward(tape, params, y)?;
        tape.add(u, out)
    }

    pub fn apply_lora(&mut self, params: &mut ParamSet, rank: usize, alpha: f64, rng: &mut impl Rng) -> Result<()> {
        self.in_proj.apply_lora(params, rank, alpha, rng)?;
        self.out_proj.apply_lora(params, rank, alpha, rng)
    }
}
