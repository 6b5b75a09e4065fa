use rand::Rng;

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::init;
use crate::tensor::Tensor;

/// `y = x·W (+ b)` with `W` stored as `d_in × d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Registers a new layer with `Normal(0, std)` weights and zero bias.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), init::normal(rng, &[d_in, d_out], std));
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(&[d_out])));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight)?;
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(params, b)?;
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.d_in * self.d_out + if self.bias.is_some() { self.d_out } else { 0 }
    }
}

/// Low-rank adapter around a frozen [`Linear`]:
/// `y = base(x) + (alpha / rank) · x·down·up`.
#[derive(Clone, Debug)]
pub struct LoraLinear {
    pub base: Linear,
    pub down: ParamId,
    pub up: ParamId,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraLinear {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let base = self.base.forward(tape, params, x)?;
        let down = tape.param(params, self.down)?;
        let up = tape.param(params, self.up)?;
        let low = tape.matmul(x, down)?;
        let low = tape.matmul(low, up)?;
        let low = tape.scale(low, self.scaling())?;
        tape.add(base, low)
    }

    /// Effective dense weight `base + (alpha/rank)·down·up`.
    pub fn effective_weight(&self, params: &ParamSet) -> Result<Tensor> {
        let delta = params.get(self.down).matmul(params.get(self.up))?;
        let s = self.scaling();
        let data = params
            .get(self.base.weight)
            .data()
            .iter()
            .zip(delta.data())
            .map(|(w, d)| w + s * d)
            .collect();
        Tensor::new(&[self.base.d_in, self.base.d_out], data)
    }
}

/// Wraps `base` with a rank-`rank` adapter. The base weight and bias are
/// frozen; `down` starts uniform in `±1/sqrt(d_in)` and `up` at zero, so the
/// wrapped layer initially computes exactly what `base` does.
pub fn lora_wrap(
    params: &mut ParamSet,
    base: Linear,
    rank: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<LoraLinear> {
    if rank == 0 || rank > base.d_in.min(base.d_out) {
        return Err(Error::Config(format!(
            "LoRA rank {rank} must be in 1..={} for a {}x{} layer",
            base.d_in.min(base.d_out),
            base.d_in,
            base.d_out
        )));
    }
    if !alpha.is_finite() {
        return Err(Error::Config(format!("LoRA alpha must be finite, got {alpha}")));
    }
    let prefix = params.name(base.weight).trim_end_matches(".weight").to_string();
    params.set_trainable(base.weight, false);
    if let Some(b) = base.bias {
        params.set_trainable(b, false);
    }
    let bound = 1.0 / (base.d_in as f64).sqrt();
    let down = params.add(
        format!("{prefix}.lora_down"),
        init::uniform(rng, &[base.d_in, rank], bound),
    );
    let up = params.add(format!("{prefix}.lora_up"), Tensor::zeros(&[rank, base.d_out]));
    Ok(LoraLinear {
        base,
        down,
        up,
        rank,
        alpha,
    })
}

/// A projection that may or may not carry an adapter.
#[derive(Clone, Debug)]
pub enum Projection {
    Plain(Linear),
    Lora(LoraLinear),
}

impl Projection {
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        match self {
            Projection::Plain(l) => l.forward(tape, params, x),
            Projection::Lora(l) => l.forward(tape, params, x),
        }
    }

    pub fn base(&self) -> &Linear {
        match self {
            Projection::Plain(l) => l,
            Projection::Lora(l) => &l.base,
        }
    }

    /// Replaces a plain projection by its LoRA-wrapped version.
    pub fn apply_lora(
        &mut self,
        params: &mut ParamSet,
        rank: usize,
        alpha: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        if let Projection::Plain(l) = self {
            *self = Projection::Lora(lora_wrap(params, l.clone(), rank, alpha, rng)?);
        }
        Ok(())
    }
}
