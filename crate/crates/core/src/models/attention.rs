//! Plain `O(L²)` multi-head scaled dot-product attention and the pre-norm
//! transformer layer built on it.

use rand::Rng;

use crate::autograd::{CustomOp, ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::memory::Buffer;
use crate::nn::{init, Linear, Projection};
use crate::ssm::RMS_EPS;
use crate::tensor::{gemm, Tensor};

fn head_slice(x: &[f64], len: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len * dh);
    for t in 0..len {
        out.extend_from_slice(&x[t * d + h * dh..t * d + (h + 1) * dh]);
    }
    out
}

fn scatter_head(dst: &mut [f64], src: &[f64], len: usize, d: usize, h: usize, dh: usize) {
    for t in 0..len {
        dst[t * d + h * dh..t * d + (h + 1) * dh].copy_from_slice(&src[t * dh..(t + 1) * dh]);
    }
}

/// Row softmax of `s` (`len×len`) in place; with `causal`, entries above the
/// diagonal become exactly zero.
fn softmax_in_place(s: &mut [f64], len: usize, causal: bool) {
    for (i, row) in s.chunks_mut(len).enumerate() {
        let visible = if causal { i + 1 } else { len };
        let max = row[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in &mut row[..visible] {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in &mut row[..visible] {
            *v /= total;
        }
        row[visible..].iter_mut().for_each(|v| *v = 0.0);
    }
}

struct AttentionOp {
    heads: usize,
    probs: Vec<Buffer>,
}

impl CustomOp for AttentionOp {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (len, d) = inputs[0].dims2()?;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (mut gq, mut gk, mut gv) = (vec![0.0; len * d], vec![0.0; len * d], vec![0.0; len * d]);
        for (h, p) in self.probs.iter().enumerate() {
            let q = head_slice(inputs[0].data(), len, d, h, dh);
            let k = head_slice(inputs[1].data(), len, d, h, dh);
            let v = head_slice(inputs[2].data(), len, d, h, dh);
            let go = head_slice(grad.data(), len, d, h, dh);
            let mut gvh = vec![0.0; len * dh];
            gemm(len, len, dh, p, true, &go, false, &mut gvh, 0.0);
            let mut ds = Buffer::zeros(len * len);
            gemm(len, dh, len, &go, false, &v, true, &mut ds, 0.0);
            for (drow, prow) in ds.chunks_mut(len).zip(p.chunks(len)) {
                let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                for (dv, pv) in drow.iter_mut().zip(prow) {
                    *dv = pv * (*dv - dot) * scale;
                }
            }
            let mut gqh = vec![0.0; len * dh];
            gemm(len, len, dh, &ds, false, &k, false, &mut gqh, 0.0);
            let mut gkh = vec![0.0; len * dh];
            gemm(len, len, dh, &ds, true, &q, false, &mut gkh, 0.0);
            scatter_head(&mut gq, &gqh, len, d, h, dh);
            scatter_head(&mut gk, &gkh, len, d, h, dh);
            scatter_head(&mut gv, &gvh, len, d, h, dh);
        }
        Ok(vec![
            Some(Tensor::new(&[len, d], gq)?),
            Some(Tensor::new(&[len, d], gk)?),
            Some(Tensor::new(&[len, d], gv)?),
        ])
    }
}

/// `softmax(Q·Kᵀ/√d_h)·V` per head over `L×d` inputs, with an optional
/// lower-triangular mask.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
    let (len, d) = tape.value(q).dims2()?;
    for x in [k, v] {
        if tape.value(x).shape() != [len, d] {
            return Err(Error::dim("attention", &[len, d], tape.value(x).shape()));
        }
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; len * d];
    let mut probs = Vec::with_capacity(heads);
    let keep = tape.grad_enabled();
    for h in 0..heads {
        let qh = head_slice(tape.value(q).data(), len, d, h, dh);
        let kh = head_slice(tape.value(k).data(), len, d, h, dh);
        let vh = head_slice(tape.value(v).data(), len, d, h, dh);
        let mut s = Buffer::zeros(len * len);
        gemm(len, dh, len, &qh, false, &kh, true, &mut s, 0.0);
        s.iter_mut().for_each(|x| *x *= scale);
        softmax_in_place(&mut s, len, causal);
        let mut oh = vec![0.0; len * dh];
        gemm(len, len, dh, &s, false, &vh, false, &mut oh, 0.0);
        scatter_head(&mut out, &oh, len, d, h, dh);
        if keep {
            probs.push(s);
        }
    }
    let out = Tensor::new(&[len, d], out)?;
    tape.custom(&[q, k, v], out, Box::new(AttentionOp { heads, probs }))
}

/// Pre-norm transformer layer: self-attention then a `d → 4d → d` SiLU MLP,
/// each wrapped in a residual connection.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub d_model: usize,
    pub heads: usize,
    pub causal: bool,
    pub norm1: ParamId,
    pub wq: Projection,
    pub wk: Projection,
    pub wv: Projection,
    pub wo: Projection,
    pub norm2: ParamId,
    pub mlp_up: Projection,
    pub mlp_down: Projection,
}

impl AttentionLayer {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_model: usize,
        heads: usize,
        causal: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!("d_model {d_model} is not divisible by {heads} heads")));
        }
        let std = init::INIT_STD;
        let mut lin = |params: &mut ParamSet, n: &str, i: usize, o: usize| {
            Projection::Plain(Linear::new(params, &format!("{name}.{n}"), i, o, false, std, rng))
        };
        let norm1 = params.add(format!("{name}.norm1"), Tensor::ones(&[d_model]));
        let wq = lin(params, "wq", d_model, d_model);
        let wk = lin(params, "wk", d_model, d_model);
        let wv = lin(params, "wv", d_model, d_model);
        let wo = lin(params, "wo", d_model, d_model);
        let norm2 = params.add(format!("{name}.norm2"), Tensor::ones(&[d_model]));
        let mlp_up = lin(params, "mlp_up", d_model, 4 * d_model);
        let mlp_down = lin(params, "mlp_down", 4 * d_model, d_model);
        Ok(AttentionLayer {
            d_model,
            heads,
            causal,
            norm1,
            wq,
            wk,
            wv,
            wo,
            norm2,
            mlp_up,
            mlp_down,
        })
    }

    pub fn num_scalars(d_model: usize) -> usize {
        12 * d_model * d_model + 2 * d_model
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, u: Var) -> Result<Var> {
        let w1 = tape.param(params, self.norm1)?;
        let x = tape.rmsnorm(u, w1, RMS_EPS)?;
        let q = self.wq.forward(tape, params, x)?;
        let k = self.wk.forward(tape, params, x)?;
        let v = self.wv.forward(tape, params, x)?;
        let a = attention(tape, q, k, v, self.heads, self.causal)?;
        let a = self.wo.forward(tape, params, a)?;
        let h = tape.add(u, a)?;
        let w2 = tape.param(params, self.norm2)?;
        let x = tape.rmsnorm(h, w2, RMS_EPS)?;
        let m = self.mlp_up.forward(tape, params, x)?;
        let m = tape.silu(m)?;
        let m = self.mlp_down.forward(tape, params, m)?;
        tape.add(h, m)
    }

    pub fn apply_lora(&mut self, params: &mut ParamSet, rank: usize, alpha: f64, rng: &mut impl Rng) -> Result<()> {
        for p in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo, &mut self.mlp_up, &mut self.mlp_down] {
            p.apply_lora(params, rank, alpha, rng)?;
        }
        Ok(())
    }
}
