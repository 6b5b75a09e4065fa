//! Linear time-invariant SSMs: recurrent mode and the equivalent causal
//! convolution with kernel `K̄ = (CB̄, CĀB̄, …, CĀ^{L−1}B̄)`.
//!
//! Every tensor here is channel-major: inputs and outputs are `D×L`,
//! per-state parameters are `D×N`.

use crate::autograd::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::ssm::discretize::{zoh_coefficient, zoh_coefficient_grads};
use crate::ssm::scan::scan_with;
use crate::ssm::selective::{ScanMode, SelectiveSsm};
use crate::tensor::Tensor;

/// A diagonal LTI SSM with one static step size per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSsm {
    /// `D×N`, `A = −exp(a_log)`.
    pub a_log: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    /// `D`, strictly positive.
    pub delta: Tensor,
    pub skip: Option<Tensor>,
}

/// Parameters of either flavor. Only the LTI flavor has a convolution mode.
#[derive(Clone, Debug)]
pub enum SsmParams {
    Lti(LtiSsm),
    Selective(SelectiveSsm),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    /// `D×L`.
    pub taps: Tensor,
    pub length: usize,
}

impl LtiSsm {
    pub fn new(a_log: Tensor, b: Tensor, c: Tensor, delta: Tensor, skip: Option<Tensor>) -> Result<Self> {
        let (d, n) = a_log.dims2()?;
        if d == 0 || n == 0 {
            return Err(Error::Config("LTI SSM needs D >= 1 and N >= 1".into()));
        }
        for t in [&b, &c] {
            if t.shape() != a_log.shape() {
                return Err(Error::dim("lti_ssm", a_log.shape(), t.shape()));
            }
        }
        if delta.shape() != [d] {
            return Err(Error::dim("lti_ssm", &[d], delta.shape()));
        }
        if delta.data().iter().any(|v| *v <= 0.0) {
            return Err(Error::Parameter("LTI step sizes must be > 0".into()));
        }
        if let Some(s) = &skip {
            if s.shape() != [d] {
                return Err(Error::dim("lti_ssm", &[d], s.shape()));
            }
        }
        Ok(LtiSsm { a_log, b, c, delta, skip })
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn n_state(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Per-channel, per-state `(Ā, B̄)`, both `D×N` flattened.
    pub fn discretized(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_state();
        let mut a_bar = Vec::with_capacity(self.a_log.len());
        let mut b_bar = Vec::with_capacity(self.a_log.len());
        for (i, al) in self.a_log.data().iter().enumerate() {
            let a = -al.exp();
            let dt = self.delta.data()[i / n];
            a_bar.push((dt * a).exp());
            b_bar.push(zoh_coefficient(dt, a) * self.b.data()[i]);
        }
        (a_bar, b_bar)
    }

    /// Convolution-mode output including the skip term.
    pub fn forward_conv(&self, x: &Tensor) -> Result<Tensor> {
        let kernel = build_conv_kernel(&SsmParams::Lti(self.clone()), x.last_dim())?;
        let y = conv_apply_causal(x, &kernel)?;
        self.add_skip(x, y.to_vec())
    }

    fn add_skip(&self, x: &Tensor, mut y: Vec<f64>) -> Result<Tensor> {
        if let Some(s) = &self.skip {
            let len = x.last_dim();
            for (i, v) in y.iter_mut().enumerate() {
                *v += s.data()[i / len] * x.data()[i];
            }
        }
        Tensor::new(x.shape(), y)
    }
}

/// Kernel taps `K̄[d][k] = Σₙ C[d,n]·Ā[d,n]^k·B̄[d,n]` for `k < length`.
pub fn build_conv_kernel(params: &SsmParams, length: usize) -> Result<ConvKernel> {
    let p = match params {
        SsmParams::Lti(p) => p,
        SsmParams::Selective(_) => {
            return Err(Error::Mode(
                "selective SSMs are input-dependent and have no convolution kernel".into(),
            ))
        }
    };
    let (d, n) = (p.channels(), p.n_state());
    let (a_bar, b_bar) = p.discretized();
    let mut taps = vec![0.0; d * length];
    for ch in 0..d {
        for s in 0..n {
            let i = ch * n + s;
            let mut pow = p.c.data()[i] * b_bar[i];
            for k in 0..length {
                taps[ch * length + k] += pow;
                pow *= a_bar[i];
            }
        }
    }
    Ok(ConvKernel {
        taps: Tensor::new(&[d, length], taps)?,
        length,
    })
}

fn conv_direct(x: &[f64], taps: &[f64], d: usize, len: usize) -> Vec<f64> {
    let mut y = vec![0.0; d * len];
    for ch in 0..d {
        let (xs, ks) = (&x[ch * len..(ch + 1) * len], &taps[ch * len..(ch + 1) * len]);
        for t in 0..len {
            y[ch * len + t] = (0..=t).map(|k| ks[k] * xs[t - k]).sum();
        }
    }
    y
}

/// `y[d][t] = Σ_{k≤t} taps[d][k]·x[d][t−k]`, evaluated directly in `O(L²)`.
pub fn conv_apply_causal(x: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    let (d, len) = x.dims2()?;
    if kernel.taps.shape() != [d, len] {
        return Err(Error::dim("conv_apply_causal", x.shape(), kernel.taps.shape()));
    }
    Tensor::new(&[d, len], conv_direct(x.data(), kernel.taps.data(), d, len))
}

/// Recurrent-mode output `y = C·h (+ skip·x)` with `h0 = 0`.
pub fn lti_recurrent(params: &LtiSsm, x: &Tensor, mode: ScanMode) -> Result<Tensor> {
    let (d, len) = x.dims2()?;
    if d != params.channels() {
        return Err(Error::dim("lti_recurrent", x.shape(), params.a_log.shape()));
    }
    let n = params.n_state();
    let lanes = d * n;
    let (a_bar, b_bar) = params.discretized();
    let mut a = vec![0.0; len * lanes];
    let mut bx = vec![0.0; len * lanes];
    for t in 0..len {
        for i in 0..lanes {
            a[t * lanes + i] = a_bar[i];
            bx[t * lanes + i] = b_bar[i] * x.data()[(i / n) * len + t];
        }
    }
    let mut h = vec![0.0; len * lanes];
    scan_with(mode, &a, &bx, &vec![0.0; lanes], &mut h);
    let mut y = vec![0.0; d * len];
    for t in 0..len {
        for i in 0..lanes {
            y[(i / n) * len + t] += params.c.data()[i] * h[t * lanes + i];
        }
    }
    params.add_skip(x, y)
}

struct ConvKernelOp {
    length: usize,
}

impl CustomOp for ConvKernelOp {
    fn name(&self) -> &'static str {
        "conv_kernel"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (delta, a_log, b, c) = (inputs[0].data(), inputs[1].data(), inputs[2].data(), inputs[3].data());
        let (d, n) = inputs[1].dims2()?;
        let len = self.length;
        let g = grad.data();
        let mut gdelta = vec![0.0; d];
        let mut galog = vec![0.0; d * n];
        let mut gb = vec![0.0; d * n];
        let mut gc = vec![0.0; d * n];
        for ch in 0..d {
            let dt = delta[ch];
            for s in 0..n {
                let i = ch * n + s;
                let a = -a_log[i].exp();
                let ab = (dt * a).exp();
                let coef = zoh_coefficient(dt, a);
                let (cd, ca) = zoh_coefficient_grads(dt, a);
                // Σₖ g_k Ā^k and Σₖ g_k k Ā^{k−1}
                let (mut s_pow, mut s_dpow) = (0.0, 0.0);
                let (mut pow, mut prev) = (1.0, 0.0);
                for k in 0..len {
                    let gk = g[ch * len + k];
                    s_pow += gk * pow;
                    s_dpow += gk * k as f64 * prev;
                    prev = pow;
                    pow *= ab;
                }
                gc[i] = s_pow * coef * b[i];
                gb[i] = s_pow * coef * c[i];
                let g_ab = s_dpow * c[i] * coef * b[i];
                let g_coef = s_pow * c[i] * b[i];
                gdelta[ch] += g_ab * ab * a + g_coef * cd;
                let ga = g_ab * ab * dt + g_coef * ca;
                galog[i] = ga * a;
            }
        }
        Ok(vec![
            Some(Tensor::new(&[d], gdelta)?),
            Some(Tensor::new(&[d, n], galog)?),
            Some(Tensor::new(&[d, n], gb)?),
            Some(Tensor::new(&[d, n], gc)?),
        ])
    }
}

/// Differentiable kernel construction from `delta` (`D`) and `a_log`, `b`,
/// `c` (`D×N`). Returns `D×length` taps.
pub fn conv_kernel_op(tape: &mut Tape, delta: Var, a_log: Var, b: Var, c: Var, length: usize) -> Result<Var> {
    let lti = LtiSsm::new(
        tape.value(a_log).clone(),
        tape.value(b).clone(),
        tape.value(c).clone(),
        tape.value(delta).clone(),
        None,
    )?;
    let kernel = build_conv_kernel(&SsmParams::Lti(lti), length)?;
    tape.custom(&[delta, a_log, b, c], kernel.taps, Box::new(ConvKernelOp { length }))
}

struct ConvApplyOp;

impl CustomOp for ConvApplyOp {
    fn name(&self) -> &'static str {
        "conv_apply"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (x, taps) = (inputs[0].data(), inputs[1].data());
        let (d, len) = inputs[0].dims2()?;
        let g = grad.data();
        let mut gx = vec![0.0; d * len];
        let mut gk = vec![0.0; d * len];
        for ch in 0..d {
            let o = ch * len;
            for t in 0..len {
                let gt = g[o + t];
                for k in 0..=t {
                    gx[o + t - k] += gt * taps[o + k];
                    gk[o + k] += gt * x[o + t - k];
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(&[d, len], gx)?),
            Some(Tensor::new(&[d, len], gk)?),
        ])
    }
}

/// Differentiable causal convolution of `x` (`D×L`) with `taps` (`D×L`).
pub fn conv_apply_op(tape: &mut Tape, x: Var, taps: Var) -> Result<Var> {
    let (xs, ks) = (tape.value(x), tape.value(taps));
    let (d, len) = xs.dims2()?;
    if ks.shape() != [d, len] {
        return Err(Error::dim("conv_apply", xs.shape(), ks.shape()));
    }
    let y = Tensor::new(&[d, len], conv_direct(xs.data(), ks.data(), d, len))?;
    tape.custom(&[x, taps], y, Box::new(ConvApplyOp))
}
