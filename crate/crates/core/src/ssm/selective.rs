//! Selective (input-dependent) state space scan.
//!
//! Per timestep `t`, channel `d` and state `n`:
//!
//! ```text
//! Ā = exp(Δ[t,d]·A[d,n])            A = −exp(a_log)
//! h[t,d,n] = Ā·h[t−1,d,n] + B̄(Δ[t,d], A[d,n])·B[t,n]·x[t,d]
//! y[t,d] = Σₙ C[t,n]·h[t,d,n] + skip[d]·x[t,d]
//! ```
//!
//! The backward pass either keeps every hidden state (`StoreAll`) or only
//! the states at the boundaries of ⌈√L⌉-step chunks and replays each chunk
//! when its gradient is needed (`Recompute`).

use std::str::FromStr;

use rand::Rng;

use crate::autograd::{CustomOp, ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::memory::Buffer;
use crate::nn::{init, Linear};
use crate::autograd::softplus;
use crate::ssm::discretize::{zoh_pair, zoh_terms};
use crate::ssm::init::{init_a_log, init_delta_bias};
use crate::ssm::scan::{reverse_adjoint, scan_with};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScanMode {
    #[default]
    Sequential,
    Parallel,
}

impl FromStr for ScanMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(ScanMode::Sequential),
            "parallel" => Ok(ScanMode::Parallel),
            other => Err(Error::Config(format!("unknown scan mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BackwardMemory {
    #[default]
    StoreAll,
    Recompute,
}

impl FromStr for BackwardMemory {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "store_all" => Ok(BackwardMemory::StoreAll),
            "recompute" => Ok(BackwardMemory::Recompute),
            other => Err(Error::Config(format!("unknown backward memory mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanConfig {
    pub mode: ScanMode,
    pub memory: BackwardMemory,
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    len: usize,
    d: usize,
    n: usize,
}

impl Dims {
    fn lanes(&self) -> usize {
        self.d * self.n
    }
}

struct Inputs<'a> {
    x: &'a [f64],
    delta: &'a [f64],
    a: Vec<f64>,
    inv_a: Vec<f64>,
    b: &'a [f64],
    c: &'a [f64],
    skip: Option<&'a [f64]>,
    dims: Dims,
}

enum Saved {
    All(Buffer),
    Checkpoints { chunk: usize, starts: Vec<Buffer> },
}

impl<'a> Inputs<'a> {
    fn from_tensors(ts: &[&'a Tensor]) -> Result<Self> {
        let (len, d) = ts[0].dims2()?;
        let (d2, n) = ts[2].dims2()?;
        let skip = ts.get(5).copied();
        if ts[1].shape() != [len, d]
            || d2 != d
            || ts[3].shape() != [len, n]
            || ts[4].shape() != [len, n]
            || skip.is_some_and(|s| s.shape() != [d])
        {
            let shapes: Vec<usize> = ts.iter().flat_map(|t| t.shape().to_vec()).collect();
            return Err(Error::dim("selective_scan", &[len, d, n], &shapes));
        }
        if ts[1].data().iter().any(|v| *v <= 0.0) {
            return Err(Error::Parameter("selective scan step sizes must be > 0".into()));
        }
        let a: Vec<f64> = ts[2].data().iter().map(|v| -v.exp()).collect();
        Ok(Inputs {
            x: ts[0].data(),
            delta: ts[1].data(),
            inv_a: a.iter().map(|v| 1.0 / v).collect(),
            a,
            b: ts[3].data(),
            c: ts[4].data(),
            skip: skip.map(|s| s.data()),
            dims: Dims { len, d, n },
        })
    }

    fn chunk_len(&self, memory: BackwardMemory) -> usize {
        match memory {
            BackwardMemory::StoreAll => self.dims.len.max(1),
            BackwardMemory::Recompute => ((self.dims.len as f64).sqrt().ceil() as usize).max(1),
        }
    }

    /// `Ā` and `B̄·x` for timesteps `t0..t1`, time-major over `D·N` lanes.
    fn discretize(&self, t0: usize, t1: usize) -> (Buffer, Buffer) {
        let Dims { d, n, .. } = self.dims;
        let size = (t1 - t0) * d * n;
        let (mut a_bar, mut bx) = (Vec::with_capacity(size), Vec::with_capacity(size));
        for t in t0..t1 {
            for ch in 0..d {
                let dt = self.delta[t * d + ch];
                let xt = self.x[t * d + ch];
                for s in 0..n {
                    let (ab, coef) = zoh_pair(dt, self.a[ch * n + s], self.inv_a[ch * n + s]);
                    a_bar.push(ab);
                    bx.push(coef * self.b[t * n + s] * xt);
                }
            }
        }
        (Buffer::new(a_bar), Buffer::new(bx))
    }

    fn emit(&self, h: &[f64], t0: usize, t1: usize, y: &mut [f64]) {
        let Dims { d, n, .. } = self.dims;
        for t in t0..t1 {
            let hrow = &h[(t - t0) * d * n..];
            let crow = &self.c[t * n..(t + 1) * n];
            for ch in 0..d {
                let hs = &hrow[ch * n..(ch + 1) * n];
                let mut acc: f64 = hs.iter().zip(crow).map(|(h, c)| h * c).sum();
                if let Some(skip) = self.skip {
                    acc += skip[ch] * self.x[t * d + ch];
                }
                y[t * d + ch] = acc;
            }
        }
    }

    fn forward(&self, config: ScanConfig) -> (Vec<f64>, Saved) {
        let Dims { len, d, .. } = self.dims;
        let lanes = self.dims.lanes();
        let chunk = self.chunk_len(config.memory);
        let mut y = vec![0.0; len * d];
        let mut start = Buffer::zeros(lanes);
        let mut starts = Vec::new();
        let mut all = None;
        for t0 in (0..len).step_by(chunk) {
            let t1 = (t0 + chunk).min(len);
            let (a_bar, bx) = self.discretize(t0, t1);
            let mut h = Buffer::zeros((t1 - t0) * lanes);
            scan_with(config.mode, &a_bar, &bx, &start, &mut h);
            drop((a_bar, bx));
            self.emit(&h, t0, t1, &mut y);
            let last = Buffer::new(h[(t1 - t0 - 1) * lanes..].to_vec());
            match config.memory {
                BackwardMemory::StoreAll => all = Some(h),
                BackwardMemory::Recompute => starts.push(std::mem::replace(&mut start, last)),
            }
        }
        let saved = match config.memory {
            BackwardMemory::StoreAll => Saved::All(all.unwrap_or_else(|| Buffer::zeros(0))),
            BackwardMemory::Recompute => Saved::Checkpoints { chunk, starts },
        };
        (y, saved)
    }

    fn backward(&self, config: ScanConfig, saved: &Saved, gy: &[f64]) -> [Vec<f64>; 6] {
        let Dims { len, d, n } = self.dims;
        let lanes = self.dims.lanes();
        let mut gx = vec![0.0; len * d];
        let mut gdelta = vec![0.0; len * d];
        let mut ga = vec![0.0; d * n];
        let mut gb = vec![0.0; len * n];
        let mut gc = vec![0.0; len * n];
        let mut gskip = vec![0.0; d];
        let chunk = match saved {
            Saved::All(_) => len.max(1),
            Saved::Checkpoints { chunk, .. } => *chunk,
        };
        let zeros = Buffer::zeros(lanes);
        let mut carry = Buffer::zeros(lanes);
        let n_chunks = len.div_ceil(chunk);
        for k in (0..n_chunks).rev() {
            let t0 = k * chunk;
            let t1 = (t0 + chunk).min(len);
            let cl = t1 - t0;
            let (a_bar, bx) = self.discretize(t0, t1);
            let (h_start, replayed): (&[f64], Option<Buffer>) = match saved {
                Saved::All(_) => (&zeros, None),
                Saved::Checkpoints { starts, .. } => {
                    let mut h = Buffer::zeros(cl * lanes);
                    scan_with(config.mode, &a_bar, &bx, &starts[k], &mut h);
                    (&starts[k], Some(h))
                }
            };
            drop(bx);
            let h: &[f64] = match (&replayed, saved) {
                (Some(h), _) => h,
                (None, Saved::All(h)) => h,
                (None, Saved::Checkpoints { .. }) => unreachable!(),
            };
            let mut seed = Buffer::zeros(cl * lanes);
            for t in t0..t1 {
                for ch in 0..d {
                    let g = gy[t * d + ch];
                    let row = &mut seed[(t - t0) * lanes + ch * n..][..n];
                    for s in 0..n {
                        row[s] = g * self.c[t * n + s];
                    }
                }
            }
            let gh = reverse_adjoint(config.mode, &a_bar, &seed, lanes, cl, &carry);
            drop(seed);
            for t in t0..t1 {
                let i = t - t0;
                for ch in 0..d {
                    let dt = self.delta[t * d + ch];
                    let xt = self.x[t * d + ch];
                    let gyt = gy[t * d + ch];
                    let (mut acc_x, mut acc_dt) = (0.0, 0.0);
                    for s in 0..n {
                        let kk = i * lanes + ch * n + s;
                        let g = gh[kk];
                        let hp = if i == 0 { h_start[ch * n + s] } else { h[kk - lanes] };
                        let an = self.a[ch * n + s];
                        let ab = a_bar[kk];
                        let (coef, cd, ca) = zoh_terms(dt, an, self.inv_a[ch * n + s], ab);
                        let bn = self.b[t * n + s];
                        let g_abar = g * hp;
                        let g_coef = g * bn * xt;
                        acc_x += g * coef * bn;
                        gb[t * n + s] += g * coef * xt;
                        acc_dt += g_abar * ab * an + g_coef * cd;
                        ga[ch * n + s] += g_abar * ab * dt + g_coef * ca;
                        gc[t * n + s] += gyt * h[kk];
                    }
                    gx[t * d + ch] += acc_x;
                    gdelta[t * d + ch] += acc_dt;
                }
            }
            for l in 0..lanes {
                carry[l] = a_bar[l] * gh[l];
            }
        }
        let mut ga_log = ga;
        for (g, a) in ga_log.iter_mut().zip(&self.a) {
            *g *= a;
        }
        if let Some(skip) = self.skip {
            for t in 0..len {
                for ch in 0..d {
                    gskip[ch] += gy[t * d + ch] * self.x[t * d + ch];
                    gx[t * d + ch] += gy[t * d + ch] * skip[ch];
                }
            }
        }
        [gx, gdelta, ga_log, gb, gc, gskip]
    }
}

struct SelectiveScanOp {
    config: ScanConfig,
    saved: Saved,
}

impl CustomOp for SelectiveScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let inp = Inputs::from_tensors(inputs)?;
        let grads = inp.backward(self.config, &self.saved, grad.data());
        let mut out = Vec::with_capacity(inputs.len());
        for (g, t) in grads.into_iter().zip(inputs) {
            out.push(Some(Tensor::new(t.shape(), g)?));
        }
        Ok(out)
    }
}

/// Records a selective scan on the tape.
///
/// Shapes: `x`, `delta`: `L×D`; `a_log`: `D×N`; `b`, `c`: `L×N`; `skip`: `D`.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan_op(
    tape: &mut Tape,
    x: Var,
    delta: Var,
    a_log: Var,
    b: Var,
    c: Var,
    skip: Option<Var>,
    config: ScanConfig,
) -> Result<Var> {
    let mut vars = vec![x, delta, a_log, b, c];
    vars.extend(skip);
    let values: Vec<&Tensor> = vars.iter().map(|v| tape.value(*v)).collect();
    let inp = Inputs::from_tensors(&values)?;
    let (y, saved) = inp.forward(config);
    let out = Tensor::new(&[inp.dims.len, inp.dims.d], y)?;
    tape.custom(&vars, out, Box::new(SelectiveScanOp { config, saved }))
}

/// Forward-only selective scan on plain tensors.
pub fn selective_scan(
    x: &Tensor,
    delta: &Tensor,
    a_log: &Tensor,
    b: &Tensor,
    c: &Tensor,
    skip: Option<&Tensor>,
    mode: ScanMode,
) -> Result<Tensor> {
    let mut values = vec![x, delta, a_log, b, c];
    values.extend(skip);
    let inp = Inputs::from_tensors(&values)?;
    let config = ScanConfig {
        mode,
        memory: BackwardMemory::Recompute,
    };
    let (y, _) = inp.forward(config);
    Tensor::new(&[inp.dims.len, inp.dims.d], y)
}

/// A selective SSM layer: `Δ = softplus(x·W_Δ + bias)`, `B = x·W_B`,
/// `C = x·W_C`, diagonal `A = −exp(a_log)` and a trainable skip `D`.
#[derive(Clone, Debug)]
pub struct SelectiveSsm {
    pub d_channels: usize,
    pub n_state: usize,
    pub delta_proj: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub a_log: ParamId,
    pub skip: Option<ParamId>,
}

impl SelectiveSsm {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_channels: usize,
        n_state: usize,
        skip: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_channels == 0 || n_state == 0 {
            return Err(Error::Config(format!(
                "selective SSM needs D >= 1 and N >= 1, got D={d_channels} N={n_state}"
            )));
        }
        let std = init::INIT_STD;
        let delta_proj = Linear::new(params, &format!("{name}.delta_proj"), d_channels, d_channels, true, std, rng);
        params.set(delta_proj.bias.expect("bias"), init_delta_bias(d_channels, rng))?;
        let b_proj = Linear::new(params, &format!("{name}.b_proj"), d_channels, n_state, false, std, rng);
        let c_proj = Linear::new(params, &format!("{name}.c_proj"), d_channels, n_state, false, std, rng);
        let a_log = params.add(format!("{name}.a_log"), init_a_log(n_state, d_channels)?);
        let skip = skip.then(|| params.add(format!("{name}.skip"), Tensor::ones(&[d_channels])));
        Ok(SelectiveSsm {
            d_channels,
            n_state,
            delta_proj,
            b_proj,
            c_proj,
            a_log,
            skip,
        })
    }

    /// Input-dependent `(Δ, B, C)` for every timestep of `x` (`L×D`).
    pub fn parameterize(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<(Var, Var, Var)> {
        let pre = self.delta_proj.forward(tape, params, x)?;
        let delta = tape.softplus(pre)?;
        let b = self.b_proj.forward(tape, params, x)?;
        let c = self.c_proj.forward(tape, params, x)?;
        Ok((delta, b, c))
    }

    /// `(Δ_t, B_t, C_t)` for a single input vector `x_t` (length `D`).
    pub fn parameterize_step(&self, params: &ParamSet, x_t: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let x = Tensor::matrix(1, x_t.len(), x_t.to_vec())?;
        let lin = |l: &Linear| -> Result<Vec<f64>> {
            let mut y = x.matmul(params.get(l.weight))?.to_vec();
            if let Some(b) = l.bias {
                y.iter_mut().zip(params.get(b).data()).for_each(|(v, b)| *v += b);
            }
            Ok(y)
        };
        let delta = lin(&self.delta_proj)?.into_iter().map(softplus).collect();
        Ok((delta, lin(&self.b_proj)?, lin(&self.c_proj)?))
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var, config: ScanConfig) -> Result<Var> {
        let (delta, b, c) = self.parameterize(tape, params, x)?;
        let a_log = tape.param(params, self.a_log)?;
        let skip = self.skip.map(|s| tape.param(params, s)).transpose()?;
        selective_scan_op(tape, x, delta, a_log, b, c, skip, config)
    }

    pub fn num_scalars(d: usize, n: usize, skip: bool) -> usize {
        d * d + d + 2 * d * n + d * n + if skip { d } else { 0 }
    }
}
