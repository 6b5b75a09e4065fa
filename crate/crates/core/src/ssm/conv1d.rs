//! Depthwise causal 1-D convolution over time-major `L×C` input.

use crate::autograd::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y[t,c] = bias[c] + Σ_{j<K} w[c,j]·x[t−(K−1)+j, c]`, zero-padded on the left.
struct CausalConv1d;

impl CustomOp for CausalConv1d {
    fn name(&self) -> &'static str {
        "causal_conv1d"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (len, ch) = x.dims2()?;
        let k = w.last_dim();
        let g = grad.data();
        let mut gx = vec![0.0; len * ch];
        let mut gw = vec![0.0; ch * k];
        let mut gb = vec![0.0; ch];
        for t in 0..len {
            for c in 0..ch {
                let gy = g[t * ch + c];
                gb[c] += gy;
                for j in 0..k {
                    if let Some(s) = (t + j + 1).checked_sub(k) {
                        gx[s * ch + c] += gy * w.data()[c * k + j];
                        gw[c * k + j] += gy * x.data()[s * ch + c];
                    }
                }
            }
        }
        let mut out = vec![Some(Tensor::new(x.shape(), gx)?), Some(Tensor::new(w.shape(), gw)?)];
        if inputs.len() == 3 {
            out.push(Some(Tensor::new(&[ch], gb)?));
        }
        Ok(out)
    }
}

/// Depthwise causal convolution: `x` is `L×C`, `weight` is `C×K`, `bias` is `C`.
pub fn causal_conv1d(tape: &mut Tape, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let (len, ch) = tape.value(x).dims2()?;
    let (wc, k) = tape.value(weight).dims2()?;
    if wc != ch || k == 0 {
        return Err(Error::dim("causal_conv1d", tape.value(x).shape(), tape.value(weight).shape()));
    }
    if let Some(b) = bias {
        if tape.value(b).shape() != [ch] {
            return Err(Error::dim("causal_conv1d", &[ch], tape.value(b).shape()));
        }
    }
    let xv = tape.value(x).data();
    let wv = tape.value(weight).data();
    let mut y = match bias {
        Some(b) => tape.value(b).data().repeat(len),
        None => vec![0.0; len * ch],
    };
    for t in 0..len {
        for c in 0..ch {
            let mut acc = 0.0;
            for j in 0..k {
                if let Some(s) = (t + j + 1).checked_sub(k) {
                    acc += wv[c * k + j] * xv[s * ch + c];
                }
            }
            y[t * ch + c] += acc;
        }
    }
    let out = Tensor::new(&[len, ch], y)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    tape.custom(&inputs, out, Box::new(CausalConv1d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gradcheck, random};

    #[test]
    fn last_tap_is_current_step() {
        let mut tape = Tape::no_grad();
        let x = tape.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.constant(Tensor::matrix(1, 2, vec![10.0, 1.0]).unwrap());
        let y = causal_conv1d(&mut tape, x, w, None).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 12.0, 23.0]);
    }

    #[test]
    fn no_future_leakage() {
        let x = random(&[8, 3], -1.0, 1.0, 1);
        let w = random(&[3, 4], -1.0, 1.0, 2);
        let run = |x: &Tensor| {
            let mut tape = Tape::no_grad();
            let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
            let y = causal_conv1d(&mut tape, xv, wv, None).unwrap();
            tape.value(y).clone()
        };
        let base = run(&x);
        for t in 0..8 {
            let mut d = x.to_vec();
            d[t * 3 + 1] += 1.0;
            let y = run(&Tensor::new(&[8, 3], d).unwrap());
            assert_eq!(&y.data()[..t * 3], &base.data()[..t * 3]);
        }
    }

    #[test]
    fn gradcheck_conv() {
        let ins = [random(&[7, 3], -2.0, 2.0, 3), random(&[3, 4], -2.0, 2.0, 4), random(&[3], -2.0, 2.0, 5)];
        let w = random(&[7, 3], -1.0, 1.0, 6);
        let err = gradcheck(&ins, |t, v| {
            let y = causal_conv1d(t, v[0], v[1], Some(v[2]))?;
            let w = t.constant(w.clone());
            let y = t.mul(y, w)?;
            t.sum(y)
        });
        assert!(err < 1e-7, "{err}");
    }
}
