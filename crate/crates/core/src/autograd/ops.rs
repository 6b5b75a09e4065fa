//! Forward rules for the built-in ops.

use crate::autograd::tape::{sigmoid, Op};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape of `b` must be a suffix of the shape of `a` (trailing broadcast).
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Var, Var, Tensor)> {
        let (mut a, mut b) = (a, b);
        if !broadcast_ok(self.value(a).shape(), self.value(b).shape()) {
            if broadcast_ok(self.value(b).shape(), self.value(a).shape()) {
                std::mem::swap(&mut a, &mut b);
            } else {
                return Err(Error::dim(name, self.value(a).shape(), self.value(b).shape()));
            }
        }
        let av = self.value(a);
        let bv = self.value(b).data();
        let n = bv.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| f(*x, bv[i % n]))
            .collect();
        Ok((a, b, Tensor::from_raw(av.shape().to_vec(), data)))
    }

    /// Elementwise sum; the smaller operand broadcasts over leading dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, out) = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Elementwise product with trailing broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, out) = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a), false)?;
        self.push(out, Op::Softmax(a))
    }

    /// Softmax over the last dimension of a square matrix where row `i`
    /// only sees columns `0..=i`; masked entries are exactly zero.
    pub fn softmax_causal(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a), true)?;
        self.push(out, Op::Softmax(a))
    }

    /// Root-mean-square normalization over the last dimension, scaled by `weight`.
    pub fn rmsnorm(&mut self, x: Var, weight: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!("rmsnorm eps must be > 0, got {eps}")));
        }
        let xv = self.value(x);
        let wv = self.value(weight);
        if wv.rank() != 1 || xv.last_dim() != wv.len() {
            return Err(Error::dim("rmsnorm", xv.shape(), wv.shape()));
        }
        let d = wv.len();
        let w = wv.data();
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            out.extend(row.iter().zip(w).map(|(v, wj)| v * inv * wj));
        }
        let out = Tensor::from_raw(xv.shape().to_vec(), out);
        self.push(out, Op::RmsNorm(x, weight, eps))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        self.push(out, Op::Mean(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push(out, Op::Reshape(a))
    }

    /// Gathers rows of `table` (`V×d`) for each id; output is `len(ids)×d`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims2()?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Parameter(format!("token id {id} outside table of {v} rows")));
            }
            out.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_raw(vec![ids.len(), d], out);
        self.push(out, Op::Embedding(table, ids.to_vec()))
    }

    /// Row `index` of a matrix as a vector.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        if index >= r {
            return Err(Error::Parameter(format!("row {index} out of {r}")));
        }
        let out = Tensor::from_raw(vec![c], t.row(index).to_vec());
        self.push(out, Op::Row(a, index))
    }
}

impl Tape {
    /// Columns `start..start + width` of a matrix.
    pub fn columns(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        if start + width > c {
            return Err(Error::dim("columns", t.shape(), &[start, width]));
        }
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&t.row(i)[start..start + width]);
        }
        let out = Tensor::from_raw(vec![r, width], out);
        self.push(out, Op::Columns(a, start))
    }
}

fn softmax_rows(t: &Tensor, causal: bool) -> Result<Tensor> {
    let c = t.last_dim();
    if causal {
        let (r, cols) = t.dims2()?;
        if r != cols {
            return Err(Error::dim("softmax_causal", t.shape(), &[cols, cols]));
        }
    }
    let mut out = vec![0.0; t.len()];
    for (i, (row, o)) in t.data().chunks(c).zip(out.chunks_mut(c)).enumerate() {
        let visible = if causal { i + 1 } else { c };
        let max = row[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..visible {
            o[j] = (row[j] - max).exp();
            total += o[j];
        }
        for v in &mut o[..visible] {
            *v /= total;
        }
    }
    Ok(Tensor::from_raw(t.shape().to_vec(), out))
}
