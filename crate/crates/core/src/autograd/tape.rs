use crate::autograd::{ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::memory::Buffer;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op implemented outside the tape's built-in set.
///
/// The implementor owns whatever context the forward pass saved.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients for each input given the output gradient. `needs[i]` is false
    /// for inputs that do not require a gradient; `None` is allowed there.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Softplus(Var),
    Silu(Var),
    Sigmoid(Var),
    Softmax(Var),
    RmsNorm(Var, Var, f64),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Reshape(Var),
    Embedding(Var, Vec<usize>),
    Row(Var, usize),
    Columns(Var, usize),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Mul(a, b) | RmsNorm(a, b, _) => vec![*a, *b],
            Scale(a, _) | Exp(a) | Softplus(a) | Silu(a) | Sigmoid(a) | Softmax(a)
            | Sum(a) | Mean(a) | Transpose(a) | Reshape(a) | Row(a, _) | Columns(a, _) => vec![*a],
            Embedding(t, _) => vec![*t],
            Custom(v, _) => v.clone(),
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            MatMul(..) => "matmul",
            Add(..) => "add",
            Mul(..) => "mul",
            Scale(..) => "scale",
            Exp(_) => "exp",
            Softplus(_) => "softplus",
            Silu(_) => "silu",
            Sigmoid(_) => "sigmoid",
            Softmax(..) => "softmax",
            RmsNorm(..) => "rmsnorm",
            Sum(_) => "sum",
            Mean(_) => "mean",
            Transpose(_) => "transpose",
            Reshape(_) => "reshape",
            Embedding(..) => "embedding",
            Row(..) => "row",
            Columns(..) => "columns",
            Custom(_, op) => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of a forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    bound_set: Option<u64>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            bound_set: None,
            param_vars: Vec::new(),
        }
    }

    /// A tape that never records backward context.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = self.grad_enabled;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter as a leaf; repeated calls return the same node.
    /// Frozen parameters become constants.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Result<Var> {
        match self.bound_set {
            None => self.bound_set = Some(set.set_id()),
            Some(s) if s != set.set_id() => {
                return Err(Error::Contract(
                    "a tape can only bind parameters from one set".into(),
                ))
            }
            _ => {}
        }
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return Ok(*v);
        }
        let value = set.get(id).clone();
        let var = if set.is_trainable(id) {
            self.leaf(value)
        } else {
            self.constant(value)
        };
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(var);
        Ok(var)
    }

    /// Makes `var` stand in for parameter `id` on this tape, so later
    /// [`Tape::param`] calls return it. Used to differentiate a whole model
    /// with respect to externally supplied parameter values.
    pub fn bind(&mut self, set: &ParamSet, id: ParamId, var: Var) -> Result<()> {
        match self.bound_set {
            None => self.bound_set = Some(set.set_id()),
            Some(s) if s != set.set_id() => {
                return Err(Error::Contract(
                    "a tape can only bind parameters from one set".into(),
                ))
            }
            _ => {}
        }
        if self.value(var).shape() != set.get(id).shape() {
            return Err(Error::dim("bind", set.get(id).shape(), self.value(var).shape()));
        }
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(var);
        Ok(())
    }

    pub(crate) fn bound_set(&self) -> Option<u64> {
        self.bound_set
    }

    /// Parameters bound on this tape with their leaf nodes.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let inputs = op.inputs();
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::Numeric(format!(
                "op {} produced a non-finite value",
                op.name()
            )));
        }
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records the result of a custom op.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Reverse pass from a scalar loss. Returns gradients for every
    /// differentiable leaf; leaves the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        if !loss_value.all_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let mut slots: Vec<Option<Buffer>> = (0..=loss.0).map(|_| None).collect();
        let mut out: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Buffer::new(vec![1.0]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = slots[i].take() else {
                if matches!(node.op, Op::Leaf) {
                    out[i] = Some(Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            let grad = Tensor::from_raw(node.value.shape().to_vec(), g.into_vec());
            if matches!(node.op, Op::Leaf) {
                out[i] = Some(grad);
            } else {
                self.backprop(i, &grad, &mut slots)?;
            }
        }
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                out[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: out })
    }

    fn slot<'a>(&self, slots: &'a mut [Option<Buffer>], v: Var) -> Option<&'a mut Buffer> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(slots[v.0].get_or_insert_with(|| Buffer::zeros(len)))
    }

    fn take_slot(&self, slots: &mut [Option<Buffer>], v: Var) -> Option<Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(slots[v.0].take().map_or_else(|| vec![0.0; len], Buffer::into_vec))
    }

    fn backprop(&self, i: usize, grad: &Tensor, slots: &mut [Option<Buffer>]) -> Result<()> {
        let node = &self.nodes[i];
        let g = grad.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2()?;
                let n = bv.last_dim();
                if let Some(ga) = self.slot(slots, *a) {
                    crate::tensor::gemm(m, n, k, g, false, bv.data(), true, ga, 1.0);
                }
                if let Some(gb) = self.slot(slots, *b) {
                    crate::tensor::gemm(k, m, n, av.data(), true, g, false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(slots, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(slots, *b) {
                    reduce_into(gb, g, |x| x);
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(ga) = self.slot(slots, *a) {
                    let bn = bv.len();
                    for (j, (acc, gv)) in ga.iter_mut().zip(g).enumerate() {
                        *acc += gv * bv[j % bn];
                    }
                }
                if let Some(gb) = self.slot(slots, *b) {
                    let bn = gb.len();
                    for (j, (gv, x)) in g.iter().zip(av).enumerate() {
                        gb[j % bn] += gv * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(slots, *a) {
                    for (acc, gv) in ga.iter_mut().zip(g) {
                        *acc += c * gv;
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.slot(slots, *a) {
                    for ((acc, gv), y) in ga.iter_mut().zip(g).zip(out) {
                        *acc += gv * y;
                    }
                }
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.slot(slots, *a) {
                    for ((acc, gv), xv) in ga.iter_mut().zip(g).zip(x) {
                        *acc += gv * sigmoid(*xv);
                    }
                }
            }
            Op::Silu(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.slot(slots, *a) {
                    for ((acc, gv), xv) in ga.iter_mut().zip(g).zip(x) {
                        let s = sigmoid(*xv);
                        *acc += gv * s * (1.0 + xv * (1.0 - s));
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(slots, *a) {
                    for ((acc, gv), y) in ga.iter_mut().zip(g).zip(out) {
                        *acc += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax(a) => {
                let c = node.value.last_dim();
                if let Some(ga) = self.slot(slots, *a) {
                    for ((acc, gr), y) in ga.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot: f64 = gr.iter().zip(y).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            acc[j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::RmsNorm(x, w, eps) => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let d = wv.len();
                let rows = xv.len() / d;
                let mut gx_buf = self.take_slot(slots, *x);
                let mut gw_buf = self.take_slot(slots, *w);
                for r in 0..rows {
                    let xr = &xv[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
                    let inv = 1.0 / (ms + eps).sqrt();
                    if let Some(gw) = gw_buf.as_mut() {
                        for j in 0..d {
                            gw[j] += gr[j] * xr[j] * inv;
                        }
                    }
                    if let Some(gx) = gx_buf.as_mut() {
                        let dot: f64 = (0..d).map(|j| gr[j] * wv[j] * xr[j]).sum();
                        let coef = inv * inv * inv * dot / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += inv * gr[j] * wv[j] - coef * xr[j];
                        }
                    }
                }
                if let Some(v) = gx_buf {
                    slots[x.0] = Some(Buffer::new(v));
                }
                if let Some(v) = gw_buf {
                    slots[w.0] = Some(Buffer::new(v));
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(slots, *a) {
                    ga.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.slot(slots, *a) {
                    let n = ga.len() as f64;
                    ga.iter_mut().for_each(|v| *v += g[0] / n);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2()?;
                if let Some(ga) = self.slot(slots, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(slots, *a) {
                    add_into(ga, g);
                }
            }
            Op::Embedding(t, ids) => {
                let d = self.value(*t).last_dim();
                if let Some(gt) = self.slot(slots, *t) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::Row(a, index) => {
                let c = node.value.len();
                if let Some(ga) = self.slot(slots, *a) {
                    for j in 0..c {
                        ga[index * c + j] += g[j];
                    }
                }
            }
            Op::Columns(a, start) => {
                let width = node.value.last_dim();
                let cols = self.value(*a).last_dim();
                if let Some(ga) = self.slot(slots, *a) {
                    for (r, gr) in g.chunks(width).enumerate() {
                        for (j, v) in gr.iter().enumerate() {
                            ga[r * cols + start + j] += v;
                        }
                    }
                }
            }
            Op::Custom(inputs, op) => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|v| self.requires_grad(*v)).collect();
                let grads = op.backward(&values, &node.value, grad, &needs)?;
                if grads.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    )));
                }
                for (v, gi) in inputs.iter().zip(grads) {
                    if let (Some(gi), Some(slot)) = (gi, self.slot(slots, *v)) {
                        if gi.len() != slot.len() {
                            return Err(Error::dim(op.name(), &[slot.len()], gi.shape()));
                        }
                        add_into(slot, gi.data());
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

/// Sums `g` over leading dimensions into the trailing-shaped `acc`.
fn reduce_into(acc: &mut [f64], g: &[f64], f: impl Fn(f64) -> f64) {
    let n = acc.len();
    for (j, v) in g.iter().enumerate() {
        acc[j % n] += f(*v);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a differentiable leaf (zeros if the loss does not depend on it).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
