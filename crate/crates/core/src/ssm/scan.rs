//! Linear recurrences `h_t = a_t ⊙ h_{t−1} + b_t` over many independent lanes.
//!
//! Buffers are time-major: element `(t, lane)` lives at `t * lanes + lane`.
//! The parallel variant is a Blelloch up-sweep/down-sweep over the affine
//! composition monoid, padded to a power of two with identity elements.

use rayon::prelude::*;

use crate::autograd::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::memory::Buffer;
use crate::ssm::discretize::DiscretizedStep;
use crate::ssm::selective::ScanMode;
use crate::tensor::Tensor;

/// The affine map `h ↦ a·h + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanElement {
    pub a: f64,
    pub b: f64,
}

impl ScanElement {
    pub const IDENTITY: ScanElement = ScanElement { a: 1.0, b: 0.0 };

    /// `self ∘ earlier`: apply `earlier` first, then `self`.
    pub fn after(self, earlier: ScanElement) -> ScanElement {
        ScanElement {
            a: self.a * earlier.a,
            b: self.a * earlier.b + self.b,
        }
    }

    pub fn apply(self, h: f64) -> f64 {
        self.a * h + self.b
    }
}

/// Minimum buffer size before tree levels are split across threads.
const PAR_THRESHOLD: usize = 1 << 15;

fn lanes_and_len(a: &[f64], b: &[f64], h0: &[f64], out: &[f64]) -> (usize, usize) {
    let lanes = h0.len();
    assert!(lanes > 0, "scan needs at least one lane");
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), out.len());
    assert_eq!(a.len() % lanes, 0);
    (lanes, a.len() / lanes)
}

/// Left fold of the recurrence starting at `h0`.
pub fn scan_sequential(a: &[f64], b: &[f64], h0: &[f64], out: &mut [f64]) {
    let (lanes, len) = lanes_and_len(a, b, h0, out);
    if len == 0 {
        return;
    }
    for l in 0..lanes {
        out[l] = a[l] * h0[l] + b[l];
    }
    for t in 1..len {
        let (done, rest) = out.split_at_mut(t * lanes);
        let prev = &done[(t - 1) * lanes..];
        let cur = &mut rest[..lanes];
        let at = &a[t * lanes..(t + 1) * lanes];
        let bt = &b[t * lanes..(t + 1) * lanes];
        for l in 0..lanes {
            cur[l] = at[l] * prev[l] + bt[l];
        }
    }
}

fn for_each_block(ea: &mut [f64], eb: &mut [f64], block: usize, f: impl Fn(&mut [f64], &mut [f64]) + Sync) {
    if ea.len() >= PAR_THRESHOLD && ea.len() / block > 1 {
        ea.par_chunks_mut(block)
            .zip(eb.par_chunks_mut(block))
            .for_each(|(ca, cb)| f(ca, cb));
    } else {
        ea.chunks_mut(block)
            .zip(eb.chunks_mut(block))
            .for_each(|(ca, cb)| f(ca, cb));
    }
}

/// Work-efficient (Blelloch) scan. Equal to [`scan_sequential`] up to rounding;
/// the combination order is fixed by the tree, so results do not depend on
/// the number of threads.
pub fn scan_parallel(a: &[f64], b: &[f64], h0: &[f64], out: &mut [f64]) {
    let (lanes, len) = lanes_and_len(a, b, h0, out);
    if len == 0 {
        return;
    }
    let p = len.next_power_of_two();
    let mut ea = Buffer::new(vec![1.0; p * lanes]);
    let mut eb = Buffer::zeros(p * lanes);
    ea[..len * lanes].copy_from_slice(a);
    eb[..len * lanes].copy_from_slice(b);

    // up-sweep: the last slot of each block accumulates the block total
    let mut half = 1;
    while half < p {
        let block = 2 * half;
        for_each_block(&mut ea, &mut eb, block * lanes, |ca, cb| {
            let j = (half - 1) * lanes;
            let i = (block - 1) * lanes;
            for l in 0..lanes {
                let (aj, bj) = (ca[j + l], cb[j + l]);
                let (ai, bi) = (ca[i + l], cb[i + l]);
                ca[i + l] = ai * aj;
                cb[i + l] = ai * bj + bi;
            }
        });
        half = block;
    }

    // down-sweep: turn block totals into exclusive prefixes
    ea[(p - 1) * lanes..].iter_mut().for_each(|v| *v = 1.0);
    eb[(p - 1) * lanes..].iter_mut().for_each(|v| *v = 0.0);
    let mut half = p / 2;
    while half >= 1 {
        let block = 2 * half;
        for_each_block(&mut ea, &mut eb, block * lanes, |ca, cb| {
            let j = (half - 1) * lanes;
            let i = (block - 1) * lanes;
            for l in 0..lanes {
                let (left_a, left_b) = (ca[j + l], cb[j + l]);
                let (pre_a, pre_b) = (ca[i + l], cb[i + l]);
                ca[j + l] = pre_a;
                cb[j + l] = pre_b;
                ca[i + l] = left_a * pre_a;
                cb[i + l] = left_a * pre_b + left_b;
            }
        });
        half /= 2;
    }

    for t in 0..len {
        for l in 0..lanes {
            let k = t * lanes + l;
            let before = ea[k] * h0[l] + eb[k];
            out[k] = a[k] * before + b[k];
        }
    }
}

pub(crate) fn scan_with(mode: ScanMode, a: &[f64], b: &[f64], h0: &[f64], out: &mut [f64]) {
    match mode {
        ScanMode::Sequential => scan_sequential(a, b, h0, out),
        ScanMode::Parallel => scan_parallel(a, b, h0, out),
    }
}

fn steps_to_buffers(steps: &[DiscretizedStep], h0: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let lanes = match (steps.first(), h0) {
        (_, Some(h)) => h.len(),
        (Some(s), None) => s.a_bar.len(),
        (None, None) => 0,
    };
    let mut a = Vec::with_capacity(steps.len() * lanes);
    let mut b = Vec::with_capacity(steps.len() * lanes);
    for (t, s) in steps.iter().enumerate() {
        if s.a_bar.len() != lanes || s.b_bar_x.len() != lanes {
            return Err(Error::Dimension {
                op: "recurrent_scan",
                lhs: vec![lanes],
                rhs: vec![t, s.a_bar.len(), s.b_bar_x.len()],
            });
        }
        a.extend_from_slice(&s.a_bar);
        b.extend_from_slice(&s.b_bar_x);
    }
    let h0 = h0.map_or_else(|| vec![0.0; lanes], <[f64]>::to_vec);
    Ok((a, b, h0))
}

fn recurrent(mode: ScanMode, steps: &[DiscretizedStep], h0: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
    let (a, b, h0) = steps_to_buffers(steps, h0)?;
    if steps.is_empty() || h0.is_empty() {
        return Ok(vec![Vec::new(); steps.len()]);
    }
    let mut out = vec![0.0; a.len()];
    scan_with(mode, &a, &b, &h0, &mut out);
    Ok(out.chunks(h0.len()).map(<[f64]>::to_vec).collect())
}

/// Hidden states `h_1..h_L`; `h0` defaults to zeros.
pub fn recurrent_scan_sequential(steps: &[DiscretizedStep], h0: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
    recurrent(ScanMode::Sequential, steps, h0)
}

/// As [`recurrent_scan_sequential`], computed with the Blelloch scan.
pub fn recurrent_scan_parallel(steps: &[DiscretizedStep], h0: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
    recurrent(ScanMode::Parallel, steps, h0)
}

struct LinearScanOp {
    mode: ScanMode,
}

impl CustomOp for LinearScanOp {
    fn name(&self) -> &'static str {
        "linear_scan"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (a, h) = (inputs[0].data(), output.data());
        let (len, lanes) = output.dims2()?;
        let h0 = inputs.get(2).map(|t| t.data());
        let gh = reverse_adjoint(self.mode, a, grad.data(), lanes, len, &vec![0.0; lanes]);
        let mut ga = vec![0.0; a.len()];
        for t in 0..len {
            for l in 0..lanes {
                let prev = if t == 0 {
                    h0.map_or(0.0, |h| h[l])
                } else {
                    h[(t - 1) * lanes + l]
                };
                ga[t * lanes + l] = gh[t * lanes + l] * prev;
            }
        }
        let mut grads = vec![
            Some(Tensor::new(output.shape(), ga)?),
            Some(Tensor::new(output.shape(), gh.to_vec())?),
        ];
        if inputs.len() == 3 {
            grads.push(if needs[2] {
                Some(Tensor::new(&[lanes], (0..lanes).map(|l| a[l] * gh[l]).collect())?)
            } else {
                None
            });
        }
        Ok(grads)
    }
}

/// Adjoint states `g_t = a_{t+1} ⊙ g_{t+1} + seed_t`, with `carry` entering
/// the last step (`g_{L−1} = carry + seed_{L−1}`).
pub(crate) fn reverse_adjoint(mode: ScanMode, a: &[f64], seed: &[f64], lanes: usize, len: usize, carry: &[f64]) -> Buffer {
    if mode == ScanMode::Sequential {
        let mut out = Buffer::new(seed[..len * lanes].to_vec());
        if len == 0 {
            return out;
        }
        let last = (len - 1) * lanes;
        for l in 0..lanes {
            out[last + l] += carry[l];
        }
        for t in (0..len - 1).rev() {
            let (head, tail) = out.split_at_mut((t + 1) * lanes);
            let (row, next) = (&mut head[t * lanes..], &tail[..lanes]);
            let a_next = &a[(t + 1) * lanes..(t + 2) * lanes];
            for l in 0..lanes {
                row[l] += a_next[l] * next[l];
            }
        }
        return out;
    }
    let mut ra = Buffer::zeros(len * lanes);
    let mut rb = Buffer::zeros(len * lanes);
    for s in 0..len {
        let t = len - 1 - s;
        rb[s * lanes..(s + 1) * lanes].copy_from_slice(&seed[t * lanes..(t + 1) * lanes]);
        if s == 0 {
            ra[..lanes].iter_mut().for_each(|v| *v = 1.0);
        } else {
            ra[s * lanes..(s + 1) * lanes].copy_from_slice(&a[(t + 1) * lanes..(t + 2) * lanes]);
        }
    }
    let mut rev = Buffer::zeros(len * lanes);
    scan_with(mode, &ra, &rb, carry, &mut rev);
    drop(ra);
    drop(rb);
    let mut out = Buffer::zeros(len * lanes);
    for s in 0..len {
        let t = len - 1 - s;
        out[t * lanes..(t + 1) * lanes].copy_from_slice(&rev[s * lanes..(s + 1) * lanes]);
    }
    out
}

/// Differentiable scan over `L×M` inputs; `h0` (length `M`) defaults to zeros.
pub fn linear_scan_op(tape: &mut Tape, a: Var, b: Var, h0: Option<Var>, mode: ScanMode) -> Result<Var> {
    let (av, bv) = (tape.value(a), tape.value(b));
    if av.shape() != bv.shape() || av.rank() != 2 {
        return Err(Error::dim("linear_scan", av.shape(), bv.shape()));
    }
    let (len, lanes) = av.dims2()?;
    let h0v = match h0 {
        Some(h) => {
            let hv = tape.value(h);
            if hv.shape() != [lanes] {
                return Err(Error::dim("linear_scan h0", hv.shape(), &[lanes]));
            }
            hv.to_vec()
        }
        None => vec![0.0; lanes],
    };
    let mut out = vec![0.0; len * lanes];
    if lanes > 0 {
        scan_with(mode, av.data(), bv.data(), &h0v, &mut out);
    }
    let out = Tensor::new(&[len, lanes], out)?;
    let mut inputs = vec![a, b];
    inputs.extend(h0);
    tape.custom(&inputs, out, Box::new(LinearScanOp { mode }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gradcheck, random};
    use proptest::prelude::*;

    fn steps(a: &[f64], bx: &[f64]) -> Vec<DiscretizedStep> {
        a.iter()
            .zip(bx)
            .map(|(a, b)| DiscretizedStep::new(vec![*a], vec![*b]).unwrap())
            .collect()
    }

    #[test]
    fn memoryless_case() {
        let h = recurrent_scan_sequential(&steps(&[0.0, 0.0, 0.0], &[1.0, -2.0, 3.0]), None).unwrap();
        assert_eq!(h, vec![vec![1.0], vec![-2.0], vec![3.0]]);
    }

    #[test]
    fn hand_recurrence() {
        let s = vec![DiscretizedStep::new(vec![0.5, 0.5], vec![1.0, 1.0]).unwrap(); 2];
        let h = recurrent_scan_sequential(&s, None).unwrap();
        assert_eq!(h, vec![vec![1.0, 1.0], vec![1.5, 1.5]]);
    }

    #[test]
    fn running_sum() {
        let s = steps(&[1.0; 4], &[1.0; 4]);
        for h in [recurrent_scan_sequential(&s, None), recurrent_scan_parallel(&s, None)] {
            assert_eq!(h.unwrap(), vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        }
    }

    #[test]
    fn empty_and_single() {
        assert!(recurrent_scan_parallel(&[], None).unwrap().is_empty());
        let h = recurrent_scan_parallel(&steps(&[0.3], &[2.0]), Some(&[5.0])).unwrap();
        assert_eq!(h, vec![vec![0.3 * 5.0 + 2.0]]);
    }

    #[test]
    fn ragged_steps_rejected() {
        let s = vec![
            DiscretizedStep::new(vec![1.0], vec![1.0]).unwrap(),
            DiscretizedStep::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap(),
        ];
        assert!(matches!(recurrent_scan_sequential(&s, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn parallel_matches_sequential_large_multilane() {
        for len in [1usize, 2, 3, 255, 256, 257, 4096] {
            let lanes = 3;
            let a = random(&[len, lanes], 0.0, 1.0, len as u64).to_vec();
            let b = random(&[len, lanes], -1.0, 1.0, 7 + len as u64).to_vec();
            let h0 = [0.5, -1.0, 2.0];
            let mut s = vec![0.0; a.len()];
            let mut p = vec![0.0; a.len()];
            scan_sequential(&a, &b, &h0, &mut s);
            scan_parallel(&a, &b, &h0, &mut p);
            let err = s.iter().zip(&p).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "len {len}: {err}");
        }
    }

    #[test]
    fn threaded_result_is_bit_identical() {
        let (len, lanes) = (1000, 64);
        let a = random(&[len, lanes], 0.0, 1.0, 1).to_vec();
        let b = random(&[len, lanes], -1.0, 1.0, 2).to_vec();
        let h0 = vec![0.0; lanes];
        let mut one = vec![0.0; a.len()];
        let mut many = vec![0.0; a.len()];
        rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()
            .install(|| scan_parallel(&a, &b, &h0, &mut one));
        rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap()
            .install(|| scan_parallel(&a, &b, &h0, &mut many));
        assert_eq!(one, many);
    }

    #[test]
    fn linear_scan_gradients() {
        for mode in [ScanMode::Sequential, ScanMode::Parallel] {
            let a = random(&[7, 3], 0.1, 0.95, 11);
            let b = random(&[7, 3], -2.0, 2.0, 12);
            let h0 = random(&[3], -1.0, 1.0, 13);
            let w = random(&[7, 3], -1.0, 1.0, 14);
            let err = gradcheck(&[a, b, h0], |t, v| {
                let h = linear_scan_op(t, v[0], v[1], Some(v[2]), mode)?;
                let w = t.constant(w.clone());
                let y = t.mul(h, w)?;
                t.sum(y)
            });
            assert!(err < 1e-6, "{mode:?}: {err}");
        }
    }

    fn elem() -> impl Strategy<Value = ScanElement> {
        (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b)| ScanElement { a, b })
    }

    proptest! {
        #[test]
        fn composition_is_associative(e1 in elem(), e2 in elem(), e3 in elem(), h in -3.0f64..3.0) {
            let left = e3.after(e2).after(e1);
            let right = e3.after(e2.after(e1));
            prop_assert!((left.a - right.a).abs() < 1e-12);
            prop_assert!((left.b - right.b).abs() < 1e-12);
            // composing then applying equals applying in sequence
            let seq = e3.apply(e2.apply(e1.apply(h)));
            prop_assert!((left.apply(h) - seq).abs() < 1e-12);
            prop_assert_eq!(ScanElement::IDENTITY.after(e1), e1);
            prop_assert_eq!(e1.after(ScanElement::IDENTITY), e1);
        }
    }
}
