//! Finite-difference gradient oracle for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamSet, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub(crate) fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Largest normwise relative error between reverse-mode gradients and central
/// differences (h = 1e-5) over all inputs.
pub(crate) fn gradcheck(
    inputs: &[Tensor],
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let eval = |ins: &[Tensor]| {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone())).collect();
        let l = f(&mut t, &vs).unwrap();
        t.value(l).item().unwrap()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap().to_vec();
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut d = input.to_vec();
            d[j] += h;
            plus[i] = Tensor::new(input.shape(), d.clone()).unwrap();
            d[j] -= 2.0 * h;
            minus[i] = Tensor::new(input.shape(), d).unwrap();
            numeric[j] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-12));
    }
    worst
}

/// Adds `Uniform(±scale)` noise to every parameter so that gradient checks
/// are not dominated by the tiny default initialization.
pub(crate) fn randomize(params: &mut ParamSet, scale: f64, seed: u64) {
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let old = params.get(id).clone();
        let noise = random(old.shape(), -scale, scale, seed + k as u64);
        let data = old.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
        params.set(id, Tensor::new(old.shape(), data).unwrap()).unwrap();
    }
}
