//! The gradient tape on its own: fit a tiny linear model with AdamW and the
//! warmup-then-linear-decay learning rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankssm::autograd::{ParamSet, Tape};
use rankssm::nn::{warmup_linear_lr, AdamW, AdamWConfig};
use rankssm::Tensor;

fn main() -> rankssm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let true_w = [1.5, -2.0, 0.5];
    let xs: Vec<f64> = (0..64 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = xs.chunks(3).map(|r| r.iter().zip(&true_w).map(|(a, b)| a * b).sum()).collect();
    let x = Tensor::matrix(64, 3, xs)?;
    let y = Tensor::matrix(64, 1, ys)?;

    let mut params = ParamSet::new();
    let w = params.add("w", Tensor::zeros(&[3, 1]));
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &params);
    let (steps, warmup) = (300, 30);
    for step in 0..steps {
        let mut tape = Tape::new();
        let wv = tape.param(&params, w)?;
        let xv = tape.constant(x.clone());
        let pred = tape.matmul(xv, wv)?;
        let target = tape.constant(y.clone());
        let err = tape.sub(pred, target)?;
        let sq = tape.mul(err, err)?;
        let loss = tape.mean(sq)?;
        if step % 50 == 0 {
            println!("step {step:3} loss {:.6}", tape.value(loss).item()?);
        }
        let grads = tape.backward(loss)?;
        params.zero_grad();
        params.accumulate(&tape, &grads)?;
        opt.step(&mut params, warmup_linear_lr(step, 0.1, warmup, steps)?)?;
    }
    println!("learned w = {:.3?} (true {:?})", params.get(w).data(), true_w);
    Ok(())
}
