//! The input-dependent (selective) scan: sequential vs work-efficient
//! parallel evaluation, and the two backward memory strategies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankssm::autograd::Tape;
use rankssm::memory;
use rankssm::ssm::{selective_scan, selective_scan_op, BackwardMemory, ScanConfig, ScanMode};
use rankssm::Tensor;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn main() -> rankssm::Result<()> {
    let (len, d, n) = (2048, 8, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[len, d], -1.0, 1.0);
    let delta = random(&mut rng, &[len, d], 0.001, 0.1);
    let a_log = random(&mut rng, &[d, n], -1.0, 1.0);
    let b = random(&mut rng, &[len, n], -1.0, 1.0);
    let c = random(&mut rng, &[len, n], -1.0, 1.0);

    let seq = selective_scan(&x, &delta, &a_log, &b, &c, None, ScanMode::Sequential)?;
    let par = selective_scan(&x, &delta, &a_log, &b, &c, None, ScanMode::Parallel)?;
    println!("L={len}: max |parallel - sequential| = {:.3e}", par.max_abs_diff(&seq).unwrap());

    let mut grads = Vec::new();
    for memory_mode in [BackwardMemory::StoreAll, BackwardMemory::Recompute] {
        memory::reset_peak();
        let base = memory::live_bytes();
        let mut tape = Tape::new();
        let vars: Vec<_> = [&x, &delta, &a_log, &b, &c].iter().map(|t| tape.leaf((*t).clone())).collect();
        let config = ScanConfig { mode: ScanMode::Sequential, memory: memory_mode };
        let y = selective_scan_op(&mut tape, vars[0], vars[1], vars[2], vars[3], vars[4], None, config)?;
        let loss = tape.sum(y)?;
        let g = tape.backward(loss)?;
        let peak = memory::peak_bytes() - base;
        println!("{memory_mode:?}: peak tracked bytes {peak}");
        grads.push(g.get(vars[2]).unwrap().clone());
    }
    println!("max |dA_log(store_all) - dA_log(recompute)| = {:.3e}", grads[0].max_abs_diff(&grads[1]).unwrap());
    Ok(())
}
