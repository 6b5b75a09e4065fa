//! One LTI state space layer run three ways: as a convolution with its
//! materialized kernel, and as a recurrence with the sequential and the
//! parallel scan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankssm::ssm::{build_conv_kernel, conv_apply_causal, lti_recurrent, LtiSsm, ScanMode, SsmParams};
use rankssm::Tensor;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn main() -> rankssm::Result<()> {
    let (d, n, len) = (4, 16, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ssm = LtiSsm::new(
        random(&mut rng, &[d, n], -1.0, 1.0),
        random(&mut rng, &[d, n], -1.0, 1.0),
        random(&mut rng, &[d, n], -1.0, 1.0),
        random(&mut rng, &[d], 0.01, 0.5),
        Some(random(&mut rng, &[d], -1.0, 1.0)),
    )?;
    let x = random(&mut rng, &[d, len], -1.0, 1.0);

    let conv = ssm.forward_conv(&x)?;
    let seq = lti_recurrent(&ssm, &x, ScanMode::Sequential)?;
    let par = lti_recurrent(&ssm, &x, ScanMode::Parallel)?;
    println!("channels={d} state={n} length={len}");
    println!("max |conv - sequential|   = {:.3e}", conv.max_abs_diff(&seq).unwrap());
    println!("max |parallel - sequential| = {:.3e}", par.max_abs_diff(&seq).unwrap());

    let params = SsmParams::Lti(ssm);
    let kernel = build_conv_kernel(&params, len)?;
    let taps = kernel.taps.row(0);
    println!("first taps of channel 0: {:.4?}", &taps[..6]);
    let without_skip = conv_apply_causal(&x, &kernel)?;
    println!("output[0, 0..4] without skip: {:.4?}", &without_skip.row(0)[..4]);
    Ok(())
}
