//! Deterministic state-matrix and step-size initializers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 0.1;

/// `a_log[d][n] = ln(n + 1)`, i.e. `A[d][n] = −(n + 1)` on every channel.
pub fn init_a_log(n_state: usize, d_channels: usize) -> Result<Tensor> {
    if n_state == 0 || d_channels == 0 {
        return Err(Error::Config(format!(
            "A init needs N >= 1 and D >= 1, got N={n_state} D={d_channels}"
        )));
    }
    let row: Vec<f64> = (0..n_state).map(|n| ((n + 1) as f64).ln()).collect();
    Tensor::new(&[d_channels, n_state], row.repeat(d_channels))
}

/// Step-size bias: inverse softplus of `dt ~ LogUniform[DT_MIN, DT_MAX]`, so
/// that `softplus(bias)` lands in that range for zero input.
pub fn init_delta_bias(d_channels: usize, rng: &mut impl Rng) -> Tensor {
    let (lo, hi) = (DT_MIN.ln(), DT_MAX.ln());
    let data = (0..d_channels)
        .map(|_| {
            let dt: f64 = rng.random_range(lo..hi).exp();
            // softplus⁻¹(y) = y + ln(1 − e^{−y})
            dt + (-(-dt).exp_m1()).ln()
        })
        .collect();
    Tensor::from_raw(vec![d_channels], data)
}
