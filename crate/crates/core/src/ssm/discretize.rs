//! Zero-order-hold discretization for diagonal (elementwise) `A`.
//!
//! `Ā = exp(Δa)` and `B̄ = (exp(Δa) − 1)/a · b`. The second factor has a
//! removable singularity at `a = 0` where it tends to `Δ`.

use crate::autograd::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Below this `|Δa|` the coefficient uses its limit `Δ`.
const SERIES_CUTOFF: f64 = 1e-8;

/// `(exp(Δa) − 1)/a`, equal to `Δ` in the `a → 0` limit.
pub fn zoh_coefficient(delta: f64, a: f64) -> f64 {
    let z = delta * a;
    if z.abs() < SERIES_CUTOFF {
        delta
    } else {
        z.exp_m1() / a
    }
}

/// Partial derivatives of [`zoh_coefficient`] with respect to `Δ` and `a`.
pub(crate) fn zoh_coefficient_grads(delta: f64, a: f64) -> (f64, f64) {
    let z = delta * a;
    let d_delta = z.exp();
    // d/da = Δ²·(z·eᶻ − (eᶻ − 1))/z²
    let psi = if z.abs() < 1e-3 {
        0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    };
    (d_delta, delta * delta * psi)
}

/// Below this `|Δa|` the fused helpers fall back to the series forms.
const FUSED_CUTOFF: f64 = 1e-3;

/// `(Ā, (exp(Δa) − 1)/a)` from a single `exp`. Away from the singularity
/// `Ā − 1` loses at most `ε/|Δa|` relative accuracy, about 2e-13.
#[inline]
pub(crate) fn zoh_pair(delta: f64, a: f64, inv_a: f64) -> (f64, f64) {
    let z = delta * a;
    if z.abs() < FUSED_CUTOFF {
        return (z.exp(), zoh_coefficient(delta, a));
    }
    let a_bar = z.exp();
    (a_bar, (a_bar - 1.0) * inv_a)
}

/// Coefficient and its `(∂Δ, ∂a)` partials, reusing an `Ā` already computed
/// by [`zoh_pair`]. `inv_a` is `1/a`, hoisted by callers that loop over time.
#[inline]
pub(crate) fn zoh_terms(delta: f64, a: f64, inv_a: f64, a_bar: f64) -> (f64, f64, f64) {
    let z = delta * a;
    if z.abs() < FUSED_CUTOFF {
        let (cd, ca) = zoh_coefficient_grads(delta, a);
        return (zoh_coefficient(delta, a), cd, ca);
    }
    let em1 = a_bar - 1.0;
    // Δ²·(z·eᶻ − (eᶻ − 1))/z² = (z·eᶻ − (eᶻ − 1))/a²
    (em1 * inv_a, a_bar, (z * a_bar - em1) * inv_a * inv_a)
}

/// Discretizes one scalar mode. Returns `(Ā, B̄)`.
pub fn discretize_zoh(delta: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    if !(delta.is_finite() && a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite discretization input (delta={delta}, a={a}, b={b})"
        )));
    }
    if delta < 0.0 {
        return Err(Error::Parameter(format!("step size must be positive, got {delta}")));
    }
    Ok(((delta * a).exp(), zoh_coefficient(delta, a) * b))
}

/// One recurrence step: `Ā` and the pre-multiplied drive `B̄·x`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedStep {
    pub a_bar: Vec<f64>,
    pub b_bar_x: Vec<f64>,
}

impl DiscretizedStep {
    pub fn new(a_bar: Vec<f64>, b_bar_x: Vec<f64>) -> Result<Self> {
        if a_bar.len() != b_bar_x.len() {
            return Err(Error::dim("DiscretizedStep", &[a_bar.len()], &[b_bar_x.len()]));
        }
        Ok(DiscretizedStep { a_bar, b_bar_x })
    }
}

fn same_shape(tape: &Tape, op: &'static str, vars: &[Var]) -> Result<()> {
    let first = tape.value(vars[0]).shape();
    for v in &vars[1..] {
        if tape.value(*v).shape() != first {
            return Err(Error::dim(op, first, tape.value(*v).shape()));
        }
    }
    Ok(())
}

fn check_delta(t: &Tensor) -> Result<()> {
    if t.data().iter().any(|d| *d < 0.0) {
        return Err(Error::Parameter("step sizes must be positive".into()));
    }
    Ok(())
}

struct ZohABar;

impl CustomOp for ZohABar {
    fn name(&self) -> &'static str {
        "zoh_a_bar"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (delta, a) = (inputs[0].data(), inputs[1].data());
        let (y, g) = (output.data(), grad.data());
        let gd = (0..y.len()).map(|i| g[i] * y[i] * a[i]).collect();
        let ga = (0..y.len()).map(|i| g[i] * y[i] * delta[i]).collect();
        let shape = output.shape();
        Ok(vec![Some(Tensor::new(shape, gd)?), Some(Tensor::new(shape, ga)?)])
    }
}

/// Elementwise `Ā = exp(Δ·a)` on the tape (`delta` and `a` share a shape).
pub fn zoh_a_bar(tape: &mut Tape, delta: Var, a: Var) -> Result<Var> {
    same_shape(tape, "zoh_a_bar", &[delta, a])?;
    check_delta(tape.value(delta))?;
    let (d, av) = (tape.value(delta), tape.value(a));
    let data = d.data().iter().zip(av.data()).map(|(d, a)| (d * a).exp()).collect();
    let out = Tensor::new(d.shape(), data)?;
    tape.custom(&[delta, a], out, Box::new(ZohABar))
}

struct ZohBBar;

impl CustomOp for ZohBBar {
    fn name(&self) -> &'static str {
        "zoh_b_bar"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (delta, a, b) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let g = grad.data();
        let n = g.len();
        let (mut gd, mut ga, mut gb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (cd, ca) = zoh_coefficient_grads(delta[i], a[i]);
            gd[i] = g[i] * b[i] * cd;
            ga[i] = g[i] * b[i] * ca;
            gb[i] = g[i] * zoh_coefficient(delta[i], a[i]);
        }
        let shape = grad.shape();
        Ok(vec![
            Some(Tensor::new(shape, gd)?),
            Some(Tensor::new(shape, ga)?),
            Some(Tensor::new(shape, gb)?),
        ])
    }
}

/// Elementwise `B̄ = (exp(Δa) − 1)/a · b` on the tape.
pub fn zoh_b_bar(tape: &mut Tape, delta: Var, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "zoh_b_bar", &[delta, a, b])?;
    check_delta(tape.value(delta))?;
    let (d, av, bv) = (tape.value(delta), tape.value(a), tape.value(b));
    let data = (0..d.len())
        .map(|i| zoh_coefficient(d.data()[i], av.data()[i]) * bv.data()[i])
        .collect();
    let out = Tensor::new(d.shape(), data)?;
    tape.custom(&[delta, a, b], out, Box::new(ZohBBar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gradcheck, random};

    #[test]
    fn closed_form_half() {
        let (a_bar, b_bar) = discretize_zoh(2f64.ln(), -1.0, 1.0).unwrap();
        assert!((a_bar - 0.5).abs() < 1e-15);
        assert!((b_bar - 0.5).abs() < 1e-15);
    }

    #[test]
    fn series_branch_and_zero_step() {
        let (a_bar, b_bar) = discretize_zoh(0.1, 1e-12, 2.0).unwrap();
        assert!((a_bar - 1.0).abs() < 1e-12);
        assert!((b_bar - 0.2).abs() < 1e-12);
        assert_eq!(discretize_zoh(0.0, -3.0, 5.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn singularity_is_continuous() {
        for delta in [0.01, 0.1, 1.0, 3.0] {
            let limit = delta * 1.5;
            for a in [1e-9, -1e-9] {
                let (_, b_bar) = discretize_zoh(delta, a, 1.5).unwrap();
                assert!((b_bar - limit).abs() < 1e-8);
            }
            // just outside the cutoff the closed form tracks Δb(1 + z/2)
            let (_, b_bar) = discretize_zoh(delta, 2e-8 / delta, 1.5).unwrap();
            assert!((b_bar - limit * (1.0 + 1e-8)).abs() < 1e-12 * limit.max(1.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(discretize_zoh(f64::NAN, -1.0, 1.0), Err(Error::Numeric(_))));
        assert!(matches!(discretize_zoh(1.0, f64::INFINITY, 1.0), Err(Error::Numeric(_))));
        assert!(discretize_zoh(-0.5, -1.0, 1.0).is_err());
    }

    #[test]
    fn coefficient_derivative_matches_differences() {
        for &(d, a) in &[(0.3, -2.0), (0.01, -0.05), (1.2, -1e-4), (0.5, 0.7)] {
            let (gd, ga) = zoh_coefficient_grads(d, a);
            let h = 1e-6;
            let nd = (zoh_coefficient(d + h, a) - zoh_coefficient(d - h, a)) / (2.0 * h);
            let na = (zoh_coefficient(d, a + h) - zoh_coefficient(d, a - h)) / (2.0 * h);
            assert!((gd - nd).abs() < 1e-7 * (1.0 + nd.abs()), "{gd} {nd}");
            assert!((ga - na).abs() < 1e-6 * (1.0 + na.abs()), "{ga} {na}");
        }
    }

    #[test]
    fn fused_helpers_match() {
        for &(d, a) in &[(0.3, -2.0), (1e-3, -1.0), (0.01, -0.05), (1.2, -1e-4), (0.1, -9.0), (2.0, 0.5)] {
            let (ab, coef) = zoh_pair(d, a, 1.0 / a);
            assert!((ab - (d * a).exp()).abs() < 1e-15);
            assert!((coef - zoh_coefficient(d, a)).abs() < 1e-12 * coef.abs());
            let (c2, cd, ca) = zoh_terms(d, a, 1.0 / a, ab);
            let (rd, ra) = zoh_coefficient_grads(d, a);
            assert!((c2 - coef).abs() < 1e-12 * coef.abs());
            assert!((cd - rd).abs() < 1e-12 * rd.abs());
            assert!((ca - ra).abs() < 1e-10 * ra.abs(), "{ca} {ra}");
        }
    }

    #[test]
    fn tape_ops_gradcheck() {
        let delta = random(&[3, 4], 0.05, 2.0, 1);
        let a = random(&[3, 4], -2.0, -0.1, 2);
        let b = random(&[3, 4], -2.0, 2.0, 3);
        let err = gradcheck(&[delta.clone(), a.clone()], |t, v| {
            let y = zoh_a_bar(t, v[0], v[1])?;
            let w = t.constant(random(&[3, 4], -1.0, 1.0, 9));
            let y = t.mul(y, w)?;
            t.sum(y)
        });
        assert!(err < 1e-6, "{err}");
        let err = gradcheck(&[delta, a, b], |t, v| {
            let y = zoh_b_bar(t, v[0], v[1], v[2])?;
            let y = t.mul(y, y)?;
            t.sum(y)
        });
        assert!(err < 1e-6, "{err}");
    }
}
