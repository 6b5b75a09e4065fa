//! Contrastive loss `−log(e^{s⁺} / (e^{s⁺} + Σ e^{s⁻}))`.

use crate::autograd::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(scores: &[f64]) -> Result<()> {
    if scores.len() < 2 {
        return Err(Error::Contract("InfoNCE needs at least one negative".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score in {scores:?}")));
    }
    Ok(())
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// `log_sum_exp(scores) − scores[0]`, keeping precision when the first
/// score dominates.
fn loss_of(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pos = scores[0];
    if pos == max {
        scores[1..].iter().map(|s| (s - max).exp()).sum::<f64>().ln_1p()
    } else {
        (max - pos) + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
    }
}

/// Loss for one positive score followed by its negatives.
pub fn infonce(pos: f64, negs: &[f64]) -> Result<f64> {
    let mut all = vec![pos];
    all.extend_from_slice(negs);
    check(&all)?;
    Ok(loss_of(&all))
}

struct InfoNce;

impl CustomOp for InfoNce {
    fn name(&self) -> &'static str {
        "infonce"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let scores: Vec<f64> = inputs.iter().map(|t| t.data()[0]).collect();
        let lse = log_sum_exp(&scores);
        let g = grad.data()[0];
        scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = (s - lse).exp();
                let d = if i == 0 { p - 1.0 } else { p };
                Ok(Some(Tensor::new(inputs[i].shape(), vec![g * d])?))
            })
            .collect()
    }
}

/// InfoNCE on the tape; every input is a one-element score.
pub fn infonce_loss(tape: &mut Tape, pos: Var, negs: &[Var]) -> Result<Var> {
    let mut vars = vec![pos];
    vars.extend_from_slice(negs);
    let mut scores = Vec::with_capacity(vars.len());
    for v in &vars {
        let t = tape.value(*v);
        if t.len() != 1 {
            return Err(Error::dim("infonce", &[1], t.shape()));
        }
        scores.push(t.data()[0]);
    }
    check(&scores)?;
    let loss = Tensor::scalar(loss_of(&scores));
    tape.custom(&vars, loss, Box::new(InfoNce))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gradcheck, random};
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        assert!((infonce(0.3, &[0.3]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((infonce(-1.0, &[-1.0; 7]).unwrap() - 8f64.ln()).abs() < 1e-15);
        assert!(infonce(1000.0, &[0.0, -5.0]).unwrap() < 1e-300);
        assert!(infonce(800.0, &[799.0]).unwrap().is_finite());
        assert!(matches!(infonce(1.0, &[]), Err(Error::Contract(_))));
        assert!(matches!(infonce(f64::NAN, &[1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn monotone_in_positive() {
        let negs = [0.5, -0.2, 1.0];
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let l = infonce(-5.0 + 0.3 * i as f64, &negs).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn gradcheck_loss() {
        let ins: Vec<Tensor> = (0..8).map(|i| random(&[], -2.0, 2.0, i)).collect();
        let err = gradcheck(&ins, |t, v| infonce_loss(t, v[0], &v[1..]));
        assert!(err < 1e-8, "{err}");
    }

    proptest! {
        #[test]
        fn shift_invariance_and_zero_sum(scores in proptest::collection::vec(-20.0f64..20.0, 2..10), c in -50.0f64..50.0) {
            let base = infonce(scores[0], &scores[1..]).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            prop_assert!((infonce(shifted[0], &shifted[1..]).unwrap() - base).abs() < 1e-10);
            prop_assert!(base > 0.0);

            let mut tape = Tape::new();
            let vs: Vec<Var> = scores.iter().map(|s| tape.leaf(Tensor::scalar(*s))).collect();
            let l = infonce_loss(&mut tape, vs[0], &vs[1..]).unwrap();
            let g = tape.backward(l).unwrap();
            let total: f64 = vs.iter().map(|v| g.get(*v).unwrap().data()[0]).sum();
            prop_assert!(total.abs() < 1e-10);
        }
    }
}
