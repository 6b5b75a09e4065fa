use crate::autograd::ParamSet;
use crate::error::{Error, Result};

/// AdamW hyperparameters. Defaults: betas (0.9, 0.999), eps 1e-8, weight decay 0.01.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One decoupled-weight-decay Adam update of a single parameter buffer.
///
/// `step` is the 1-based update count used for bias correction.
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    config: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != m.len() || param.len() != v.len() {
        return Err(Error::Parameter(format!(
            "AdamW buffer sizes differ: param {}, grad {}, m {}, v {}",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Parameter(format!("learning rate must be >= 0, got {lr}")));
    }
    if step == 0 {
        return Err(Error::Parameter("AdamW step count starts at 1".into()));
    }
    let bc1 = 1.0 - config.beta1.powi(step as i32);
    let bc2 = 1.0 - config.beta2.powi(step as i32);
    let decay = 1.0 - lr * config.weight_decay;
    for i in 0..param.len() {
        param[i] *= decay;
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

/// AdamW state over every trainable parameter of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| p.ids().map(|id| vec![0.0; p.get(id).len()]).collect();
        AdamW {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter using its accumulated gradient.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Parameter(format!(
                "optimizer tracks {} parameters, set has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            if !params.is_trainable(id) {
                continue;
            }
            let current = params.get(id);
            let shape = current.shape().to_vec();
            let mut value = current.to_vec();
            let grad = params.grad(id).to_vec();
            adamw_update(
                &mut value,
                &grad,
                &mut self.m[id.index()],
                &mut self.v[id.index()],
                self.step,
                &self.config,
                lr,
            )?;
            params.set(id, crate::tensor::Tensor::new(&shape, value)?)?;
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr` over `warmup_steps`, then linear decay
/// to 0 at `total_steps`.
pub fn warmup_linear_lr(step: usize, base_lr: f64, warmup_steps: usize, total_steps: usize) -> Result<f64> {
    if warmup_steps == 0 || warmup_steps >= total_steps {
        return Err(Error::Config(format!(
            "warmup steps ({warmup_steps}) must be in 1..{total_steps}"
        )));
    }
    if step > total_steps {
        return Err(Error::Parameter(format!(
            "step {step} beyond total steps {total_steps}"
        )));
    }
    Ok(if step <= warmup_steps {
        base_lr * step as f64 / warmup_steps as f64
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64
    })
}
