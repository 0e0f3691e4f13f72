use super::stack::Param;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Update rule of an [`Optimizer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

/// First-order optimizer with exponential rate decay:
/// `rate = base * decay^(step / decay_steps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub base_rate: f64,
    pub decay: f64,
    pub decay_steps: u64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, base_rate: f64) -> Self {
        Optimizer {
            kind,
            base_rate,
            decay: 1.0,
            decay_steps: 1,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Adam with rate 1e-3 and betas (0.9, 0.999).
    pub fn adam() -> Self {
        Self::new(
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            1e-3,
        )
    }

    /// SGD with momentum 0.9 and rate decay 0.97 every `decay_steps` steps.
    pub fn sgd_momentum(base_rate: f64, decay_steps: u64) -> Self {
        let mut opt = Self::new(OptimizerKind::SgdMomentum { momentum: 0.9 }, base_rate);
        opt.decay = 0.97;
        opt.decay_steps = decay_steps.max(1);
        opt
    }

    pub fn with_decay(mut self, decay: f64, decay_steps: u64) -> Self {
        self.decay = decay;
        self.decay_steps = decay_steps.max(1);
        self
    }

    /// Completed update count.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Rate used by the next update.
    pub fn rate(&self) -> f64 {
        self.base_rate * self.decay.powf(self.step as f64 / self.decay_steps as f64)
    }

    /// Applies one update. All gradients are validated before any parameter
    /// changes, so an error leaves the parameters untouched.
    pub fn step<T: Real>(&mut self, params: &mut [Param<T>], grads: &[Option<&[T]>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            let g = g.ok_or_else(|| Error::MissingGrad(p.name.clone()))?;
            if g.len() != p.value.numel() {
                return Err(Error::Invalid(format!(
                    "gradient of `{}` has {} entries, parameter has {}",
                    p.name,
                    g.len(),
                    p.value.numel()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(p.name.clone()));
            }
        }
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        }
        let rate = self.rate();
        self.step += 1;
        let t = self.step as i32;
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g.expect("validated");
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            let values = p.value.data_mut();
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..values.len() {
                        let gi = g[i].f64();
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let update = rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                        values[i] = T::of(values[i].f64() - update);
                    }
                }
                OptimizerKind::SgdMomentum { momentum } => {
                    for i in 0..values.len() {
                        m[i] = momentum * m[i] + g[i].f64();
                        values[i] = T::of(values[i].f64() - rate * m[i]);
                    }
                }
            }
        }
        Ok(())
    }
}
