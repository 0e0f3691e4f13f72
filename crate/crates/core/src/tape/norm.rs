use rand::Rng;

use super::{Backprop, Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// How a batch-norm node normalizes its input.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    /// Normalize with statistics of the current batch.
    Train { eps: f64 },
    /// Normalize with stored running statistics.
    Infer {
        mean: &'a [T],
        var: &'a [T],
        eps: f64,
    },
}

/// Per-channel batch statistics observed by a training-mode batch norm;
/// `var` is the unbiased estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) struct BatchNormSaved<T> {
    input: usize,
    gamma: usize,
    beta: usize,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
    channels: usize,
    inner: usize,
}

/// `(batch, channels, spatial)` of a `[n, c]` or `[n, c, h, w]` shape.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(shape_err("batch_norm", format!("unsupported shape {shape:?}"))),
    }
}

impl<T: Real> Tape<T> {
    /// Per-channel normalization followed by the affine `gamma * xhat + beta`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let x = self.node_value(input.0);
        let (n, c, inner) = layout(x.shape())?;
        let ga = self.node_value(gamma.0).data();
        let be = self.node_value(beta.0).data();
        if ga.len() != c || be.len() != c {
            return Err(shape_err("batch_norm", "affine parameters differ from channel count"));
        }
        let count = n * inner;
        if count == 0 {
            return Err(shape_err("batch_norm", "empty batch"));
        }
        let data = x.data();
        let (mean, var, eps, train) = match mode {
            BnMode::Train { eps } => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for b in 0..n {
                        s += data[(b * c + ch) * inner..][..inner].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut ss = 0.0f64;
                    for b in 0..n {
                        ss += data[(b * c + ch) * inner..][..inner]
                            .iter()
                            .map(|v| (v.f64() - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = T::of(m);
                    var[ch] = T::of(ss / count as f64);
                }
                (mean, var, eps, true)
            }
            BnMode::Infer { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err("batch_norm", "running statistics differ from channel count"));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let mut xhat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    let xh = (data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = ga[ch] * xh + be[ch];
                }
            }
        }
        let stats = train.then(|| {
            let unbias = if count > 1 {
                T::of(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            BatchStats {
                mean: mean.clone(),
                var: var.iter().map(|&v| v * unbias).collect(),
            }
        });
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let saved = BatchNormSaved {
            input: input.0,
            gamma: gamma.0,
            beta: beta.0,
            xhat,
            inv_std,
            train,
            channels: c,
            inner,
        };
        let v = self.push_op(value, Op::BatchNorm(saved), &[input.0, gamma.0, beta.0]);
        Ok((v, stats))
    }

    /// Inverted dropout: surviving units are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, input: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(shape_err("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let x = self.node_value(input.0);
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push_op(value, Op::Dropout { input: input.0, mask }, &[input.0]))
    }
}

pub(crate) fn batchnorm_backward<T: Real>(tape: &Tape<T>, s: &BatchNormSaved<T>, g: &[T]) -> Backprop<T> {
    let gamma = tape.node_value(s.gamma).data();
    let c = s.channels;
    let inner = s.inner;
    let n = g.len() / (c * inner);
    let count = T::of((n * inner) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                dgamma[ch] = dgamma[ch] + g[i] * s.xhat[i];
                dbeta[ch] = dbeta[ch] + g[i];
            }
        }
    }
    let mut bp = Backprop::new();
    if tape.needs_grad(s.input) {
        let mut dx = vec![T::zero(); g.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                let scale = gamma[ch] * s.inv_std[ch];
                for i in off..off + inner {
                    dx[i] = if s.train {
                        scale / count * (count * g[i] - dbeta[ch] - s.xhat[i] * dgamma[ch])
                    } else {
                        scale * g[i]
                    };
                }
            }
        }
        bp.push(s.input, dx);
    }
    bp.push(s.gamma, dgamma);
    bp.push(s.beta, dbeta);
    bp
}
