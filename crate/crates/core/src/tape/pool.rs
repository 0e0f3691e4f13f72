use super::{Backprop, Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

pub(crate) struct MaxPoolSaved {
    input: usize,
    argmax: Vec<usize>,
}

impl<T: Real> Tape<T> {
    /// Max pooling without padding; windows that would cross the lower or
    /// right edge are dropped.
    pub fn maxpool2d(&mut self, input: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let x = self.node_value(input.0);
        let [n, c, h, w] = x.dims4()?;
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(shape_err("maxpool2d", "kernel and stride must be positive"));
        }
        if h < kernel.0 || w < kernel.1 {
            return Err(shape_err(
                "maxpool2d",
                format!("{}x{} window does not fit a {h}x{w} input", kernel.0, kernel.1),
            ));
        }
        let oh = (h - kernel.0) / stride.0 + 1;
        let ow = (w - kernel.1) / stride.1 + 1;
        let data = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride.0 * w + ox * stride.1;
                    for ky in 0..kernel.0 {
                        for kx in 0..kernel.1 {
                            let idx = base + (oy * stride.0 + ky) * w + ox * stride.1 + kx;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push_op(
            value,
            Op::MaxPool2d(MaxPoolSaved {
                input: input.0,
                argmax,
            }),
            &[input.0],
        ))
    }

    /// `[n, c, h, w] -> [n, c]` maximum over all positions.
    pub fn global_maxpool(&mut self, input: Var) -> Result<Var> {
        let x = self.node_value(input.0);
        let [n, c, h, w] = x.dims4()?;
        if h * w == 0 {
            return Err(shape_err("global_maxpool", "empty spatial extent"));
        }
        let data = x.data();
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for p in 0..n * c {
            let plane = &data[p * h * w..(p + 1) * h * w];
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            out.push(plane[best]);
            argmax.push(p * h * w + best);
        }
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push_op(value, Op::GlobalMaxPool { input: input.0, argmax }, &[input.0]))
    }

    /// `[n, c, h, w] -> [n, c]` mean over all positions.
    pub fn global_avgpool(&mut self, input: Var) -> Result<Var> {
        let x = self.node_value(input.0);
        let [n, c, h, w] = x.dims4()?;
        if h * w == 0 {
            return Err(shape_err("global_avgpool", "empty spatial extent"));
        }
        let inv = T::one() / T::of((h * w) as f64);
        let out = x
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push_op(value, Op::GlobalAvgPool { input: input.0 }, &[input.0]))
    }
}

pub(crate) fn maxpool_backward<T: Real>(tape: &Tape<T>, s: &MaxPoolSaved, g: &[T]) -> Backprop<T> {
    let mut dx = vec![T::zero(); tape.node_value(s.input).numel()];
    for (&i, &gv) in s.argmax.iter().zip(g) {
        dx[i] = dx[i] + gv;
    }
    let mut bp = Backprop::new();
    bp.push(s.input, dx);
    bp
}

pub(crate) fn global_max_backward<T: Real>(
    tape: &Tape<T>,
    input: usize,
    argmax: &[usize],
    g: &[T],
) -> Backprop<T> {
    let mut dx = vec![T::zero(); tape.node_value(input).numel()];
    for (&i, &gv) in argmax.iter().zip(g) {
        dx[i] = gv;
    }
    let mut bp = Backprop::new();
    bp.push(input, dx);
    bp
}

pub(crate) fn global_avg_backward<T: Real>(tape: &Tape<T>, input: usize, g: &[T]) -> Backprop<T> {
    let x = tape.node_value(input);
    let plane = x.shape()[2] * x.shape()[3];
    let inv = T::one() / T::of(plane as f64);
    let dx = g
        .iter()
        .flat_map(|&gv| std::iter::repeat(gv * inv).take(plane))
        .collect();
    let mut bp = Backprop::new();
    bp.push(input, dx);
    bp
}
