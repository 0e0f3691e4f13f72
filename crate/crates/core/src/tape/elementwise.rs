use super::{Backprop, Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Inputs of `log` are clamped from below at this value.
pub const LOG_FLOOR: f64 = 1e-12;

/// `(outer, extent, inner)` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.node_value(input.0).map(|v| v.max(T::zero()));
        self.push_op(value, Op::Relu { input: input.0 }, &[input.0])
    }

    /// Softmax along `axis`, shifted by the maximum for stability.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.node_value(input.0);
        if axis >= x.ndim() {
            return Err(shape_err("softmax", format!("axis {axis} for shape {:?}", x.shape())));
        }
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let data = x.data();
        let mut out = vec![T::zero(); data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| data[at(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..len {
                    let e = (data[at(k)] - max).exp();
                    out[at(k)] = e;
                    total = total + e;
                }
                for k in 0..len {
                    out[at(k)] = out[at(k)] / total;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push_op(value, Op::Softmax { input: input.0, axis }, &[input.0]))
    }

    /// Natural log with the input clamped at [`LOG_FLOOR`].
    pub fn log(&mut self, input: Var) -> Var {
        let floor = T::of(LOG_FLOOR);
        let value = self.node_value(input.0).map(|v| v.max(floor).ln());
        self.push_op(value, Op::Log { input: input.0 }, &[input.0])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let va = self.node_value(a.0);
        let vb = self.node_value(b.0);
        let out = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), out)?;
        Ok(self.push_op(value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let va = self.node_value(a.0);
        let vb = self.node_value(b.0);
        let out = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), out)?;
        Ok(self.push_op(value, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// `sum_i c_i * x_i` over equally shaped inputs.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or_else(|| shape_err("lin_comb", "no terms"))?;
        for &(v, _) in &terms[1..] {
            self.same_shape("lin_comb", first, v)?;
        }
        let shape = self.shape(first).to_vec();
        let mut out = vec![T::zero(); self.node_value(first.0).numel()];
        for &(v, c) in terms {
            let c = T::of(c);
            out.iter_mut()
                .zip(self.node_value(v.0).data())
                .for_each(|(o, &x)| *o = *o + c * x);
        }
        let value = Tensor::new(shape, out)?;
        let inputs: Vec<usize> = terms.iter().map(|(v, _)| v.0).collect();
        let terms = terms.iter().map(|&(v, c)| (v.0, T::of(c))).collect();
        Ok(self.push_op(value, Op::LinComb { terms }, &inputs))
    }

    pub fn scale(&mut self, input: Var, c: f64) -> Var {
        self.lin_comb(&[(input, c)]).expect("single term")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lin_comb(&[(a, 1.0), (b, -1.0)])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.node_value(input.0).data().iter().copied().sum();
        self.push_op(Tensor::scalar(total), Op::Sum { input: input.0 }, &[input.0])
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.node_value(input.0);
        if axis >= x.ndim() || start + len > x.shape()[axis] {
            return Err(shape_err(
                "slice",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, x.shape()),
            ));
        }
        let (outer, extent, inner) = split_axis(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x.data()[(o * extent + start) * inner..][..len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(
            value,
            Op::Slice {
                input: input.0,
                axis,
                start,
            },
            &[input.0],
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let x = self.node_value(v.0);
                let len = x.shape()[axis] * inner;
                out.extend_from_slice(&x.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        Ok(self.push_op(value, Op::Concat { inputs: ids.clone(), axis }, &ids))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.node_value(input.0).clone().reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape { input: input.0 }, &[input.0]))
    }
}

pub(crate) fn relu_backward<T: Real>(tape: &Tape<T>, input: usize, g: &[T]) -> Backprop<T> {
    let x = tape.node_value(input).data();
    let dx = x
        .iter()
        .zip(g)
        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
        .collect();
    let mut bp = Backprop::new();
    bp.push(input, dx);
    bp
}

pub(crate) fn softmax_backward<T: Real>(
    tape: &Tape<T>,
    node: usize,
    input: usize,
    axis: usize,
    g: &[T],
) -> Backprop<T> {
    let y = tape.node_value(node);
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let yd = y.data();
    let mut dx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| g[at(k)] * yd[at(k)]).sum();
            for k in 0..len {
                dx[at(k)] = yd[at(k)] * (g[at(k)] - dot);
            }
        }
    }
    let mut bp = Backprop::new();
    bp.push(input, dx);
    bp
}

pub(crate) fn log_backward<T: Real>(tape: &Tape<T>, input: usize, g: &[T]) -> Backprop<T> {
    let floor = T::of(LOG_FLOOR);
    let x = tape.node_value(input).data();
    let dx = x
        .iter()
        .zip(g)
        .map(|(&v, &gv)| if v > floor { gv / v } else { T::zero() })
        .collect();
    let mut bp = Backprop::new();
    bp.push(input, dx);
    bp
}

pub(crate) fn mul_backward<T: Real>(tape: &Tape<T>, a: usize, b: usize, g: &[T]) -> Backprop<T> {
    let va = tape.node_value(a).data();
    let vb = tape.node_value(b).data();
    let mut bp = Backprop::new();
    if tape.needs_grad(a) {
        bp.push(a, g.iter().zip(vb).map(|(&gv, &y)| gv * y).collect());
    }
    if tape.needs_grad(b) {
        bp.push(b, g.iter().zip(va).map(|(&gv, &x)| gv * x).collect());
    }
    bp
}

pub(crate) fn slice_backward<T: Real>(
    tape: &Tape<T>,
    node: usize,
    input: usize,
    axis: usize,
    start: usize,
    g: &[T],
) -> Backprop<T> {
    let x = tape.node_value(input);
    let len = tape.node_value(node).shape()[axis];
    let (outer, extent, inner) = split_axis(x.shape(), axis);
    let mut dx = vec![T::zero(); x.numel()];
    for o in 0..outer {
        dx[(o * extent + start) * inner..][..len * inner]
            .copy_from_slice(&g[o * len * inner..][..len * inner]);
    }
    let mut bp = Backprop::new();
    bp.push(input, dx);
    bp
}

pub(crate) fn concat_backward<T: Real>(tape: &Tape<T>, inputs: &[usize], axis: usize, g: &[T]) -> Backprop<T> {
    let shape0 = tape.node_value(inputs[0]).shape();
    let outer: usize = shape0[..axis].iter().product();
    let inner: usize = shape0[axis + 1..].iter().product();
    let total: usize = inputs.iter().map(|&i| tape.node_value(i).shape()[axis]).sum();
    let mut bp = Backprop::new();
    let mut offset = 0;
    for &i in inputs {
        let len = tape.node_value(i).shape()[axis];
        let mut dx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            dx.extend_from_slice(&g[(o * total + offset) * inner..][..len * inner]);
        }
        offset += len;
        bp.push(i, dx);
    }
    bp
}
