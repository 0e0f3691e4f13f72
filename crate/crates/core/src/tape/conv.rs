//! Convolution by patch unrolling, and the dense linear layer.
//!
//! A convolution over a batch unrolls every receptive field into one column
//! of a `[in_c * kh * kw, n * out_h * out_w]` matrix and multiplies it by the
//! `[out_c, in_c * kh * kw]` weight matrix. The product has exactly
//! `conv_mults` scalar multiplications per sample.

use rayon::prelude::*;

use super::{Backprop, Op, Tape, Var};
use crate::cost::conv_mults;
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Shapes of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 4],
        out_c: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Self> {
        let [batch, in_c, in_h, in_w] = input;
        if stride.0 == 0 || stride.1 == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(shape_err("conv2d", "kernel and stride must be positive"));
        }
        let padded_h = in_h + 2 * pad.0;
        let padded_w = in_w + 2 * pad.1;
        if padded_h < kernel.0 || padded_w < kernel.1 {
            return Err(shape_err(
                "conv2d",
                format!(
                    "{}x{} kernel does not fit a {in_h}x{in_w} input padded by {:?}",
                    kernel.0, kernel.1, pad
                ),
            ));
        }
        Ok(ConvGeometry {
            batch,
            in_c,
            in_h,
            in_w,
            out_c,
            kernel,
            stride,
            pad,
            out_h: (padded_h - kernel.0) / stride.0 + 1,
            out_w: (padded_w - kernel.1) / stride.1 + 1,
        })
    }

    fn rows(&self) -> usize {
        self.in_c * self.kernel.0 * self.kernel.1
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Multiplications for the forward product over the whole batch.
    pub fn mults(&self) -> u64 {
        self.batch as u64
            * conv_mults(
                self.in_c,
                self.out_c,
                self.kernel,
                (self.out_h, self.out_w),
            )
    }
}

pub(crate) struct ConvSaved<T> {
    input: usize,
    weight: usize,
    bias: Option<usize>,
    geom: ConvGeometry,
    cols: Vec<T>,
}

fn im2col<T: Real>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let l = g.positions();
    let width = g.batch * l;
    let (kh, kw) = g.kernel;
    let mut cols = vec![T::zero(); g.rows() * width];
    cols.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        let c = r / (kh * kw);
        let ky = (r / kw) % kh;
        let kx = r % kw;
        for n in 0..g.batch {
            let plane = &x[(n * g.in_c + c) * g.in_h * g.in_w..][..g.in_h * g.in_w];
            let dst = &mut row[n * l..(n + 1) * l];
            for oy in 0..g.out_h {
                let iy = (oy * g.stride.0 + ky) as isize - g.pad.0 as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                let src_row = &plane[iy as usize * g.in_w..][..g.in_w];
                for ox in 0..g.out_w {
                    let ix = (ox * g.stride.1 + kx) as isize - g.pad.1 as isize;
                    if ix >= 0 && ix < g.in_w as isize {
                        dst[oy * g.out_w + ox] = src_row[ix as usize];
                    }
                }
            }
        }
    });
    cols
}

fn col2im<T: Real>(dcols: &[T], g: &ConvGeometry) -> Vec<T> {
    let l = g.positions();
    let width = g.batch * l;
    let (kh, kw) = g.kernel;
    let plane_len = g.in_h * g.in_w;
    let mut dx = vec![T::zero(); g.batch * g.in_c * plane_len];
    dx.par_chunks_mut(plane_len).enumerate().for_each(|(p, plane)| {
        let n = p / g.in_c;
        let c = p % g.in_c;
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (c * kh + ky) * kw + kx;
                let src = &dcols[r * width + n * l..][..l];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride.0 + ky) as isize - g.pad.0 as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride.1 + kx) as isize - g.pad.1 as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            let dst = &mut plane[iy as usize * g.in_w + ix as usize];
                            *dst = *dst + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    });
    dx
}

impl<T: Real> Tape<T> {
    /// 2-d convolution of `[n, c, h, w]` input with `[out_c, c, kh, kw]` weights.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let x = self.node_value(input.0);
        let w = self.node_value(weight.0);
        let dims = x.dims4()?;
        let [out_c, wc, kh, kw] = w.dims4()?;
        if wc != dims[1] {
            return Err(shape_err(
                "conv2d",
                format!("input has {} channels, weight expects {wc}", dims[1]),
            ));
        }
        if let Some(b) = bias {
            if self.node_value(b.0).numel() != out_c {
                return Err(shape_err("conv2d", "bias length differs from out channels"));
            }
        }
        let geom = ConvGeometry::new(dims, out_c, (kh, kw), stride, pad)?;
        let cols = im2col(x.data(), &geom);
        let l = geom.positions();
        let width = geom.batch * l;
        let k = geom.rows();
        let mut y = vec![T::zero(); out_c * width];
        T::gemm(
            out_c,
            k,
            width,
            T::one(),
            w.data(),
            (k as isize, 1),
            &cols,
            (width as isize, 1),
            T::zero(),
            &mut y,
            (width as isize, 1),
        );
        debug_assert_eq!((out_c * k * width) as u64, geom.mults());
        let bias_data = bias.map(|b| self.node_value(b.0).data().to_vec());
        let mut out = vec![T::zero(); geom.batch * out_c * l];
        for n in 0..geom.batch {
            for oc in 0..out_c {
                let b = bias_data.as_ref().map_or(T::zero(), |b| b[oc]);
                let src = &y[oc * width + n * l..][..l];
                let dst = &mut out[(n * out_c + oc) * l..][..l];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
        let value = Tensor::new(vec![geom.batch, out_c, geom.out_h, geom.out_w], out)?;
        self.count_forward(geom.mults());
        let mut inputs = vec![input.0, weight.0];
        inputs.extend(bias.map(|b| b.0));
        let saved = ConvSaved {
            input: input.0,
            weight: weight.0,
            bias: bias.map(|b| b.0),
            geom,
            cols,
        };
        Ok(self.push_op(value, Op::Conv2d(saved), &inputs))
    }

    /// `[n, in] x [out, in]^T + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.node_value(input.0);
        let w = self.node_value(weight.0);
        let (n, fin) = match x.shape()[..] {
            [n, f] => (n, f),
            _ => return Err(shape_err("linear", format!("input shape {:?}", x.shape()))),
        };
        let (fout, win) = match w.shape()[..] {
            [o, i] => (o, i),
            _ => return Err(shape_err("linear", format!("weight shape {:?}", w.shape()))),
        };
        if win != fin {
            return Err(shape_err(
                "linear",
                format!("input has {fin} features, weight expects {win}"),
            ));
        }
        let mut y = vec![T::zero(); n * fout];
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            x.data(),
            (fin as isize, 1),
            w.data(),
            (1, fin as isize),
            T::zero(),
            &mut y,
            (fout as isize, 1),
        );
        if let Some(b) = bias {
            let b = self.node_value(b.0);
            if b.numel() != fout {
                return Err(shape_err("linear", "bias length differs from out features"));
            }
            for row in y.chunks_mut(fout) {
                row.iter_mut().zip(b.data()).for_each(|(v, &bb)| *v = *v + bb);
            }
        }
        let value = Tensor::new(vec![n, fout], y)?;
        self.count_forward((n * fin * fout) as u64);
        let mut inputs = vec![input.0, weight.0];
        inputs.extend(bias.map(|b| b.0));
        Ok(self.push_op(
            value,
            Op::Linear {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
            },
            &inputs,
        ))
    }
}

pub(crate) fn conv2d_backward<T: Real>(tape: &Tape<T>, s: &ConvSaved<T>, g: &[T]) -> Backprop<T> {
    let geom = &s.geom;
    let l = geom.positions();
    let width = geom.batch * l;
    let k = geom.rows();
    let oc = geom.out_c;
    // [n, oc, l] -> [oc, n * l]
    let mut gt = vec![T::zero(); oc * width];
    for n in 0..geom.batch {
        for c in 0..oc {
            gt[c * width + n * l..][..l].copy_from_slice(&g[(n * oc + c) * l..][..l]);
        }
    }
    let mut bp = Backprop::new();
    if tape.needs_grad(s.weight) {
        let mut dw = vec![T::zero(); oc * k];
        T::gemm(
            oc,
            width,
            k,
            T::one(),
            &gt,
            (width as isize, 1),
            &s.cols,
            (1, width as isize),
            T::zero(),
            &mut dw,
            (k as isize, 1),
        );
        bp.mults += geom.mults();
        bp.push(s.weight, dw);
    }
    if let Some(b) = s.bias {
        if tape.needs_grad(b) {
            let db = (0..oc)
                .map(|c| gt[c * width..(c + 1) * width].iter().copied().sum())
                .collect();
            bp.push(b, db);
        }
    }
    if tape.needs_grad(s.input) {
        let w = tape.node_value(s.weight).data();
        let mut dcols = vec![T::zero(); k * width];
        T::gemm(
            k,
            oc,
            width,
            T::one(),
            w,
            (1, k as isize),
            &gt,
            (width as isize, 1),
            T::zero(),
            &mut dcols,
            (width as isize, 1),
        );
        bp.mults += geom.mults();
        bp.push(s.input, col2im(&dcols, geom));
    }
    bp
}

pub(crate) fn linear_backward<T: Real>(
    tape: &Tape<T>,
    input: usize,
    weight: usize,
    bias: Option<usize>,
    g: &[T],
) -> Backprop<T> {
    let x = tape.node_value(input);
    let w = tape.node_value(weight);
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    let mut bp = Backprop::new();
    if tape.needs_grad(input) {
        let mut dx = vec![T::zero(); n * fin];
        T::gemm(
            n,
            fout,
            fin,
            T::one(),
            g,
            (fout as isize, 1),
            w.data(),
            (fin as isize, 1),
            T::zero(),
            &mut dx,
            (fin as isize, 1),
        );
        bp.mults += (n * fin * fout) as u64;
        bp.push(input, dx);
    }
    if tape.needs_grad(weight) {
        let mut dw = vec![T::zero(); fout * fin];
        T::gemm(
            fout,
            n,
            fin,
            T::one(),
            g,
            (1, fout as isize),
            x.data(),
            (fin as isize, 1),
            T::zero(),
            &mut dw,
            (fin as isize, 1),
        );
        bp.mults += (n * fin * fout) as u64;
        bp.push(weight, dw);
    }
    if let Some(b) = bias {
        if tape.needs_grad(b) {
            let mut db = vec![T::zero(); fout];
            for row in g.chunks(fout) {
                db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
            }
            bp.push(b, db);
        }
    }
    bp
}
