use std::collections::HashSet;

use super::{Backprop, Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// A grid cell of one sample in a batch of feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub sample: usize,
    pub row: usize,
    pub col: usize,
}

impl Site {
    pub fn new(sample: usize, row: usize, col: usize) -> Self {
        Site { sample, row, col }
    }
}

/// Interpolation taps of one output coordinate (half-pixel centres).
fn taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn check_sites(sites: &[Site], n: usize, h: usize, w: usize) -> Result<()> {
    for s in sites {
        if s.sample >= n {
            return Err(shape_err("site", format!("sample {} >= batch {n}", s.sample)));
        }
        if s.row >= h || s.col >= w {
            return Err(Error::OutOfGrid {
                i: s.row,
                j: s.col,
                rows: h,
                cols: w,
            });
        }
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    /// Zero padding of a `[n, c, h, w]` tensor by `[top, bottom, left, right]`.
    pub fn pad(&mut self, input: Var, pads: [usize; 4]) -> Result<Var> {
        let x = self.node_value(input.0);
        let [n, c, h, w] = x.dims4()?;
        let (oh, ow) = (h + pads[0] + pads[1], w + pads[2] + pads[3]);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..h {
                let src = &x.data()[(p * h + y) * w..][..w];
                out[(p * oh + y + pads[0]) * ow + pads[2]..][..w].copy_from_slice(src);
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push_op(value, Op::Pad { input: input.0, pads }, &[input.0]))
    }

    /// Bilinear resampling of the spatial extents to `out_h x out_w`.
    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let x = self.node_value(input.0);
        let [n, c, h, w] = x.dims4()?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(shape_err("resize_bilinear", "zero extent"));
        }
        let ty = taps(out_h, h);
        let tx = taps(out_w, w);
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for p in 0..n * c {
            let plane = &x.data()[p * h * w..(p + 1) * h * w];
            for &(y0, y1, fy) in &ty {
                for &(x0, x1, fx) in &tx {
                    let (fy, fx) = (T::of(fy), T::of(fx));
                    let one = T::one();
                    let top = plane[y0 * w + x0] * (one - fx) + plane[y0 * w + x1] * fx;
                    let bottom = plane[y1 * w + x0] * (one - fx) + plane[y1 * w + x1] * fx;
                    out.push(top * (one - fy) + bottom * fy);
                }
            }
        }
        let value = Tensor::new(vec![n, c, out_h, out_w], out)?;
        Ok(self.push_op(value, Op::Resize { input: input.0 }, &[input.0]))
    }

    /// Channel vectors of `[n, c, h, w]` at the given sites, as `[sites, c]`.
    pub fn gather(&mut self, input: Var, sites: &[Site]) -> Result<Var> {
        let x = self.node_value(input.0);
        let [n, c, h, w] = x.dims4()?;
        check_sites(sites, n, h, w)?;
        let mut out = Vec::with_capacity(sites.len() * c);
        for s in sites {
            for ch in 0..c {
                out.push(x.data()[((s.sample * c + ch) * h + s.row) * w + s.col]);
            }
        }
        let value = Tensor::new(vec![sites.len(), c], out)?;
        Ok(self.push_op(
            value,
            Op::Gather {
                input: input.0,
                sites: sites.to_vec(),
            },
            &[input.0],
        ))
    }

    /// Copy of `base` whose vectors at `sites` are replaced by the rows of
    /// `src` (`[sites, c]` or `[sites, c, 1, 1]`).
    pub fn swap_in(&mut self, base: Var, src: Var, sites: &[Site]) -> Result<Var> {
        let b = self.node_value(base.0);
        let [n, c, h, w] = b.dims4()?;
        check_sites(sites, n, h, w)?;
        let s = self.node_value(src.0);
        let rows = s.shape().first().copied().unwrap_or(0);
        if rows != sites.len() || s.numel() != sites.len() * c {
            return Err(shape_err(
                "swap_in",
                format!("{} sites of {c} channels, source shape {:?}", sites.len(), s.shape()),
            ));
        }
        let mut seen = HashSet::new();
        for site in sites {
            if !seen.insert(*site) {
                return Err(Error::DuplicatePosition(site.row, site.col));
            }
        }
        let mut out = b.data().to_vec();
        for (p, site) in sites.iter().enumerate() {
            for ch in 0..c {
                out[((site.sample * c + ch) * h + site.row) * w + site.col] = s.data()[p * c + ch];
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push_op(
            value,
            Op::SwapIn {
                base: base.0,
                src: src.0,
                sites: sites.to_vec(),
            },
            &[base.0, src.0],
        ))
    }
}

pub(crate) fn pad_backward<T: Real>(tape: &Tape<T>, input: usize, pads: [usize; 4], g: &[T]) -> Backprop<T> {
    let x = tape.node_value(input);
    let [n, c, h, w] = x.dims4().expect("4-d");
    let (oh, ow) = (h + pads[0] + pads[1], w + pads[2] + pads[3]);
    let mut dx = Vec::with_capacity(x.numel());
    for p in 0..n * c {
        for y in 0..h {
            dx.extend_from_slice(&g[(p * oh + y + pads[0]) * ow + pads[2]..][..w]);
        }
    }
    let mut bp = Backprop::new();
    bp.push(input, dx);
    bp
}

pub(crate) fn resize_backward<T: Real>(tape: &Tape<T>, node: usize, input: usize, g: &[T]) -> Backprop<T> {
    let x = tape.node_value(input);
    let [n, c, h, w] = x.dims4().expect("4-d");
    let out_shape = tape.node_value(node).shape();
    let (out_h, out_w) = (out_shape[2], out_shape[3]);
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let mut dx = vec![T::zero(); x.numel()];
    let one = T::one();
    for p in 0..n * c {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        let gp = &g[p * out_h * out_w..];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let gv = gp[oy * out_w + ox];
                let (fy, fx) = (T::of(fy), T::of(fx));
                plane[y0 * w + x0] = plane[y0 * w + x0] + gv * (one - fy) * (one - fx);
                plane[y0 * w + x1] = plane[y0 * w + x1] + gv * (one - fy) * fx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + gv * fy * (one - fx);
                plane[y1 * w + x1] = plane[y1 * w + x1] + gv * fy * fx;
            }
        }
    }
    let mut bp = Backprop::new();
    bp.push(input, dx);
    bp
}

pub(crate) fn gather_backward<T: Real>(tape: &Tape<T>, input: usize, sites: &[Site], g: &[T]) -> Backprop<T> {
    let x = tape.node_value(input);
    let [_, c, h, w] = x.dims4().expect("4-d");
    let mut dx = vec![T::zero(); x.numel()];
    for (p, s) in sites.iter().enumerate() {
        for ch in 0..c {
            let i = ((s.sample * c + ch) * h + s.row) * w + s.col;
            dx[i] = dx[i] + g[p * c + ch];
        }
    }
    let mut bp = Backprop::new();
    bp.push(input, dx);
    bp
}

pub(crate) fn swap_in_backward<T: Real>(
    tape: &Tape<T>,
    base: usize,
    src: usize,
    sites: &[Site],
    g: &[T],
) -> Backprop<T> {
    let b = tape.node_value(base);
    let [_, c, h, w] = b.dims4().expect("4-d");
    let mut dbase = g.to_vec();
    let mut dsrc = vec![T::zero(); sites.len() * c];
    for (p, s) in sites.iter().enumerate() {
        for ch in 0..c {
            let i = ((s.sample * c + ch) * h + s.row) * w + s.col;
            dsrc[p * c + ch] = g[i];
            dbase[i] = T::zero();
        }
    }
    let mut bp = Backprop::new();
    bp.push(base, dbase);
    bp.push(src, dsrc);
    bp
}
