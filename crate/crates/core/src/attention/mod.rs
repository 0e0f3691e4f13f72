//! Entropy-gradient hard attention: saliency, position selection, patch
//! extraction and swap-in assembly.

mod model;

pub use model::{DcnModel, DcnOutput, HeadKind, InferMode, Selection};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::nn::ReceptiveField;
use crate::tape::{Site, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Allowed deviation of a distribution's sum from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Shannon entropy in nats, `0 log 0 = 0`, without validation.
pub fn entropy_unchecked(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Shannon entropy of a probability vector.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    let sum: f64 = dist.iter().sum();
    if dist.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::NotNormalized { sum });
    }
    Ok(entropy_unchecked(dist))
}

/// `-sum p log p` over channels `[start, start + len)` of `probs`
/// (`[n, c]`), summed over the batch.
pub fn entropy_on_tape<T: Real>(tape: &mut Tape<T>, probs: Var, start: usize, len: usize) -> Result<Var> {
    let p = tape.slice(probs, 1, start, len)?;
    let logp = tape.log(p);
    let plogp = tape.mul(p, logp)?;
    let total = tape.sum(plogp);
    Ok(tape.scale(total, -1.0))
}

/// Tensor the saliency gradient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradSource {
    /// The coarse representation vectors fed to the top layers.
    CoarseVectors,
    /// The pre-softmax map of a stack ending in a softmax head.
    LayerBelowOutput,
}

/// Gradient-norm saliency over one example's coarse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, non-negative.
    pub values: Vec<f64>,
    pub source: GradSource,
}

impl SaliencyMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, source: GradSource) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape {
                op: "saliency map",
                detail: format!("{} values for a {rows}x{cols} grid", values.len()),
            });
        }
        Ok(SaliencyMap {
            rows,
            cols,
            values,
            source,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// Per-position Euclidean norms over channels of a `[n, c, h, w]`
    /// gradient, one map per sample.
    pub fn from_gradient<T: Real>(grad: &[T], shape: &[usize], source: GradSource) -> Result<Vec<Self>> {
        let [n, c, h, w] = match *shape {
            [n, c, h, w] => [n, c, h, w],
            _ => {
                return Err(Error::Shape {
                    op: "saliency map",
                    detail: format!("gradient shape {shape:?}"),
                })
            }
        };
        let plane = h * w;
        (0..n)
            .map(|s| {
                let values = (0..plane)
                    .map(|p| {
                        (0..c)
                            .map(|ch| grad[(s * c + ch) * plane + p].f64().powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                SaliencyMap::new(h, w, values, source)
            })
            .collect()
    }
}

/// Backward pass from the scalar `entropy` that stops at `source`
/// (`[n, D, rows, cols]`); the saliency of a position is the norm of the
/// gradient over the `D` channels there.
pub fn saliency_map<T: Real>(tape: &mut Tape<T>, source: Var, entropy: Var, kind: GradSource) -> Result<Vec<SaliencyMap>> {
    tape.backward(entropy, &[source])?;
    let shape = tape.shape(source).to_vec();
    match tape.grad(source) {
        Some(g) => SaliencyMap::from_gradient(g, &shape, kind),
        None => SaliencyMap::from_gradient(&vec![T::zero(); tape.value(source).numel()], &shape, kind),
    }
}

/// The `k` positions with the largest saliency in descending order; equal
/// values keep row-major order.
pub fn select_topk(map: &SaliencyMap, k: usize) -> Result<Vec<(usize, usize)>> {
    let total = map.rows * map.cols;
    if k > total {
        return Err(Error::KOutOfRange { k, max: total });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
    Ok(order[..k].iter().map(|&p| (p / map.cols, p % map.cols)).collect())
}

/// Placement of fine-stack input patches around coarse receptive fields.
///
/// `context` pixels are added to each axis of the receptive field,
/// `ceil(context / 2)` before and the rest after, so a context of 3 around
/// an 11x11 field gives 14x14 patches. Patches crossing the image border are
/// shifted inward, which moves them by at most `context` pixels relative to
/// the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub field: ReceptiveField,
    pub context: usize,
    pub image: (usize, usize),
}

impl PatchGeometry {
    pub fn new(field: ReceptiveField, context: usize, image: (usize, usize)) -> Result<Self> {
        let g = PatchGeometry { field, context, image };
        let (ph, pw) = g.patch_size();
        if ph > image.0 || pw > image.1 {
            return Err(Error::PatchTooLarge {
                patch_h: ph,
                patch_w: pw,
                image_h: image.0,
                image_w: image.1,
            });
        }
        Ok(g)
    }

    pub fn patch_size(&self) -> (usize, usize) {
        let (h, w) = self.field.size();
        (h + self.context, w + self.context)
    }

    /// Zero padding `[top, bottom, left, right]` that gives the full fine
    /// model the same context as the patches.
    pub fn padding(&self) -> [usize; 4] {
        let before = self.context.div_ceil(2);
        let after = self.context / 2;
        [before, after, before, after]
    }

    /// Top-left corner of the patch for grid position `(i, j)`.
    pub fn origin(&self, i: usize, j: usize) -> (usize, usize) {
        let (ph, pw) = self.patch_size();
        let before = self.context.div_ceil(2) as isize;
        let rect = self.field.rect(i, j);
        let place = |start: isize, size: usize, extent: usize| (start - before).clamp(0, (extent - size) as isize) as usize;
        (place(rect.top, ph, self.image.0), place(rect.left, pw, self.image.1))
    }
}

/// Selected positions of one example with the matching input crops.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T> {
    pub positions: Vec<(usize, usize)>,
    /// `(top, left)` of every crop.
    pub origins: Vec<(usize, usize)>,
    pub size: (usize, usize),
    pub context: usize,
    /// `[k, c, height, width]`.
    pub patches: Tensor<T>,
}

/// Crops the patches of `positions` from sample `sample` of `images`
/// (`[n, c, h, w]`).
pub fn extract_patches<T: Real>(
    images: &Tensor<T>,
    sample: usize,
    positions: &[(usize, usize)],
    geometry: &PatchGeometry,
    grid: (usize, usize),
) -> Result<PatchSet<T>> {
    let [n, c, h, w] = images.dims4()?;
    if sample >= n {
        return Err(Error::Invalid(format!("sample {sample} of a batch of {n}")));
    }
    if (h, w) != geometry.image {
        return Err(Error::Geometry(format!(
            "image {h}x{w} differs from the patch geometry's {:?}",
            geometry.image
        )));
    }
    let (ph, pw) = geometry.patch_size();
    let mut data = Vec::with_capacity(positions.len() * c * ph * pw);
    let mut origins = Vec::with_capacity(positions.len());
    let src = images.data();
    for &(i, j) in positions {
        if i >= grid.0 || j >= grid.1 {
            return Err(Error::OutOfGrid {
                i,
                j,
                rows: grid.0,
                cols: grid.1,
            });
        }
        let (top, left) = geometry.origin(i, j);
        origins.push((top, left));
        for ch in 0..c {
            for y in top..top + ph {
                let row = ((sample * c + ch) * h + y) * w;
                data.extend_from_slice(&src[row + left..row + left + pw]);
            }
        }
    }
    Ok(PatchSet {
        positions: positions.to_vec(),
        origins,
        size: (ph, pw),
        context: geometry.context,
        patches: Tensor::new(vec![positions.len(), c, ph, pw], data)?,
    })
}

/// Representation mixing coarse and fine vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedMap {
    pub repr: Var,
    /// `true` where the vector came from the fine stack; `[n, rows, cols]`
    /// row-major.
    pub fine_mask: Vec<bool>,
}

/// Replaces the coarse vectors at `sites` by the rows of `fine`
/// (`[k, D]` or `[k, D, 1, 1]`).
pub fn assemble_refined<T: Real>(tape: &mut Tape<T>, coarse: Var, fine: Var, sites: &[Site]) -> Result<RefinedMap> {
    let [n, d, h, w] = match *tape.shape(coarse) {
        [n, d, h, w] => [n, d, h, w],
        ref s => {
            return Err(Error::Shape {
                op: "assemble_refined",
                detail: format!("coarse map shape {s:?}"),
            })
        }
    };
    let fshape = tape.shape(fine).to_vec();
    let fd = fshape.get(1).copied().unwrap_or(0);
    if fd != d || fshape.iter().skip(2).any(|&e| e != 1) {
        return Err(Error::Shape {
            op: "assemble_refined",
            detail: format!("fine vectors {fshape:?} do not match dimension {d}"),
        });
    }
    let mut seen = HashSet::new();
    for s in sites {
        if !seen.insert(*s) {
            return Err(Error::DuplicatePosition(s.row, s.col));
        }
    }
    let repr = tape.swap_in(coarse, fine, sites)?;
    let mut fine_mask = vec![false; n * h * w];
    for s in sites {
        fine_mask[(s.sample * h + s.row) * w + s.col] = true;
    }
    Ok(RefinedMap { repr, fine_mask })
}
