//! Central finite-difference checks of tape gradients.
//!
//! The checked function builds a scalar from leaf tensors on a fresh tape.
//! Analytic gradients come from one backward pass; numeric ones from
//! `(f(x + h) - f(x - h)) / 2h` with every evaluation rebuilding the graph.
//! The error of one input is `|a - n| / max(|a|, |n|, 1e-8)` with Euclidean
//! norms taken over the checked coordinates.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{ActShape, LayerStack, Mode};
use crate::tape::{Primitive, Tape, Var};
use crate::tensor::Tensor;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Relative error per input tensor.
    pub errors: Vec<f64>,
    /// Number of coordinates compared per input.
    pub checked: Vec<usize>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares analytic and numeric gradients of `f` with respect to every
/// input flagged in `differentiate`. At most `max_coords` randomly chosen
/// coordinates of each input are perturbed.
pub fn check<F, R>(
    inputs: &[Tensor<f64>],
    differentiate: &[bool],
    f: F,
    h: f64,
    max_coords: usize,
    rng: &mut R,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    R: Rng,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(differentiate)
        .map(|(x, &d)| tape.leaf(x.clone().with_requires_grad(d)))
        .collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out, &[])?;

    let mut report = GradCheck {
        errors: Vec::new(),
        checked: Vec::new(),
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, (&var, &d)) in vars.iter().zip(differentiate).enumerate() {
        if !d {
            continue;
        }
        let numel = inputs[idx].numel();
        let analytic = tape.grad(var).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; numel]);
        let coords: Vec<usize> = if numel <= max_coords {
            (0..numel).collect()
        } else {
            sample(rng, numel, max_coords).into_vec()
        };
        let mut diff = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        for &c in &coords {
            let orig = work[idx].data()[c];
            work[idx].data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work[idx].data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work[idx].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            diff += (analytic[c] - numeric).powi(2);
            norm_a += analytic[c].powi(2);
            norm_n += numeric.powi(2);
        }
        let denom = norm_a.sqrt().max(norm_n.sqrt()).max(1e-8);
        report.errors.push(diff.sqrt() / denom);
        report.checked.push(coords.len());
    }
    Ok(report)
}

/// Uniform random tensor with entries in `[lo, hi)`.
pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// `sum(weights * y)`: a scalar whose gradient with respect to `y` is the
/// fixed random `weights`.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

/// Checks one primitive on random inputs drawn from `[-2, 2)`; the scalar
/// objective is a random weighting of the primitive's output.
pub fn check_primitive(
    prim: &Primitive,
    shapes: &[Vec<usize>],
    h: f64,
    max_coords: usize,
    rng: &mut impl Rng,
) -> Result<GradCheck> {
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| uniform(s, -2.0, 2.0, rng)).collect();
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = tape.apply(prim, &vars)?;
        tape.shape(y).to_vec()
    };
    let weights = uniform(&out_shape, -1.0, 1.0, rng);
    let all = vec![true; inputs.len()];
    check(
        &inputs,
        &all,
        |tape, vars| {
            let y = tape.apply(prim, vars)?;
            weighted_sum(tape, y, &weights)
        },
        h,
        max_coords,
        rng,
    )
}

/// Representative attribute and shape choices covering every [`Primitive`].
pub fn primitive_cases() -> Vec<(Primitive, Vec<Vec<usize>>)> {
    vec![
        (
            Primitive::Conv2d { stride: (1, 1), pad: (1, 1) },
            vec![vec![2, 3, 6, 6], vec![4, 3, 3, 3], vec![4]],
        ),
        (
            Primitive::Conv2d { stride: (2, 1), pad: (0, 1) },
            vec![vec![2, 2, 7, 5], vec![3, 2, 3, 2], vec![3]],
        ),
        (Primitive::Linear, vec![vec![3, 5], vec![4, 5], vec![4]]),
        (
            Primitive::MaxPool2d { kernel: (2, 2), stride: (2, 2) },
            vec![vec![2, 3, 6, 6]],
        ),
        (Primitive::AvgPoolGlobal, vec![vec![2, 3, 4, 5]]),
        (Primitive::MaxPoolGlobal, vec![vec![2, 3, 4, 5]]),
        (Primitive::Relu, vec![vec![2, 3, 4, 4]]),
        (Primitive::Softmax { axis: 1 }, vec![vec![3, 5]]),
        (Primitive::Softmax { axis: 1 }, vec![vec![2, 4, 3, 3]]),
        (Primitive::BatchNorm, vec![vec![4, 3, 3, 3], vec![3], vec![3]]),
        (Primitive::Dropout { rate: 0.3, seed: 7 }, vec![vec![2, 3, 4, 4]]),
        (Primitive::Add, vec![vec![3, 4], vec![3, 4]]),
        (Primitive::Mul, vec![vec![3, 4], vec![3, 4]]),
        (
            Primitive::LinearCombination { coeffs: vec![0.5, -2.0, 1.5] },
            vec![vec![3, 4], vec![3, 4], vec![3, 4]],
        ),
        (Primitive::Log, vec![vec![3, 4]]),
        (Primitive::Sum, vec![vec![2, 3, 4]]),
        (Primitive::Slice { axis: 1, start: 1, len: 2 }, vec![vec![2, 4, 3]]),
        (Primitive::Pad { pads: [1, 2, 0, 1] }, vec![vec![2, 2, 3, 3]]),
        (Primitive::Concat { axis: 1 }, vec![vec![2, 2, 3], vec![2, 3, 3]]),
        (
            Primitive::ResizeBilinear { height: 5, width: 7 },
            vec![vec![1, 2, 4, 3]],
        ),
    ]
}

/// Smallest square input giving at least a 2x2 output map, or any valid
/// output for stacks that pool globally.
pub fn smallest_input(stack: &LayerStack<f64>) -> Result<(usize, usize)> {
    (2..512)
        .find(|&s| match stack.output_shape(s, s) {
            Ok(ActShape::Map { h, w, .. }) => h >= 2 && w >= 2,
            Ok(ActShape::Flat { .. }) => true,
            Err(_) => false,
        })
        .map(|s| (s, s))
        .ok_or_else(|| Error::Geometry(format!("stack `{}` accepts no square input", stack.name())))
}

fn stack_objective(stack: &LayerStack<f64>, x: &Tensor<f64>, weights: &Tensor<f64>, seed: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = stack.forward(&mut tape, v, Mode::Train { seed })?;
    let s = weighted_sum(&mut tape, out.output, weights)?;
    Ok(tape.value(s).item())
}

fn shifted(stack: &LayerStack<f64>, x: &Tensor<f64>, dirs: &[Tensor<f64>], t: f64) -> (LayerStack<f64>, Tensor<f64>) {
    let mut s = stack.clone();
    for (p, d) in s.params_mut().iter_mut().zip(&dirs[1..]) {
        p.value.data_mut().iter_mut().zip(d.data()).for_each(|(v, dv)| *v += t * dv);
    }
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(dirs[0].data()).for_each(|(v, dv)| *v += t * dv);
    (s, y)
}

/// Directional check of a whole stack in train mode: for each trial a
/// random batch of 3 inputs, a random output weighting and a random
/// unit-norm direction over (input, parameters). Returns the worst
/// relative error between the analytic and central-difference directional
/// derivatives.
pub fn check_stack(stack: &LayerStack<f64>, trials: usize, h: f64, rng: &mut impl Rng) -> Result<f64> {
    let (height, width) = smallest_input(stack)?;
    let shape = [3, stack.in_channels(), height, width];
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = uniform(&shape, 0.0, 1.0, rng);
        let seed = rng.gen();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone().with_requires_grad(true));
        let out = stack.forward(&mut tape, xv, Mode::Train { seed })?;
        let weights = uniform(tape.shape(out.output), -1.0, 1.0, rng);
        let s = weighted_sum(&mut tape, out.output, &weights)?;
        tape.backward(s, &[])?;

        let mut dirs = vec![uniform(&shape, -1.0, 1.0, rng)];
        dirs.extend(stack.params().iter().map(|p| uniform(p.value.shape(), -1.0, 1.0, rng)));
        let norm = dirs.iter().flat_map(|d| d.data()).map(|v| v * v).sum::<f64>().sqrt();
        let dirs: Vec<Tensor<f64>> = dirs.iter().map(|d| d.map(|v| v / norm)).collect();
        let analytic: f64 = std::iter::once(xv)
            .chain(out.params.iter().copied())
            .zip(&dirs)
            .map(|(v, d)| match tape.grad(v) {
                Some(g) => g.iter().zip(d.data()).map(|(a, b)| a * b).sum(),
                None => 0.0,
            })
            .sum();

        let (sp, xp) = shifted(stack, &x, &dirs, h);
        let (sm, xm) = shifted(stack, &x, &dirs, -h);
        let numeric = (stack_objective(&sp, &xp, &weights, seed)? - stack_objective(&sm, &xm, &weights, seed)?) / (2.0 * h);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
