//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and whatever the
//! backward rule needs. Node indices are a topological order, so a reverse
//! sweep visits each node once after all of its consumers.

mod conv;
mod elementwise;
mod norm;
mod pool;
mod primitive;
mod spatial;

use std::collections::HashSet;
use std::sync::Arc;

use crate::cost::{OpCounter, Pass};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use conv::ConvGeometry;
pub use norm::{BatchStats, BnMode};
pub use primitive::Primitive;
pub use spatial::Site;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d(conv::ConvSaved<T>),
    Linear {
        input: usize,
        weight: usize,
        bias: Option<usize>,
    },
    MaxPool2d(pool::MaxPoolSaved),
    GlobalMaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: usize,
    },
    BatchNorm(norm::BatchNormSaved<T>),
    Dropout {
        input: usize,
        mask: Vec<T>,
    },
    Relu {
        input: usize,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    Log {
        input: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    LinComb {
        terms: Vec<(usize, T)>,
    },
    Sum {
        input: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Reshape {
        input: usize,
    },
    Pad {
        input: usize,
        pads: [usize; 4],
    },
    Resize {
        input: usize,
    },
    Gather {
        input: usize,
        sites: Vec<Site>,
    },
    SwapIn {
        base: usize,
        src: usize,
        sites: Vec<Site>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    scope: Option<Arc<str>>,
}

/// Gradient contributions produced by one backward rule.
pub(crate) struct Backprop<T> {
    grads: Vec<(usize, Vec<T>)>,
    mults: u64,
}

impl<T> Backprop<T> {
    fn new() -> Self {
        Backprop {
            grads: Vec::new(),
            mults: 0,
        }
    }

    fn push(&mut self, input: usize, grad: Vec<T>) {
        self.grads.push((input, grad));
    }
}

/// A recording of one forward episode.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    counter: OpCounter,
    phase: String,
    scope: Option<Arc<str>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            counter: OpCounter::new(),
            phase: String::from("main"),
            scope: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Phase label charged by subsequent multiplication counts.
    pub fn set_phase(&mut self, phase: &str) {
        self.phase = phase.to_string();
    }

    pub fn phase(&self) -> &str {
        &self.phase
    }

    /// Layer label attached to nodes created from now on.
    pub fn set_scope(&mut self, scope: Option<&str>) {
        self.scope = scope.map(Arc::from);
    }

    /// Current layer label.
    pub fn scope_label(&self) -> Option<String> {
        self.scope.as_deref().map(str::to_string)
    }

    pub fn counter(&self) -> &OpCounter {
        &self.counter
    }

    pub fn take_counter(&mut self) -> OpCounter {
        std::mem::take(&mut self.counter)
    }

    /// Registers a tensor as a leaf; it takes part in differentiation when
    /// `tensor.requires_grad()` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push_node(tensor, Op::Leaf, requires_grad)
    }

    /// Registers a leaf that never receives gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push_node(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    /// A gradient-stopped copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scope_of(&self, v: Var) -> Option<&str> {
        self.nodes[v.0].scope.as_deref()
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Overwrites the stored gradient of `v`; used to check that a backward
    /// pass leaves certain nodes alone.
    pub fn set_grad(&mut self, v: Var, grad: Vec<T>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if grad.len() != node.value.numel() {
            return Err(crate::error::shape_err("set_grad", "length differs from value"));
        }
        node.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self, vars: &[Var]) {
        for v in vars {
            if let Some(g) = &mut self.nodes[v.0].grad {
                g.iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    /// Adds the gradient of `v` into `tensor`'s accumulator.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor<T>) -> Result<()> {
        match self.grad(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            scope: self.scope.clone(),
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn count_forward(&mut self, mults: u64) {
        let layer = self.scope.as_deref().unwrap_or("").to_string();
        let phase = self.phase.clone();
        self.counter.record(&phase, &layer, Pass::Forward, mults);
    }

    /// Backpropagates from the scalar `output`. Gradient accumulates on every
    /// reached node that requires it; nodes in `stop_at` receive their
    /// gradient but nothing upstream of them is visited.
    pub fn backward(&mut self, output: Var, stop_at: &[Var]) -> Result<()> {
        let out_node = &self.nodes[output.0];
        if out_node.value.numel() != 1 {
            return Err(Error::NonScalar(out_node.value.shape().to_vec()));
        }
        if !out_node.requires_grad {
            return Ok(());
        }
        let stop: HashSet<usize> = stop_at.iter().map(|v| v.0).collect();
        let mut pending: Vec<Option<Vec<T>>> = Vec::new();
        pending.resize_with(output.0 + 1, || None);
        pending[output.0] = Some(vec![T::one()]);

        for idx in (0..=output.0).rev() {
            let Some(g) = pending[idx].take() else { continue };
            if !stop.contains(&idx) && !matches!(self.nodes[idx].op, Op::Leaf) {
                let bp = self.backprop(idx, &g);
                if bp.mults > 0 {
                    let layer = self.nodes[idx].scope.as_deref().unwrap_or("").to_string();
                    let phase = self.phase.clone();
                    self.counter.record(&phase, &layer, Pass::Backward, bp.mults);
                }
                for (input, gi) in bp.grads {
                    if !self.nodes[input].requires_grad {
                        continue;
                    }
                    match &mut pending[input] {
                        Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a = *a + b),
                        slot @ None => *slot = Some(gi),
                    }
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backprop(&self, idx: usize, g: &[T]) -> Backprop<T> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => Backprop::new(),
            Op::Conv2d(saved) => conv::conv2d_backward(self, saved, g),
            Op::Linear {
                input,
                weight,
                bias,
            } => conv::linear_backward(self, *input, *weight, *bias, g),
            Op::MaxPool2d(saved) => pool::maxpool_backward(self, saved, g),
            Op::GlobalMaxPool { input, argmax } => pool::global_max_backward(self, *input, argmax, g),
            Op::GlobalAvgPool { input } => pool::global_avg_backward(self, *input, g),
            Op::BatchNorm(saved) => norm::batchnorm_backward(self, saved, g),
            Op::Dropout { input, mask } => {
                let mut bp = Backprop::new();
                bp.push(*input, g.iter().zip(mask).map(|(&a, &m)| a * m).collect());
                bp
            }
            Op::Relu { input } => elementwise::relu_backward(self, *input, g),
            Op::Softmax { input, axis } => elementwise::softmax_backward(self, idx, *input, *axis, g),
            Op::Log { input } => elementwise::log_backward(self, *input, g),
            Op::Add { a, b } => {
                let mut bp = Backprop::new();
                bp.push(*a, g.to_vec());
                bp.push(*b, g.to_vec());
                bp
            }
            Op::Mul { a, b } => elementwise::mul_backward(self, *a, *b, g),
            Op::LinComb { terms } => {
                let mut bp = Backprop::new();
                for &(input, c) in terms {
                    bp.push(input, g.iter().map(|&v| v * c).collect());
                }
                bp
            }
            Op::Sum { input } => {
                let mut bp = Backprop::new();
                let n = self.nodes[*input].value.numel();
                bp.push(*input, vec![g[0]; n]);
                bp
            }
            Op::Slice { input, axis, start } => {
                elementwise::slice_backward(self, idx, *input, *axis, *start, g)
            }
            Op::Concat { inputs, axis } => elementwise::concat_backward(self, inputs, *axis, g),
            Op::Reshape { input } => {
                let mut bp = Backprop::new();
                bp.push(*input, g.to_vec());
                bp
            }
            Op::Pad { input, pads } => spatial::pad_backward(self, *input, *pads, g),
            Op::Resize { input } => spatial::resize_backward(self, idx, *input, g),
            Op::Gather { input, sites } => spatial::gather_backward(self, *input, sites, g),
            Op::SwapIn { base, src, sites } => spatial::swap_in_backward(self, *base, *src, sites, g),
        }
    }

    fn node_value(&self, idx: usize) -> &Tensor<T> {
        &self.nodes[idx].value
    }

    fn needs_grad(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }
}
