use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BnMode, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Real;

/// Every differentiable primitive of the tape, addressable by name.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Conv2d { stride: (usize, usize), pad: (usize, usize) },
    Linear,
    MaxPool2d { kernel: (usize, usize), stride: (usize, usize) },
    AvgPoolGlobal,
    MaxPoolGlobal,
    Relu,
    Softmax { axis: usize },
    BatchNorm,
    Dropout { rate: f64, seed: u64 },
    Add,
    Mul,
    LinearCombination { coeffs: Vec<f64> },
    Log,
    Sum,
    Slice { axis: usize, start: usize, len: usize },
    Pad { pads: [usize; 4] },
    Concat { axis: usize },
    ResizeBilinear { height: usize, width: usize },
}

impl Primitive {
    /// Every primitive name accepted by [`FromStr`].
    pub const NAMES: [&'static str; 18] = [
        "conv2d",
        "linear",
        "maxpool2d",
        "avgpool_global",
        "maxpool_global",
        "relu",
        "softmax",
        "batchnorm",
        "dropout",
        "add",
        "mul",
        "linear-combination",
        "log",
        "sum",
        "slice",
        "pad",
        "concat",
        "resize-bilinear",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::Linear => "linear",
            Primitive::MaxPool2d { .. } => "maxpool2d",
            Primitive::AvgPoolGlobal => "avgpool_global",
            Primitive::MaxPoolGlobal => "maxpool_global",
            Primitive::Relu => "relu",
            Primitive::Softmax { .. } => "softmax",
            Primitive::BatchNorm => "batchnorm",
            Primitive::Dropout { .. } => "dropout",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::LinearCombination { .. } => "linear-combination",
            Primitive::Log => "log",
            Primitive::Sum => "sum",
            Primitive::Slice { .. } => "slice",
            Primitive::Pad { .. } => "pad",
            Primitive::Concat { .. } => "concat",
            Primitive::ResizeBilinear { .. } => "resize-bilinear",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Conv2d { .. } | Primitive::Linear | Primitive::BatchNorm => Some(3),
            Primitive::Add | Primitive::Mul => Some(2),
            Primitive::LinearCombination { coeffs } => Some(coeffs.len()),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a bare primitive name with default attributes.
impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "conv2d" => Primitive::Conv2d { stride: (1, 1), pad: (0, 0) },
            "linear" => Primitive::Linear,
            "maxpool2d" => Primitive::MaxPool2d { kernel: (2, 2), stride: (2, 2) },
            "avgpool_global" => Primitive::AvgPoolGlobal,
            "maxpool_global" => Primitive::MaxPoolGlobal,
            "relu" => Primitive::Relu,
            "softmax" => Primitive::Softmax { axis: 1 },
            "batchnorm" => Primitive::BatchNorm,
            "dropout" => Primitive::Dropout { rate: 0.5, seed: 0 },
            "add" => Primitive::Add,
            "mul" => Primitive::Mul,
            "linear-combination" => Primitive::LinearCombination { coeffs: vec![1.0, 1.0] },
            "log" => Primitive::Log,
            "sum" => Primitive::Sum,
            "slice" => Primitive::Slice { axis: 1, start: 0, len: 1 },
            "pad" => Primitive::Pad { pads: [1, 1, 1, 1] },
            "concat" => Primitive::Concat { axis: 1 },
            "resize-bilinear" => Primitive::ResizeBilinear { height: 2, width: 2 },
            other => return Err(Error::Invalid(format!("unknown primitive `{other}`"))),
        })
    }
}

impl<T: Real> Tape<T> {
    /// Applies a primitive by description. Convolution, linear and batch norm
    /// take `[input, weight, bias]` / `[input, gamma, beta]`; batch norm runs
    /// in training mode.
    pub fn apply(&mut self, prim: &Primitive, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = prim.arity() {
            if inputs.len() != n {
                return Err(shape_err(
                    "apply",
                    format!("{prim} takes {n} inputs, got {}", inputs.len()),
                ));
            }
        }
        match prim {
            Primitive::Conv2d { stride, pad } => self.conv2d(inputs[0], inputs[1], Some(inputs[2]), *stride, *pad),
            Primitive::Linear => self.linear(inputs[0], inputs[1], Some(inputs[2])),
            Primitive::MaxPool2d { kernel, stride } => self.maxpool2d(inputs[0], *kernel, *stride),
            Primitive::AvgPoolGlobal => self.global_avgpool(inputs[0]),
            Primitive::MaxPoolGlobal => self.global_maxpool(inputs[0]),
            Primitive::Relu => Ok(self.relu(inputs[0])),
            Primitive::Softmax { axis } => self.softmax(inputs[0], *axis),
            Primitive::BatchNorm => self
                .batch_norm(inputs[0], inputs[1], inputs[2], BnMode::Train { eps: 1e-5 })
                .map(|(v, _)| v),
            Primitive::Dropout { rate, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                self.dropout(inputs[0], *rate, &mut rng)
            }
            Primitive::Add => self.add(inputs[0], inputs[1]),
            Primitive::Mul => self.mul(inputs[0], inputs[1]),
            Primitive::LinearCombination { coeffs } => {
                let terms: Vec<(Var, f64)> = inputs.iter().copied().zip(coeffs.iter().copied()).collect();
                self.lin_comb(&terms)
            }
            Primitive::Log => Ok(self.log(inputs[0])),
            Primitive::Sum => Ok(self.sum(inputs[0])),
            Primitive::Slice { axis, start, len } => self.slice(inputs[0], *axis, *start, *len),
            Primitive::Pad { pads } => self.pad(inputs[0], *pads),
            Primitive::Concat { axis } => self.concat(inputs, *axis),
            Primitive::ResizeBilinear { height, width } => self.resize_bilinear(inputs[0], *height, *width),
        }
    }
}
