use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{out_extent, ActShape, AxisField, LayerSpec, PoolKind, ReceptiveField, Rect};
use crate::error::{Error, Result};
use crate::tape::{BatchStats, BnMode, Tape, Var};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Forward behaviour of batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and active dropout; masks are drawn from `seed`.
    Train { seed: u64 },
    /// Running statistics, dropout is the identity.
    Infer,
}

/// Result of running a stack on a tape.
#[derive(Debug)]
pub struct StackOutput<T> {
    pub output: Var,
    /// Input of the final softmax head, if the stack has one.
    pub logits: Option<Var>,
    /// Leaf variables of the parameters, aligned with [`LayerStack::params`].
    pub params: Vec<Var>,
    /// Batch statistics per batch-norm layer (train mode only).
    pub stats: Vec<(usize, BatchStats<T>)>,
}

/// Multiplication count of one conv or linear layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub layer: String,
    pub output: ActShape,
    pub mults: u64,
}

/// An ordered sequence of layers with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack<T = f32> {
    name: String,
    in_channels: usize,
    specs: Vec<LayerSpec>,
    params: Vec<Param<T>>,
    /// First parameter index of each layer.
    param_at: Vec<Option<usize>>,
    bn: Vec<Option<BnState<T>>>,
}

impl<T: Real> LayerStack<T> {
    /// Builds a stack with He-uniform conv and linear weights, zero biases,
    /// unit batch-norm scales and zero shifts.
    pub fn new(name: &str, in_channels: usize, specs: Vec<LayerSpec>, rng: &mut impl Rng) -> Result<Self> {
        let mut params = Vec::new();
        let mut param_at = Vec::with_capacity(specs.len());
        let mut bn = Vec::with_capacity(specs.len());
        let mut channels = in_channels;
        let mut flat = false;
        for (idx, spec) in specs.iter().enumerate() {
            spec.validate()?;
            let lname = format!("{}{idx}", spec.tag());
            let misplaced = |what: &str| Error::LayerDim {
                layer: format!("{name}/{lname}"),
                detail: what.to_string(),
            };
            let mut first = None;
            let mut state = None;
            match *spec {
                LayerSpec::Conv { filters, kernel, .. } => {
                    if flat {
                        return Err(misplaced("convolution after global pooling"));
                    }
                    let fan_in = channels * kernel.0 * kernel.1;
                    first = Some(params.len());
                    params.push(Param {
                        name: format!("{lname}.weight"),
                        value: he_uniform(&[filters, channels, kernel.0, kernel.1], fan_in, rng),
                    });
                    params.push(Param {
                        name: format!("{lname}.bias"),
                        value: Tensor::zeros(&[filters]),
                    });
                    channels = filters;
                }
                LayerSpec::Linear { outputs } => {
                    if !flat {
                        return Err(misplaced("linear layer needs a global pooling layer before it"));
                    }
                    first = Some(params.len());
                    params.push(Param {
                        name: format!("{lname}.weight"),
                        value: he_uniform(&[outputs, channels], channels, rng),
                    });
                    params.push(Param {
                        name: format!("{lname}.bias"),
                        value: Tensor::zeros(&[outputs]),
                    });
                    channels = outputs;
                }
                LayerSpec::BatchNorm => {
                    first = Some(params.len());
                    params.push(Param {
                        name: format!("{lname}.gamma"),
                        value: Tensor::full(&[channels], T::one()),
                    });
                    params.push(Param {
                        name: format!("{lname}.beta"),
                        value: Tensor::zeros(&[channels]),
                    });
                    state = Some(BnState {
                        mean: vec![T::zero(); channels],
                        var: vec![T::one(); channels],
                    });
                }
                LayerSpec::MaxPool { .. } if flat => return Err(misplaced("pooling after global pooling")),
                LayerSpec::GlobalPool(_) => {
                    if flat {
                        return Err(misplaced("repeated global pooling"));
                    }
                    flat = true;
                }
                LayerSpec::SoftmaxHead { ref groups } => {
                    let total: usize = groups.iter().sum();
                    if total != channels {
                        return Err(misplaced(&format!("softmax groups cover {total} of {channels} channels")));
                    }
                }
                _ => {}
            }
            param_at.push(first);
            bn.push(state);
        }
        Ok(LayerStack {
            name: name.to_string(),
            in_channels,
            specs,
            params,
            param_at,
            bn,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Name of layer `idx`, unique within the stack.
    pub fn layer_name(&self, idx: usize) -> String {
        format!("{}{idx}", self.specs[idx].tag())
    }

    /// Counter label of layer `idx`: `stack/layer`.
    pub fn scope(&self, idx: usize) -> String {
        format!("{}/{}", self.name, self.layer_name(idx))
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Running statistics of the batch-norm layer at `idx`.
    pub fn bn_state(&self, idx: usize) -> Option<&BnState<T>> {
        self.bn.get(idx).and_then(|s| s.as_ref())
    }

    /// Channel count of the final activation.
    pub fn out_channels(&self) -> usize {
        let mut c = self.in_channels;
        for spec in &self.specs {
            match *spec {
                LayerSpec::Conv { filters, .. } => c = filters,
                LayerSpec::Linear { outputs } => c = outputs,
                _ => {}
            }
        }
        c
    }

    /// Same stack with parameters and statistics converted to `U`.
    pub fn cast<U: Real>(&self) -> LayerStack<U> {
        LayerStack {
            name: self.name.clone(),
            in_channels: self.in_channels,
            specs: self.specs.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            param_at: self.param_at.clone(),
            bn: self
                .bn
                .iter()
                .map(|s| {
                    s.as_ref().map(|s| BnState {
                        mean: s.mean.iter().map(|v| U::of(v.f64())).collect(),
                        var: s.var.iter().map(|v| U::of(v.f64())).collect(),
                    })
                })
                .collect(),
        }
    }

    /// Activation shapes after every layer for a `c x h x w` input.
    pub fn shapes(&self, input: ActShape) -> Result<Vec<ActShape>> {
        let mut cur = input;
        if cur.channels() != self.in_channels {
            return Err(Error::LayerDim {
                layer: format!("{}/input", self.name),
                detail: format!("expected {} channels, got {}", self.in_channels, cur.channels()),
            });
        }
        let mut out = Vec::with_capacity(self.specs.len());
        for (idx, spec) in self.specs.iter().enumerate() {
            cur = match (spec, cur) {
                (LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. }, ActShape::Map { c, h, w }) => {
                    let (kernel, stride, pad) = spec.window().expect("windowed layer");
                    let oh = out_extent(h, kernel.0, stride.0, pad.0);
                    let ow = out_extent(w, kernel.1, stride.1, pad.1);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => {
                            let c = if let LayerSpec::Conv { filters, .. } = spec { *filters } else { c };
                            ActShape::Map { c, h: oh, w: ow }
                        }
                        _ => {
                            return Err(Error::LayerDim {
                                layer: self.scope(idx),
                                detail: format!(
                                    "input {h}x{w} smaller than {}x{} window with padding {}x{}",
                                    kernel.0, kernel.1, pad.0, pad.1
                                ),
                            })
                        }
                    }
                }
                (LayerSpec::GlobalPool(_), ActShape::Map { c, .. }) => ActShape::Flat { c },
                (LayerSpec::Linear { outputs }, ActShape::Flat { .. }) => ActShape::Flat { c: *outputs },
                (LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. } | LayerSpec::GlobalPool(_), ActShape::Flat { .. })
                | (LayerSpec::Linear { .. }, ActShape::Map { .. }) => {
                    return Err(Error::LayerDim {
                        layer: self.scope(idx),
                        detail: format!("incompatible input {cur:?}"),
                    })
                }
                (_, s) => s,
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Final activation shape for a `h x w` input.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<ActShape> {
        let input = ActShape::Map {
            c: self.in_channels,
            h,
            w,
        };
        Ok(self.shapes(input)?.last().copied().unwrap_or(input))
    }

    /// Multiplications of each conv and linear layer for one `h x w` input.
    pub fn layer_costs(&self, h: usize, w: usize) -> Result<Vec<LayerCost>> {
        let input = ActShape::Map {
            c: self.in_channels,
            h,
            w,
        };
        let shapes = self.shapes(input)?;
        let mut prev = input;
        let mut costs = Vec::new();
        for (idx, (spec, &shape)) in self.specs.iter().zip(&shapes).enumerate() {
            let mults = match (spec, shape) {
                (LayerSpec::Conv { kernel, .. }, ActShape::Map { c, h, w }) => {
                    Some(crate::cost::conv_mults(prev.channels(), c, *kernel, (h, w)))
                }
                (LayerSpec::Linear { outputs }, _) => Some((prev.channels() * outputs) as u64),
                _ => None,
            };
            if let Some(mults) = mults {
                costs.push(LayerCost {
                    layer: self.scope(idx),
                    output: shape,
                    mults,
                });
            }
            prev = shape;
        }
        Ok(costs)
    }

    /// Receptive-field descriptor of a stack made only of spatial layers.
    pub fn receptive_field(&self) -> Result<ReceptiveField> {
        let mut rows = AxisField::identity();
        let mut cols = AxisField::identity();
        for spec in &self.specs {
            if matches!(spec, LayerSpec::GlobalPool(_) | LayerSpec::Linear { .. }) {
                return Err(Error::Geometry(format!(
                    "stack `{}` pools globally; every output sees the whole input",
                    self.name
                )));
            }
            if let Some((kernel, stride, pad)) = spec.window() {
                rows = rows.then(kernel.0, stride.0, pad.0);
                cols = cols.then(kernel.1, stride.1, pad.1);
            }
        }
        Ok(ReceptiveField { rows, cols })
    }

    /// Input rectangle of output position `(i, j)` for a `h x w` input.
    pub fn receptive_rect(&self, input: (usize, usize), pos: (usize, usize)) -> Result<Rect> {
        let field = self.receptive_field()?;
        let (rows, cols) = match self.output_shape(input.0, input.1)? {
            ActShape::Map { h, w, .. } => (h, w),
            ActShape::Flat { .. } => unreachable!("spatial stack"),
        };
        if pos.0 >= rows || pos.1 >= cols {
            return Err(Error::OutOfGrid {
                i: pos.0,
                j: pos.1,
                rows,
                cols,
            });
        }
        Ok(field.rect(pos.0, pos.1))
    }

    /// Runs the stack on `input` (`[n, c, h, w]`).
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<StackOutput<T>> {
        let in_shape = tape.shape(input).to_vec();
        let [_, c, h, w] = match in_shape[..] {
            [n, c, h, w] => [n, c, h, w],
            _ => {
                return Err(Error::LayerDim {
                    layer: format!("{}/input", self.name),
                    detail: format!("expected [n, c, h, w], got {in_shape:?}"),
                })
            }
        };
        self.shapes(ActShape::Map { c, h, w })?;

        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone().with_requires_grad(true)))
            .collect();
        let mut stats = Vec::new();
        let mut logits = None;
        let mut x = input;
        let previous_scope = tape.scope_label();
        for (idx, spec) in self.specs.iter().enumerate() {
            let scope = self.scope(idx);
            tape.set_scope(Some(&scope));
            let p = self.param_at[idx];
            let wrap = |e: Error| match e {
                Error::LayerDim { .. } => e,
                other => Error::LayerDim {
                    layer: scope.clone(),
                    detail: other.to_string(),
                },
            };
            x = match *spec {
                LayerSpec::Conv { stride, pad, .. } => {
                    let p = p.expect("conv parameters");
                    tape.conv2d(x, params[p], Some(params[p + 1]), stride, pad).map_err(wrap)?
                }
                LayerSpec::Linear { .. } => {
                    let p = p.expect("linear parameters");
                    tape.linear(x, params[p], Some(params[p + 1])).map_err(wrap)?
                }
                LayerSpec::MaxPool { kernel, stride } => tape.maxpool2d(x, kernel, stride).map_err(wrap)?,
                LayerSpec::BatchNorm => {
                    let p = p.expect("batch-norm parameters");
                    let state = self.bn[idx].as_ref().expect("batch-norm state");
                    let bn_mode = match mode {
                        Mode::Train { .. } => BnMode::Train { eps: BN_EPS },
                        Mode::Infer => BnMode::Infer {
                            mean: &state.mean,
                            var: &state.var,
                            eps: BN_EPS,
                        },
                    };
                    let (y, s) = tape.batch_norm(x, params[p], params[p + 1], bn_mode).map_err(wrap)?;
                    if let Some(s) = s {
                        stats.push((idx, s));
                    }
                    y
                }
                LayerSpec::Relu => tape.relu(x),
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Train { seed } => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(idx as u64);
                        tape.dropout(x, rate, &mut rng).map_err(wrap)?
                    }
                    Mode::Infer => x,
                },
                LayerSpec::GlobalPool(PoolKind::Max) => tape.global_maxpool(x).map_err(wrap)?,
                LayerSpec::GlobalPool(PoolKind::Avg) => tape.global_avgpool(x).map_err(wrap)?,
                LayerSpec::SoftmaxHead { ref groups } => {
                    logits = Some(x);
                    grouped_softmax(tape, x, groups).map_err(wrap)?
                }
            };
        }
        tape.set_scope(previous_scope.as_deref());
        Ok(StackOutput {
            output: x,
            logits,
            params,
            stats,
        })
    }

    /// Folds observed batch statistics into the running averages:
    /// `running = m * running + (1 - m) * batch` with `m = 0.9`.
    pub fn commit_stats(&mut self, stats: &[(usize, BatchStats<T>)]) {
        let m = T::of(BN_MOMENTUM);
        let one = T::one();
        for (idx, s) in stats {
            if let Some(state) = self.bn.get_mut(*idx).and_then(|b| b.as_mut()) {
                for (r, &b) in state.mean.iter_mut().zip(&s.mean) {
                    *r = m * *r + (one - m) * b;
                }
                for (r, &b) in state.var.iter_mut().zip(&s.var) {
                    *r = m * *r + (one - m) * b;
                }
            }
        }
    }

    /// Parameters and running statistics as named tensors.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .params
            .iter()
            .map(|p| (format!("{}.{}", self.name, p.name), p.value.clone()))
            .collect();
        for (idx, s) in self.bn.iter().enumerate() {
            if let Some(s) = s {
                let base = format!("{}.{}", self.name, self.layer_name(idx));
                let c = s.mean.len();
                out.push((format!("{base}.running_mean"), Tensor::new(vec![c], s.mean.clone()).expect("1-d")));
                out.push((format!("{base}.running_var"), Tensor::new(vec![c], s.var.clone()).expect("1-d")));
            }
        }
        out
    }

    /// Restores every tensor named by [`LayerStack::state`] from `records`.
    pub fn load_state(&mut self, records: &[(String, Tensor<T>)]) -> Result<()> {
        let find = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let (_, t) = records
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Malformed(format!("checkpoint lacks `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::Malformed(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        let mut params = self.params.clone();
        for p in &mut params {
            p.value = find(&format!("{}.{}", self.name, p.name), p.value.shape())?;
        }
        let mut bn = self.bn.clone();
        for (idx, s) in bn.iter_mut().enumerate() {
            if let Some(s) = s {
                let base = format!("{}.{}", self.name, self.layer_name(idx));
                let c = s.mean.len();
                s.mean = find(&format!("{base}.running_mean"), &[c])?.into_data();
                s.var = find(&format!("{base}.running_var"), &[c])?.into_data();
            }
        }
        self.params = params;
        self.bn = bn;
        Ok(())
    }
}

/// Softmax over consecutive channel groups of `[n, c]` or `[n, c, h, w]`.
pub fn grouped_softmax<T: Real>(tape: &mut Tape<T>, x: Var, groups: &[usize]) -> Result<Var> {
    if groups.len() == 1 {
        return tape.softmax(x, 1);
    }
    let mut parts = Vec::with_capacity(groups.len());
    let mut start = 0;
    for &g in groups {
        let part = tape.slice(x, 1, start, g)?;
        parts.push(tape.softmax(part, 1)?);
        start += g;
    }
    tape.concat(&parts, 1)
}

fn he_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}
