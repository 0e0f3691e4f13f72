use crate::error::{Error, Result};

/// Spatial reduction used by a global pooling layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// One layer of a stack.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    },
    MaxPool {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    BatchNorm,
    Relu,
    Dropout {
        rate: f64,
    },
    /// `[n, c, h, w] -> [n, c]`.
    GlobalPool(PoolKind),
    /// Fully connected layer on `[n, c]`.
    Linear {
        outputs: usize,
    },
    /// Softmax over consecutive channel groups. A single group is a plain
    /// softmax over all channels.
    SoftmaxHead {
        groups: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            pad: (pad, pad),
        }
    }

    pub fn max_pool(size: usize) -> Self {
        LayerSpec::MaxPool {
            kernel: (size, size),
            stride: (size, size),
        }
    }

    /// Short label used to name the layer's parameters and counters.
    pub fn tag(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "pool",
            LayerSpec::BatchNorm => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::GlobalPool(_) => "gpool",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::SoftmaxHead { .. } => "softmax",
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::Invalid(format!("{self:?}: {reason}")));
        match self {
            LayerSpec::Conv {
                filters, kernel, stride, ..
            } => {
                if *filters == 0 {
                    return bad("zero filters");
                }
                if kernel.0 == 0 || kernel.1 == 0 {
                    return bad("filter extent must be at least 1");
                }
                if stride.0 == 0 || stride.1 == 0 {
                    return bad("stride must be at least 1");
                }
            }
            LayerSpec::MaxPool { kernel, stride } => {
                if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return bad("pool extents and strides must be at least 1");
                }
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(rate) => return bad("rate outside [0, 1)"),
            LayerSpec::Linear { outputs: 0 } => return bad("zero outputs"),
            LayerSpec::SoftmaxHead { groups } if groups.is_empty() || groups.contains(&0) => {
                return bad("empty softmax group")
            }
            _ => {}
        }
        Ok(())
    }

    /// `(kernel, stride, pad)` along both axes for layers that window the
    /// input, `None` for pointwise layers.
    pub(crate) fn window(&self) -> Option<((usize, usize), (usize, usize), (usize, usize))> {
        match *self {
            LayerSpec::Conv { kernel, stride, pad, .. } => Some((kernel, stride, pad)),
            LayerSpec::MaxPool { kernel, stride } => Some((kernel, stride, (0, 0))),
            _ => None,
        }
    }
}

/// Input rectangle seen by one output position. `top` and `left` may be
/// negative when padding extends the window past the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: isize,
    pub left: isize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (y, x) = (y as isize, x as isize);
        y >= self.top
            && y < self.top + self.height as isize
            && x >= self.left
            && x < self.left + self.width as isize
    }
}

/// Composition of the windowing layers along one axis: an output index `i`
/// sees inputs `offset + i * jump .. offset + i * jump + size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisField {
    pub size: usize,
    pub jump: usize,
    pub offset: isize,
}

impl AxisField {
    pub(crate) fn identity() -> Self {
        AxisField {
            size: 1,
            jump: 1,
            offset: 0,
        }
    }

    pub(crate) fn then(self, kernel: usize, stride: usize, pad: usize) -> Self {
        AxisField {
            size: self.size + (kernel - 1) * self.jump,
            offset: self.offset - (pad * self.jump) as isize,
            jump: self.jump * stride,
        }
    }
}

/// Receptive-field descriptor of a spatial stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveField {
    pub rows: AxisField,
    pub cols: AxisField,
}

impl ReceptiveField {
    /// Patch extents `(height, width)`.
    pub fn size(&self) -> (usize, usize) {
        (self.rows.size, self.cols.size)
    }

    /// Output stride `(rows, cols)`.
    pub fn stride(&self) -> (usize, usize) {
        (self.rows.jump, self.cols.jump)
    }

    pub fn rect(&self, i: usize, j: usize) -> Rect {
        Rect {
            top: self.rows.offset + (i * self.rows.jump) as isize,
            left: self.cols.offset + (j * self.cols.jump) as isize,
            height: self.rows.size,
            width: self.cols.size,
        }
    }
}

/// Shape of the activations between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Map { c: usize, h: usize, w: usize },
    Flat { c: usize },
}

impl ActShape {
    pub fn channels(&self) -> usize {
        match *self {
            ActShape::Map { c, .. } | ActShape::Flat { c } => c,
        }
    }

    /// Extents with a leading batch axis.
    pub fn with_batch(&self, n: usize) -> Vec<usize> {
        match *self {
            ActShape::Map { c, h, w } => vec![n, c, h, w],
            ActShape::Flat { c } => vec![n, c],
        }
    }
}

pub(crate) fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}
