//! Named architectures.
//!
//! Cluttered-digit presets take a single-channel 100x100 canvas. The coarse
//! stack has no zero padding: 100 -> 47 (7x7, stride 2) -> 23 (3x3,
//! stride 2) gives the 23x23 map, with an 11x11 receptive field
//! (7 + (3 - 1) * 2) at stride 4. Padding either layer would grow the map
//! past 23.
//!
//! House-number presets end in a 60-channel head: 5 length logits followed
//! by 5 digit heads of 11 classes (index 10 marks an absent digit).
//!
//! `toy-*` is a small configuration whose fine stack tiles the input
//! exactly like the coarse one (10x10 window, stride 4, no padding).
//! `seq-*` is a reduced house-number configuration with a 24x48 coarse
//! receptive field.

use rand::Rng;

use super::layer::{LayerSpec, PoolKind};
use super::stack::LayerStack;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Every name accepted by [`build_preset`].
pub const PRESETS: [&str; 12] = [
    "cmnist-coarse",
    "cmnist-fine",
    "cmnist-top",
    "svhn-coarse",
    "svhn-fine",
    "svhn-top",
    "toy-coarse",
    "toy-fine",
    "toy-top",
    "seq-coarse",
    "seq-fine",
    "seq-top",
];

/// Channel layout of the sequence head: length, then five digit positions.
pub const SEQ_GROUPS: [usize; 6] = [5, 11, 11, 11, 11, 11];
pub const SEQ_CHANNELS: usize = 60;

fn conv_bn_relu(out: &mut Vec<LayerSpec>, filters: usize, kernel: usize, stride: usize, pad: usize) {
    out.push(LayerSpec::conv(filters, kernel, stride, pad));
    out.push(LayerSpec::BatchNorm);
    out.push(LayerSpec::Relu);
}

fn conv_relu_drop(out: &mut Vec<LayerSpec>, conv: LayerSpec, rate: f64) {
    out.push(conv);
    out.push(LayerSpec::Relu);
    out.push(LayerSpec::Dropout { rate });
}

fn rect_conv(filters: usize, kernel: (usize, usize), stride: (usize, usize)) -> LayerSpec {
    LayerSpec::Conv {
        filters,
        kernel,
        stride,
        pad: (0, 0),
    }
}

fn seq_head(out: &mut Vec<LayerSpec>) {
    out.push(LayerSpec::conv(SEQ_CHANNELS, 1, 1, 0));
    out.push(LayerSpec::SoftmaxHead {
        groups: SEQ_GROUPS.to_vec(),
    });
}

/// Input channels and layer list of a preset.
pub fn preset_specs(name: &str) -> Result<(usize, Vec<LayerSpec>)> {
    let mut l = Vec::new();
    let in_c = match name {
        "cmnist-coarse" => {
            conv_bn_relu(&mut l, 12, 7, 2, 0);
            conv_bn_relu(&mut l, 24, 3, 2, 0);
            1
        }
        "cmnist-fine" => {
            conv_bn_relu(&mut l, 24, 3, 1, 0);
            conv_bn_relu(&mut l, 24, 3, 1, 1);
            l.push(LayerSpec::max_pool(2));
            conv_bn_relu(&mut l, 24, 3, 1, 1);
            conv_bn_relu(&mut l, 24, 3, 1, 1);
            l.push(LayerSpec::max_pool(2));
            conv_bn_relu(&mut l, 24, 3, 1, 0);
            1
        }
        "cmnist-top" => {
            conv_bn_relu(&mut l, 96, 4, 2, 0);
            l.push(LayerSpec::GlobalPool(PoolKind::Max));
            l.push(LayerSpec::Linear { outputs: 10 });
            l.push(LayerSpec::SoftmaxHead { groups: vec![10] });
            24
        }
        "svhn-coarse" => {
            conv_relu_drop(&mut l, LayerSpec::conv(24, 5, 2, 0), 0.2);
            conv_relu_drop(&mut l, LayerSpec::conv(48, 5, 2, 0), 0.2);
            conv_relu_drop(&mut l, LayerSpec::conv(128, 5, 2, 0), 0.2);
            conv_relu_drop(&mut l, rect_conv(192, (4, 5), (1, 2)), 0.2);
            conv_relu_drop(&mut l, rect_conv(192, (1, 4), (1, 1)), 0.2);
            conv_relu_drop(&mut l, LayerSpec::conv(1024, 1, 1, 0), 0.5);
            conv_relu_drop(&mut l, LayerSpec::conv(1024, 1, 1, 0), 0.5);
            seq_head(&mut l);
            1
        }
        "svhn-fine" => {
            for (idx, filters) in [48, 64, 128, 160, 192].into_iter().enumerate() {
                conv_relu_drop(&mut l, LayerSpec::conv(filters, 5, 1, 2), 0.2);
                if idx % 2 == 0 {
                    l.push(LayerSpec::max_pool(2));
                }
            }
            for _ in 0..3 {
                conv_relu_drop(&mut l, LayerSpec::conv(192, 3, 1, 1), 0.2);
            }
            for _ in 0..3 {
                conv_relu_drop(&mut l, LayerSpec::conv(1024, 1, 1, 0), 0.5);
            }
            seq_head(&mut l);
            1
        }
        "svhn-top" | "seq-top" => {
            l.push(LayerSpec::GlobalPool(PoolKind::Avg));
            SEQ_CHANNELS
        }
        "toy-coarse" => {
            l.push(LayerSpec::conv(8, 6, 2, 0));
            l.push(LayerSpec::Relu);
            l.push(LayerSpec::conv(16, 3, 2, 0));
            l.push(LayerSpec::Relu);
            1
        }
        "toy-fine" => {
            l.push(LayerSpec::conv(16, 3, 1, 0));
            l.push(LayerSpec::Relu);
            l.push(LayerSpec::max_pool(2));
            l.push(LayerSpec::conv(16, 3, 1, 0));
            l.push(LayerSpec::Relu);
            l.push(LayerSpec::max_pool(2));
            1
        }
        "toy-top" => {
            l.push(LayerSpec::GlobalPool(PoolKind::Max));
            l.push(LayerSpec::Linear { outputs: 10 });
            l.push(LayerSpec::SoftmaxHead { groups: vec![10] });
            16
        }
        "seq-coarse" => {
            conv_bn_relu(&mut l, 16, 4, 2, 0);
            conv_bn_relu(&mut l, 32, 3, 2, 0);
            l.push(rect_conv(48, (3, 3), (1, 2)));
            l.push(LayerSpec::BatchNorm);
            l.push(LayerSpec::Relu);
            l.push(rect_conv(64, (3, 5), (1, 1)));
            l.push(LayerSpec::BatchNorm);
            l.push(LayerSpec::Relu);
            conv_bn_relu(&mut l, 128, 1, 1, 0);
            seq_head(&mut l);
            1
        }
        "seq-fine" => {
            conv_bn_relu(&mut l, 32, 3, 1, 1);
            l.push(LayerSpec::max_pool(2));
            conv_bn_relu(&mut l, 64, 3, 1, 1);
            l.push(LayerSpec::max_pool(2));
            conv_bn_relu(&mut l, 96, 3, 1, 1);
            l.push(LayerSpec::max_pool(2));
            // three 3x3 layers at stride 8 widen the field to 70x70, so
            // every output position sees a whole 24x48 patch
            for _ in 0..3 {
                conv_bn_relu(&mut l, 128, 3, 1, 1);
            }
            conv_bn_relu(&mut l, 256, 1, 1, 0);
            seq_head(&mut l);
            1
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok((in_c, l))
}

/// Builds a preset with freshly initialized parameters.
pub fn build_preset<T: Real>(name: &str, rng: &mut impl Rng) -> Result<LayerStack<T>> {
    let (in_c, specs) = preset_specs(name)?;
    LayerStack::new(name, in_c, specs, rng)
}
