use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::tape::Tape;
use crate::tensor::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn preset(name: &str) -> LayerStack<f64> {
    build_preset(name, &mut rng(3)).unwrap()
}

fn infer(stack: &LayerStack<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = stack.forward(&mut tape, v, Mode::Infer).unwrap();
    tape.value(out.output).clone()
}

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn map(c: usize, h: usize, w: usize) -> ActShape {
    ActShape::Map { c, h, w }
}

#[test]
fn cluttered_preset_shapes() {
    assert_eq!(preset("cmnist-coarse").output_shape(100, 100).unwrap(), map(24, 23, 23));
    assert_eq!(preset("cmnist-fine").output_shape(14, 14).unwrap(), map(24, 1, 1));
    let top = preset("cmnist-top");
    assert_eq!(top.in_channels(), 24);
    assert_eq!(top.output_shape(23, 23).unwrap(), ActShape::Flat { c: 10 });
}

#[test]
fn house_number_preset_shapes() {
    assert_eq!(preset("svhn-coarse").output_shape(54, 110).unwrap(), map(60, 1, 1));
    assert_eq!(preset("svhn-fine").output_shape(54, 110).unwrap(), map(60, 6, 13));
    assert_eq!(preset("svhn-top").output_shape(3, 4).unwrap(), ActShape::Flat { c: 60 });
    assert_eq!(preset("seq-coarse").output_shape(24, 48).unwrap(), map(60, 1, 1));
    assert_eq!(preset("seq-coarse").output_shape(48, 96).unwrap(), map(60, 7, 7));
    assert_eq!(preset("seq-fine").output_shape(24, 48).unwrap(), map(60, 3, 6));
}

#[test]
fn toy_stacks_tile_alike() {
    let coarse = preset("toy-coarse");
    let fine = preset("toy-fine");
    assert_eq!(coarse.output_shape(28, 28).unwrap(), map(16, 5, 5));
    assert_eq!(fine.output_shape(28, 28).unwrap(), map(16, 5, 5));
    assert_eq!(fine.output_shape(10, 10).unwrap(), map(16, 1, 1));
    assert_eq!(coarse.receptive_field().unwrap(), fine.receptive_field().unwrap());
}

fn conv_weight_shapes(stack: &LayerStack<f64>) -> Vec<Vec<usize>> {
    stack
        .params()
        .iter()
        .filter(|p| p.name.ends_with(".weight"))
        .map(|p| p.value.shape().to_vec())
        .collect()
}

#[test]
fn preset_parameter_shapes_are_golden() {
    let cases: Vec<(&str, Vec<Vec<usize>>, usize)> = vec![
        ("cmnist-coarse", vec![vec![12, 1, 7, 7], vec![24, 12, 3, 3]], 3288),
        (
            "cmnist-fine",
            vec![
                vec![24, 1, 3, 3],
                vec![24, 24, 3, 3],
                vec![24, 24, 3, 3],
                vec![24, 24, 3, 3],
                vec![24, 24, 3, 3],
            ],
            21312,
        ),
        ("cmnist-top", vec![vec![96, 24, 4, 4], vec![10, 96]], 38122),
        (
            "svhn-coarse",
            vec![
                vec![24, 1, 5, 5],
                vec![48, 24, 5, 5],
                vec![128, 48, 5, 5],
                vec![192, 128, 4, 5],
                vec![192, 192, 1, 4],
                vec![1024, 192, 1, 1],
                vec![1024, 1024, 1, 1],
                vec![60, 1024, 1, 1],
            ],
            2131292,
        ),
        (
            "svhn-fine",
            vec![
                vec![48, 1, 5, 5],
                vec![64, 48, 5, 5],
                vec![128, 64, 5, 5],
                vec![160, 128, 5, 5],
                vec![192, 160, 5, 5],
                vec![192, 192, 3, 3],
                vec![192, 192, 3, 3],
                vec![192, 192, 3, 3],
                vec![1024, 192, 1, 1],
                vec![1024, 1024, 1, 1],
                vec![1024, 1024, 1, 1],
                vec![60, 1024, 1, 1],
            ],
            4917628,
        ),
        ("svhn-top", vec![], 0),
    ];
    for (name, weights, count) in cases {
        let stack = preset(name);
        assert_eq!(conv_weight_shapes(&stack), weights, "{name}");
        assert_eq!(stack.param_count(), count, "{name}");
    }
}

#[test]
fn house_number_dropout_rates() {
    let rates: Vec<f64> = preset("svhn-coarse")
        .specs()
        .iter()
        .filter_map(|s| match s {
            LayerSpec::Dropout { rate } => Some(*rate),
            _ => None,
        })
        .collect();
    assert_eq!(rates, vec![0.2, 0.2, 0.2, 0.2, 0.2, 0.5, 0.5]);
}

#[test]
fn unknown_preset_is_rejected() {
    let err = build_preset::<f32>("mnist-huge", &mut rng(0)).unwrap_err();
    assert!(matches!(err, Error::UnknownPreset(ref n) if n == "mnist-huge"));
}

#[test]
fn receptive_fields() {
    let coarse = preset("cmnist-coarse");
    let field = coarse.receptive_field().unwrap();
    assert_eq!(field.size(), (11, 11));
    assert_eq!(field.stride(), (4, 4));
    for (i, j) in [(0, 0), (5, 17), (22, 22)] {
        let r = coarse.receptive_rect((100, 100), (i, j)).unwrap();
        assert_eq!((r.top, r.left, r.height, r.width), (4 * i as isize, 4 * j as isize, 11, 11));
    }
    assert!(matches!(
        coarse.receptive_rect((100, 100), (23, 0)),
        Err(Error::OutOfGrid { rows: 23, cols: 23, .. })
    ));

    let single = LayerStack::<f64>::new("one", 1, vec![LayerSpec::conv(1, 3, 1, 0)], &mut rng(0)).unwrap();
    let r = single.receptive_rect((5, 5), (0, 0)).unwrap();
    assert_eq!((r.top, r.left, r.height, r.width), (0, 0, 3, 3));

    let svhn = preset("svhn-coarse").receptive_field().unwrap();
    assert_eq!(svhn.size(), (53, 109));
    assert_eq!(svhn.stride(), (8, 16));
    assert!(preset("cmnist-top").receptive_field().is_err());
}

/// Randomizes every pixel outside the claimed rectangle and checks that the
/// output vector at the position stays the same.
fn probe(name: &str, h: usize, w: usize, seed: u64) {
    let stack = preset(name);
    let mut r = rng(seed);
    let x = random_input(&[1, 1, h, w], seed);
    let base = infer(&stack, &x);
    let [_, c, gh, gw] = base.dims4().unwrap();
    for _ in 0..10 {
        let (i, j) = (r.gen_range(0..gh), r.gen_range(0..gw));
        let rect = stack.receptive_rect((h, w), (i, j)).unwrap();
        let mut y = x.clone();
        for yy in 0..h {
            for xx in 0..w {
                if !rect.contains(yy, xx) {
                    y.data_mut()[yy * w + xx] = r.gen_range(-1.0..1.0);
                }
            }
        }
        let out = infer(&stack, &y);
        for ch in 0..c {
            let at = (ch * gh + i) * gw + j;
            assert_eq!(out.data()[at], base.data()[at], "{name} ({i}, {j}) channel {ch}");
        }
    }
}

#[test]
fn receptive_field_probes() {
    probe("cmnist-coarse", 40, 40, 1);
    probe("cmnist-fine", 30, 30, 2);
    probe("toy-coarse", 28, 28, 3);
    probe("toy-fine", 28, 28, 4);
    probe("seq-coarse", 40, 72, 5);
    probe("seq-fine", 24, 40, 6);
    probe("svhn-coarse", 69, 141, 7);
    probe("svhn-fine", 24, 24, 8);
}

#[test]
fn too_small_input_names_layer() {
    let stack = preset("cmnist-coarse");
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 8, 8]));
    let err = stack.forward(&mut tape, x, Mode::Infer).unwrap_err();
    assert!(err.to_string().contains("cmnist-coarse/conv3"), "{err}");
}

#[test]
fn infer_is_deterministic() {
    let stack = preset("cmnist-fine");
    let x = random_input(&[3, 1, 14, 14], 9);
    assert_eq!(infer(&stack, &x), infer(&stack, &x));
}

#[test]
fn zero_weights_give_zero_map() {
    let mut stack = preset("toy-coarse");
    for p in stack.params_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    let out = infer(&stack, &random_input(&[2, 1, 28, 28], 1));
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn train_mode_dropout_depends_on_seed_only() {
    let stack = preset("svhn-fine");
    let x = random_input(&[1, 1, 8, 8], 2);
    let run = |seed| {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = stack.forward(&mut tape, v, Mode::Train { seed }).unwrap();
        tape.value(out.output).clone()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

/// Plain nested-loop evaluation of a stack in inference mode.
mod oracle {
    use super::*;

    pub struct Act {
        pub c: usize,
        pub h: usize,
        pub w: usize,
        pub v: Vec<f64>,
    }

    fn conv(x: &Act, w: &[f64], b: &[f64], oc: usize, k: (usize, usize), s: (usize, usize), p: (usize, usize)) -> Act {
        let oh = (x.h + 2 * p.0 - k.0) / s.0 + 1;
        let ow = (x.w + 2 * p.1 - k.1) / s.1 + 1;
        let mut v = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[o];
                    for ci in 0..x.c {
                        for ky in 0..k.0 {
                            for kx in 0..k.1 {
                                let iy = (y * s.0 + ky) as isize - p.0 as isize;
                                let ix = (xo * s.1 + kx) as isize - p.1 as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                let xv = x.v[(ci * x.h + iy as usize) * x.w + ix as usize];
                                acc += w[((o * x.c + ci) * k.0 + ky) * k.1 + kx] * xv;
                            }
                        }
                    }
                    v[(o * oh + y) * ow + xo] = acc;
                }
            }
        }
        Act { c: oc, h: oh, w: ow, v }
    }

    pub fn forward(stack: &LayerStack<f64>, input: Act) -> Vec<f64> {
        let mut x = input;
        let mut pi = 0;
        let params = stack.params();
        for (idx, spec) in stack.specs().iter().enumerate() {
            match spec {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    pad,
                } => {
                    x = conv(&x, params[pi].value.data(), params[pi + 1].value.data(), *filters, *kernel, *stride, *pad);
                    pi += 2;
                }
                LayerSpec::Linear { outputs } => {
                    let w = params[pi].value.data();
                    let b = params[pi + 1].value.data();
                    let v = (0..*outputs)
                        .map(|o| b[o] + (0..x.c).map(|i| w[o * x.c + i] * x.v[i]).sum::<f64>())
                        .collect();
                    x = Act { c: *outputs, h: 1, w: 1, v };
                    pi += 2;
                }
                LayerSpec::BatchNorm => {
                    let g = params[pi].value.data();
                    let be = params[pi + 1].value.data();
                    let st = stack.bn_state(idx).unwrap();
                    let plane = x.h * x.w;
                    for (i, v) in x.v.iter_mut().enumerate() {
                        let ch = i / plane;
                        *v = g[ch] * (*v - st.mean[ch]) / (st.var[ch] + BN_EPS).sqrt() + be[ch];
                    }
                    pi += 2;
                }
                LayerSpec::Relu => x.v.iter_mut().for_each(|v| *v = v.max(0.0)),
                LayerSpec::Dropout { .. } => {}
                LayerSpec::MaxPool { kernel, stride } => {
                    let oh = (x.h - kernel.0) / stride.0 + 1;
                    let ow = (x.w - kernel.1) / stride.1 + 1;
                    let mut v = vec![f64::NEG_INFINITY; x.c * oh * ow];
                    for c in 0..x.c {
                        for y in 0..oh {
                            for xo in 0..ow {
                                for ky in 0..kernel.0 {
                                    for kx in 0..kernel.1 {
                                        let s = x.v[(c * x.h + y * stride.0 + ky) * x.w + xo * stride.1 + kx];
                                        let o = &mut v[(c * oh + y) * ow + xo];
                                        *o = o.max(s);
                                    }
                                }
                            }
                        }
                    }
                    x = Act { c: x.c, h: oh, w: ow, v };
                }
                LayerSpec::GlobalPool(kind) => {
                    let plane = x.h * x.w;
                    let v = x
                        .v
                        .chunks(plane)
                        .map(|p| match kind {
                            PoolKind::Max => p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                            PoolKind::Avg => p.iter().sum::<f64>() / plane as f64,
                        })
                        .collect();
                    x = Act { c: x.c, h: 1, w: 1, v };
                }
                LayerSpec::SoftmaxHead { groups } => {
                    let plane = x.h * x.w;
                    let mut start = 0;
                    for &g in groups {
                        for pos in 0..plane {
                            let at = |k: usize| (start + k) * plane + pos;
                            let m = (0..g).map(|k| x.v[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                            let z: f64 = (0..g).map(|k| (x.v[at(k)] - m).exp()).sum();
                            for k in 0..g {
                                let i = at(k);
                                x.v[i] = (x.v[i] - m).exp() / z;
                            }
                        }
                        start += g;
                    }
                }
            }
        }
        x.v
    }
}

#[test]
fn presets_match_direct_convolution() {
    let cases = [
        ("cmnist-coarse", 16, 16),
        ("cmnist-fine", 16, 16),
        ("cmnist-top", 16, 16),
        ("toy-coarse", 16, 16),
        ("toy-fine", 16, 16),
        ("toy-top", 16, 16),
        ("seq-coarse", 24, 48),
        ("seq-fine", 16, 16),
        ("seq-top", 16, 16),
        ("svhn-coarse", 53, 109),
        ("svhn-fine", 16, 16),
        ("svhn-top", 16, 16),
    ];
    let mut r = rng(42);
    for (name, h, w) in cases {
        let mut stack: LayerStack<f32> = build_preset(name, &mut r).unwrap();
        // non-trivial running statistics and affine terms
        let n_bn = stack.specs().len();
        let stats: Vec<_> = (0..n_bn)
            .filter_map(|i| stack.bn_state(i).map(|s| (i, s.mean.len())))
            .map(|(i, c)| {
                let mean = (0..c).map(|_| r.gen_range(-0.2f32..0.2)).collect();
                let var = (0..c).map(|_| r.gen_range(0.5f32..2.0)).collect();
                (i, crate::tape::BatchStats { mean, var })
            })
            .collect();
        for _ in 0..20 {
            stack.commit_stats(&stats);
        }
        for p in stack.params_mut() {
            if p.name.ends_with(".bias") || p.name.ends_with(".beta") || p.name.ends_with(".gamma") {
                let shift = if p.name.ends_with(".gamma") { 1.0 } else { 0.0 };
                for v in p.value.data_mut() {
                    *v = shift + r.gen_range(-0.1f32..0.1);
                }
            }
        }
        let c = stack.in_channels();
        let x32: Tensor<f32> = Tensor::from_fn(&[1, c, h, w], |_| r.gen_range(-1.0f32..1.0));
        let mut tape = Tape::new();
        let v = tape.constant(x32.clone());
        let out = stack.forward(&mut tape, v, Mode::Infer).unwrap();
        let got = tape.value(out.output).data().to_vec();
        let want = oracle::forward(
            &stack.cast::<f64>(),
            oracle::Act {
                c,
                h,
                w,
                v: x32.data().iter().map(|&v| v as f64).collect(),
            },
        );
        assert_eq!(got.len(), want.len(), "{name}");
        let diff = got
            .iter()
            .zip(&want)
            .map(|(&a, &b)| (a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-5, "{name}: max abs diff {diff}");
    }
}

#[test]
fn layer_costs_match_shapes() {
    let costs = preset("cmnist-coarse").layer_costs(100, 100).unwrap();
    let mults: Vec<u64> = costs.iter().map(|c| c.mults).collect();
    assert_eq!(mults, vec![47 * 47 * 12 * 49, 23 * 23 * 24 * 12 * 9]);
    assert_eq!(costs[0].layer, "cmnist-coarse/conv0");
    let top = preset("cmnist-top").layer_costs(23, 23).unwrap();
    assert_eq!(top.iter().map(|c| c.mults).sum::<u64>(), 3_686_400 + 960);
}

#[test]
fn commit_stats_blends_running_averages() {
    let mut stack = preset("cmnist-coarse");
    let stats = vec![(
        1,
        crate::tape::BatchStats {
            mean: vec![1.0; 12],
            var: vec![3.0; 12],
        },
    )];
    stack.commit_stats(&stats);
    let s = stack.bn_state(1).unwrap();
    assert!((s.mean[0] - 0.1).abs() < 1e-15);
    assert!((s.var[0] - (0.9 + 0.3)).abs() < 1e-15);
}

fn scalar_param(v: f64) -> Vec<Param<f64>> {
    vec![Param {
        name: "x".into(),
        value: Tensor::scalar(v),
    }]
}

#[test]
fn sgd_without_momentum_takes_plain_step() {
    let mut opt = Optimizer::new(OptimizerKind::SgdMomentum { momentum: 0.0 }, 0.1);
    let mut p = scalar_param(0.0);
    opt.step(&mut p, &[Some(&[1.0])]).unwrap();
    assert!((p[0].value.item() + 0.1).abs() < 1e-15);
    assert_eq!(opt.steps(), 1);
}

#[test]
fn adam_moves_against_constant_gradient() {
    for g in [2.5, -0.3] {
        let mut opt = Optimizer::adam();
        let mut p = scalar_param(1.0);
        let mut prev = 1.0;
        for _ in 0..20 {
            opt.step(&mut p, &[Some(&[g])]).unwrap();
            let now = p[0].value.item();
            assert!((now - prev) * g < 0.0);
            prev = now;
        }
    }
}

#[test]
fn adam_on_quadratic_matches_reference_and_decreases() {
    let curv = [1.0, 10.0, 0.1];
    let x0 = [1.0, -2.0, 3.0];
    let objective = |x: &[f64]| x.iter().zip(&curv).map(|(v, a)| 0.5 * a * v * v).sum::<f64>();

    // reference trajectory, written out independently
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
    let mut xr = x0.to_vec();
    let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
    let mut reference = Vec::new();
    for t in 1..=100 {
        for i in 0..3 {
            let g = curv[i] * xr[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            xr[i] -= lr * mh / (vh.sqrt() + eps);
        }
        reference.push(xr.clone());
    }

    let mut opt = Optimizer::adam();
    opt.base_rate = lr;
    let mut p = vec![Param {
        name: "x".into(),
        value: Tensor::new(vec![3], x0.to_vec()).unwrap(),
    }];
    let mut prev = objective(&x0);
    for want in &reference {
        let g: Vec<f64> = p[0].value.data().iter().zip(&curv).map(|(x, a)| a * x).collect();
        opt.step(&mut p, &[Some(&g)]).unwrap();
        for (a, b) in p[0].value.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let now = objective(p[0].value.data());
        assert!(now < prev);
        prev = now;
    }
}

#[test]
fn missing_gradient_names_parameter_and_changes_nothing() {
    let mut opt = Optimizer::adam();
    let mut params = vec![
        Param {
            name: "a".into(),
            value: Tensor::scalar(1.0),
        },
        Param {
            name: "b".into(),
            value: Tensor::scalar(2.0),
        },
    ];
    let before = params.clone();
    let err = opt.step(&mut params, &[Some(&[1.0]), None]).unwrap_err();
    assert!(matches!(err, Error::MissingGrad(ref n) if n == "b"));
    assert_eq!(params, before);
    assert_eq!(opt.steps(), 0);
}

#[test]
fn decayed_rate() {
    let mut opt = Optimizer::sgd_momentum(0.1, 1);
    let mut p = scalar_param(0.0);
    for _ in 0..3 {
        opt.step(&mut p, &[Some(&[0.0])]).unwrap();
    }
    assert!((opt.rate() - 0.1 * 0.97f64.powi(3)).abs() < 1e-15);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let stack: LayerStack<f32> = build_preset("cmnist-top", &mut rng(8)).unwrap();
    let records = stack.state();
    let bytes = encode(&records);
    let back = decode(&bytes).unwrap();
    assert_eq!(back.len(), records.len());
    for ((n1, t1), (n2, t2)) in records.iter().zip(&back) {
        assert_eq!(n1, n2);
        assert_eq!(&AnyTensor::F32(t1.clone()), t2);
    }
    assert_eq!(encode(&back.iter().map(|(n, t)| (n.clone(), t.cast::<f32>())).collect::<Vec<_>>()), bytes);

    let mut other: LayerStack<f32> = build_preset("cmnist-top", &mut rng(9)).unwrap();
    assert_ne!(other, stack);
    let typed: Vec<_> = back.into_iter().map(|(n, t)| (n, t.cast())).collect();
    other.load_state(&typed).unwrap();
    assert_eq!(other, stack);
}

#[test]
fn checkpoint_errors() {
    let records = vec![("w".to_string(), Tensor::<f64>::scalar(1.5))];
    let mut bytes = encode(&records);
    assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
    bytes[0] = b'X';
    assert!(matches!(decode(&bytes), Err(Error::BadMagic { .. })));
    assert!(decode(CHECKPOINT_MAGIC).unwrap().is_empty());
}

fn random_conv_stack(layers: &[(usize, usize, usize)]) -> LayerStack<f64> {
    let specs = layers.iter().map(|&(k, s, p)| LayerSpec::conv(1, k, s, p)).collect();
    let mut stack = LayerStack::new("probe", 1, specs, &mut rng(0)).unwrap();
    for p in stack.params_mut() {
        for v in p.value.data_mut() {
            *v = 1.0;
        }
    }
    stack
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// No pixel outside the rectangle influences the output. With positive
    /// weights and strides no larger than the kernels, every pixel inside
    /// does.
    #[test]
    fn receptive_rect_is_exact_dependency_set(
        layers in proptest::collection::vec((1usize..4, 1usize..3, 0usize..2), 1..4),
        fi in 0usize..4,
        fj in 0usize..4,
    ) {
        let stack = random_conv_stack(&layers);
        let (h, w) = (20usize, 17usize);
        let ActShape::Map { h: gh, w: gw, .. } = stack.output_shape(h, w).unwrap() else { unreachable!() };
        let (i, j) = (fi % gh, fj % gw);
        let rect = stack.receptive_rect((h, w), (i, j)).unwrap();

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 1, h, w], 1.0).with_requires_grad(true));
        let out = stack.forward(&mut tape, x, Mode::Infer).unwrap();
        let sites = [crate::tape::Site::new(0, i, j)];
        let picked = tape.gather(out.output, &sites).unwrap();
        let s = tape.sum(picked);
        tape.backward(s, &[]).unwrap();
        let g = tape.grad(x).unwrap();
        let dense = layers.iter().all(|&(k, s, _)| s <= k);
        for y in 0..h {
            for xx in 0..w {
                let inside = rect.contains(y, xx);
                let touched = g[y * w + xx] != 0.0;
                prop_assert!(inside || !touched, "pixel ({}, {}) outside", y, xx);
                if dense {
                    prop_assert_eq!(touched, inside, "pixel ({}, {})", y, xx);
                }
            }
        }
    }
}
