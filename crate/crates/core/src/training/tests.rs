use super::*;
use crate::data::{synth_cluttered, CanvasSpec};
use crate::gradcheck::weighted_sum;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn toy(seed: u64) -> DcnModel<f64> {
    DcnModel::preset("toy", &mut rng(seed)).unwrap()
}

fn noise(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(&[n, 1, h, w], |_| r.gen_range(0.0..1.0))
}

fn all_zero(g: Option<&[f64]>) -> bool {
    g.map_or(true, |g| g.iter().all(|&v| v == 0.0))
}

#[test]
fn cross_entropy_examples() {
    let mut onehot = vec![0.0; 10];
    onehot[3] = 1.0;
    assert_eq!(cross_entropy_loss(&onehot, 3).unwrap(), 0.0);
    assert!((cross_entropy_loss(&[0.1; 10], 7).unwrap() - 10f64.ln()).abs() < 1e-12);
    assert!((cross_entropy_loss(&[0.25, 0.75], 0).unwrap() - 1.386294).abs() < 1e-6);
    assert!((cross_entropy_loss(&[0.0, 1.0], 0).unwrap() - 1e12f64.ln()).abs() < 1e-9);
    assert!(matches!(cross_entropy_loss(&[1.0], 1), Err(Error::LabelOutOfRange { .. })));
}

#[test]
fn hint_loss_examples() {
    let a = vec![vec![1.0, 2.0], vec![0.5, 0.5]];
    assert_eq!(hint_loss(&a, &a).unwrap(), 0.0);
    assert_eq!(hint_loss(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap(), 2.0);
    assert!(hint_loss(&a, &a[..1]).is_err());
    assert!(hint_loss(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
}

#[test]
fn error_rate_examples() {
    let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
    let perfect: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| (0..10).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
        .collect();
    assert_eq!(error_rate(&perfect, &labels).unwrap(), 0.0);
    let mut constant = vec![0.0; 10];
    constant[4] = 1.0;
    assert!((error_rate(&vec![constant; 100], &labels).unwrap() - 0.9).abs() < 1e-12);
    assert!(matches!(error_rate(&[], &[]), Err(Error::Empty(_))));
    let m = toy(0);
    assert!(matches!(
        evaluate(&m, &Dataset::new(28, 28, 1), Objective::Coarse, 0, InferMode::SwapIn),
        Err(Error::Empty(_))
    ));
}

#[test]
fn sequence_targets_use_the_null_class() {
    let t = Targets::from_labels(HeadKind::Sequence, &[vec![3, 7]]).unwrap();
    assert_eq!(t, Targets::Sequences(vec![[1, 3, 7, 10, 10, 10]]));
    assert!(matches!(
        Targets::from_labels(HeadKind::Sequence, &[vec![]]),
        Err(Error::SequenceLength(0))
    ));
    assert!(matches!(
        Targets::from_labels(HeadKind::Classes(10), &[vec![12]]),
        Err(Error::LabelOutOfRange { .. })
    ));

    let mut r = rng(1);
    let mut row = Vec::new();
    for size in crate::nn::SEQ_GROUPS {
        let raw: Vec<f64> = (0..size).map(|_| r.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        row.extend(raw.iter().map(|v| v / s));
    }
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::new(vec![1, 60], row.clone()).unwrap());
    let ce = cross_entropy_on_tape(&mut tape, p, &t).unwrap();
    let want = -(row[1].ln() + row[5 + 3].ln() + row[16 + 7].ln() + row[27 + 10].ln() + row[38 + 10].ln() + row[49 + 10].ln());
    assert!((tape.value(ce).item() - want).abs() < 1e-12);
}

#[test]
fn hint_gradient_reaches_only_the_coarse_stack() {
    let m = toy(2);
    let x = noise(3, 28, 28, 3);
    let targets = Targets::Classes(vec![1, 2, 3]);
    let (sel, _) = m.select(&x, 3).unwrap();
    let mut g = dcn_objective(&m, &x, &targets, &sel, 1.0, step_modes(5)).unwrap();
    g.tape.backward(g.loss, &[]).unwrap();
    let fine = g.fine.as_ref().unwrap();
    assert!(fine.params.iter().all(|&p| all_zero(g.tape.grad(p))));
    assert!(g.top.params.iter().all(|&p| all_zero(g.tape.grad(p))));
    assert!(g.coarse.params.iter().any(|&p| !all_zero(g.tape.grad(p))));
    assert!(g.tape.value(g.hint).item() > 0.0);
}

#[test]
fn zero_lambda_is_plain_cross_entropy() {
    let m = toy(4);
    let x = noise(2, 28, 28, 5);
    let targets = Targets::Classes(vec![0, 9]);
    let (sel, _) = m.select(&x, 2).unwrap();
    let g = dcn_objective(&m, &x, &targets, &sel, 0.0, [Mode::Infer; 3]).unwrap();
    assert_eq!(g.tape.value(g.loss).item(), g.tape.value(g.cross_entropy).item());
}

/// The fine-stack gradient is the sum of per-patch contributions of the
/// selected positions only.
#[test]
fn fine_gradient_comes_from_selected_patches_only() {
    let m = toy(6);
    let x = noise(1, 28, 28, 7);
    let targets = Targets::Classes(vec![4]);
    for k in [1usize, 3] {
        let (sel, _) = m.select(&x, k).unwrap();
        let mut g = dcn_objective(&m, &x, &targets, &sel, 0.0, [Mode::Infer; 3]).unwrap();
        g.tape.backward(g.loss, &[]).unwrap();
        let fine = g.fine.as_ref().unwrap();
        let upstream = g.tape.grad(fine.output).unwrap().to_vec();
        let d = m.fine.out_channels();
        let (patches, sites, _) = m.patch_batch(&x, &sel).unwrap();
        assert_eq!(sites.len(), k);

        let mut summed: Vec<Vec<f64>> = m.fine.params().iter().map(|p| vec![0.0; p.value.numel()]).collect();
        for p in 0..k {
            let mut tape = Tape::new();
            let one = tape.constant(patches.sample(p).unwrap());
            let out = m.fine.forward(&mut tape, one, Mode::Infer).unwrap();
            let w = Tensor::new(tape.shape(out.output).to_vec(), upstream[p * d..(p + 1) * d].to_vec()).unwrap();
            let s = weighted_sum(&mut tape, out.output, &w).unwrap();
            tape.backward(s, &[]).unwrap();
            for (acc, &pv) in summed.iter_mut().zip(&out.params) {
                for (a, v) in acc.iter_mut().zip(tape.grad(pv).unwrap()) {
                    *a += v;
                }
            }
        }
        for (acc, &pv) in summed.iter().zip(&fine.params) {
            for (a, b) in acc.iter().zip(g.tape.grad(pv).unwrap()) {
                assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            }
        }
    }
}

#[test]
fn failed_steps_leave_the_model_unchanged() {
    let mut m = toy(8);
    let before = m.clone();
    let mut opts = Optimizers::from_config(&TrainConfig::default());
    let cfg = TrainConfig {
        k: 2,
        ..TrainConfig::default()
    };
    let x = noise(2, 28, 28, 9);
    let bad_targets = Targets::Classes(vec![1, 11]);
    assert!(train_step(&mut m, &mut opts, &x, &bad_targets, &cfg, 0).is_err());
    let mut nan = x.clone();
    nan.data_mut()[5] = f64::NAN;
    assert!(train_step(&mut m, &mut opts, &nan, &Targets::Classes(vec![1, 2]), &cfg, 0).is_err());
    assert_eq!(m, before);
    assert_eq!(opts.coarse.steps(), 0);
}

fn small_cluttered(n: usize, seed: u64) -> Dataset {
    synth_cluttered(&CanvasSpec::cluttered(28, seed), n).unwrap()
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let data = small_cluttered(50, 1);
    let idx: Vec<usize> = (0..50).collect();
    for family in ["toy", "cmnist"] {
        let mut m: DcnModel<f32> = DcnModel::preset(family, &mut rng(10)).unwrap();
        let x = to_tensor::<f32>(&data, &idx).unwrap();
        let t = Targets::from_labels(m.head, &data.labels).unwrap();
        let cfg = TrainConfig {
            k: 2,
            ..TrainConfig::default()
        };
        let mut opts = Optimizers::from_config(&cfg);
        let losses: Vec<f64> = (0..20)
            .map(|s| train_step(&mut m, &mut opts, &x, &t, &cfg, s).unwrap().loss)
            .collect();
        let head: f64 = losses[..3].iter().sum();
        let tail: f64 = losses[17..].iter().sum();
        assert!(tail < head, "{family}: {losses:?}");
    }
}

#[test]
fn hints_alone_pull_coarse_toward_fine() {
    let data = small_cluttered(16, 2);
    let idx: Vec<usize> = (0..16).collect();
    let mut m: DcnModel<f32> = DcnModel::preset("cmnist", &mut rng(11)).unwrap();
    let x = to_tensor::<f32>(&data, &idx).unwrap();
    let t = Targets::from_labels(m.head, &data.labels).unwrap();
    let frozen = Trainable {
        coarse: true,
        fine: false,
        top: false,
    };
    let cfg = TrainConfig {
        k: 2,
        lambda: 1.0,
        trainable: frozen,
        ..TrainConfig::default()
    };
    let mut opts = Optimizers::from_config(&cfg);
    let fine_before = m.fine.params().to_vec();
    let top_before = m.top.params().to_vec();

    // fixed patches: the hint objective is a fixed function of the coarse weights
    let (sel, _) = m.select(&x, cfg.k).unwrap();
    let modes = [Mode::Train { seed: 0 }, Mode::Infer, Mode::Infer];
    let mut hints = Vec::new();
    for _ in 0..50 {
        let mut g = dcn_objective(&m, &x, &t, &sel, 1.0, modes).unwrap();
        g.tape.backward(g.loss, &[]).unwrap();
        hints.push(g.tape.value(g.hint).item() as f64);
        apply_updates(&mut m, &mut opts, &g.tape, [Some(&g.coarse), g.fine.as_ref(), Some(&g.top)], frozen).unwrap();
    }
    assert!(hints.windows(2).all(|w| w[1] < w[0]), "{hints:?}");
    assert_eq!(m.fine.params(), &fine_before[..]);
    assert_eq!(m.top.params(), &top_before[..]);

    // the same trend through the full training step, where selection moves
    let mut m: DcnModel<f32> = DcnModel::preset("cmnist", &mut rng(11)).unwrap();
    let mut opts = Optimizers::from_config(&cfg);
    let hints: Vec<f64> = (0..50)
        .map(|s| train_step(&mut m, &mut opts, &x, &t, &cfg, s).unwrap().hint)
        .collect();
    let first: f64 = hints[..10].iter().sum();
    let last: f64 = hints[40..].iter().sum();
    assert!(last < 0.8 * first, "{hints:?}");
}

#[test]
fn equal_seeds_give_identical_runs() {
    let data = small_cluttered(60, 3);
    let cfg = TrainConfig {
        k: 2,
        epochs: 2,
        batch_size: 16,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m: DcnModel<f32> = DcnModel::preset("toy", &mut rng(12)).unwrap();
        let log = fit(&mut m, &data, None, Objective::Dcn, &cfg).unwrap();
        (log, m)
    };
    let (la, ma) = run();
    let (lb, mb) = run();
    assert_eq!(la.to_csv(), lb.to_csv());
    assert_eq!(crate::nn::encode(&ma.state()), crate::nn::encode(&mb.state()));
    assert_eq!(la.records.len(), 2);
    assert!(la.to_csv().starts_with(TRAIN_LOG_HEADER));
}

#[test]
fn plain_objectives_and_checkpoints() {
    let data = small_cluttered(40, 5);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        k: 1,
        epochs: 2,
        batch_size: 20,
        checkpoint: Some(Checkpointing {
            every: 1,
            dir: dir.path().to_path_buf(),
        }),
        ..TrainConfig::default()
    };
    for objective in [Objective::Coarse, Objective::Fine] {
        let mut m: DcnModel<f32> = DcnModel::preset("cmnist", &mut rng(13)).unwrap();
        let before = m.clone();
        let log = fit(&mut m, &data, None, objective, &cfg).unwrap();
        assert_eq!(log.records.len(), 2);
        match objective {
            Objective::Coarse => assert_eq!(m.fine, before.fine),
            _ => assert_eq!(m.coarse, before.coarse),
        }
    }
    let saved = crate::nn::read_checkpoint_as::<f32>(&dir.path().join("epoch-2.ckpt")).unwrap();
    assert!(!saved.is_empty());
    let bad = TrainConfig {
        lambda: 1.5,
        ..TrainConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::InvalidValue { .. })));
}
