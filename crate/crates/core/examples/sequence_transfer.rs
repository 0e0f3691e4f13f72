//! Trains the sequence coarse and fine stacks on centred digit strings,
//! then reads strings placed anywhere on larger cluttered canvases with
//! three plans: the averaged coarse map, the inverse-entropy weighted
//! coarse map and the fine stack on the most salient patches.
//!
//! The fine stack is trained on whole canvases first, then on random
//! windows the size of the coarse receptive field, so it sees cut strings
//! the way it will inside a patch.
//!
//! cargo run --release --example sequence_transfer -- [train] [coarse epochs] [fine epochs] [crop epochs] [test] [k]

use std::time::Instant;

use dcn::attention::DcnModel;
use dcn::data::{synth_multidigit, to_tensor, CanvasSpec};
use dcn::seq::{predict_sequences, sequence_error, SeqPlan};
use dcn::training::{fit, Objective, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> dcn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (n, coarse_epochs, fine_epochs, crop_epochs) = (arg(1, 20000), arg(2, 20), arg(3, 8), arg(4, 12));
    let (n_test, k) = (arg(5, 2000), arg(6, 6));
    let train = synth_multidigit(&CanvasSpec::centred(40, 80, 11), n)?;
    let wild = synth_multidigit(&CanvasSpec::wild(48, 96, 14, 12), n_test)?;
    let cfg = TrainConfig {
        batch_size: 32,
        seed: 13,
        ..TrainConfig::default()
    };

    let mut model: DcnModel<f32> = DcnModel::preset("seq", &mut ChaCha8Rng::seed_from_u64(14))?;
    let (fh, fw) = model.coarse.receptive_field()?.size();
    let stages = [
        ("coarse", Objective::Coarse, train.clone(), coarse_epochs),
        ("fine", Objective::Fine, train.subset(&(0..n / 2).collect::<Vec<_>>()), fine_epochs),
        ("fine on crops", Objective::Fine, train.random_crops(fh, fw, 15)?, crop_epochs),
    ];
    for (name, objective, data, epochs) in stages {
        let start = Instant::now();
        let log = fit(&mut model, &data, None, objective, &TrainConfig { epochs, ..cfg.clone() })?;
        println!("{name} trained in {:.0}s", start.elapsed().as_secs_f64());
        print!("{}", log.to_csv());
    }

    let plans = [
        ("coarse-average", SeqPlan::CoarseAverage),
        ("soft-attention", SeqPlan::SoftAttention),
        ("dcn", SeqPlan::Dcn { k }),
    ];
    for (name, plan) in plans {
        let mut preds = Vec::with_capacity(wild.len());
        for chunk in (0..wild.len()).collect::<Vec<_>>().chunks(50) {
            preds.extend(predict_sequences(&model, &to_tensor(&wild, chunk)?, plan, &[1.0])?);
        }
        let err = sequence_error(&preds, &wild.labels)?;
        println!("{name:<15} wild sequence error {:.2}%", 100.0 * err);
    }
    Ok(())
}
