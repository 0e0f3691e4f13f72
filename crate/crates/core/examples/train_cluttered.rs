//! Trains the coarse model, a DCN without hints and a DCN with hints on
//! synthetic cluttered digits and compares their test errors.
//!
//! cargo run --release --example train_cluttered -- [examples] [epochs] [k]

use std::time::Instant;

use dcn::attention::{DcnModel, InferMode};
use dcn::data::{synth_cluttered, CanvasSpec};
use dcn::training::{evaluate, fit, mean_hint_distance, Objective, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> dcn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (n, epochs, k) = (arg(1, 2000), arg(2, 5), arg(3, 4));
    let train = synth_cluttered(&CanvasSpec::cluttered(40, 1), n)?;
    let test = synth_cluttered(&CanvasSpec::cluttered(40, 2), n / 5)?;
    let base = TrainConfig {
        k,
        epochs,
        batch_size: 32,
        seed: 3,
        ..TrainConfig::default()
    };
    let init: DcnModel<f32> = DcnModel::preset("cmnist", &mut ChaCha8Rng::seed_from_u64(5))?;

    let runs = [
        ("fine", Objective::Fine, 0.0),
        ("coarse", Objective::Coarse, 0.0),
        ("dcn-no-hints", Objective::Dcn, 0.0),
        ("dcn-hints", Objective::Dcn, base.lambda),
    ];
    for (name, objective, lambda) in runs {
        let start = Instant::now();
        let mut model = init.clone();
        let cfg = TrainConfig { lambda, ..base.clone() };
        let log = fit(&mut model, &train, None, objective, &cfg)?;
        let err = match objective {
            Objective::Dcn => evaluate(&model, &test, objective, k, InferMode::SwapIn)?,
            _ => evaluate(&model, &test, objective, 0, InferMode::SwapIn)?,
        };
        let hint = mean_hint_distance(&model, &test, k)?;
        println!(
            "{name:<13} test error {:.2}%  hint distance {hint:.4}  ({:.0}s)",
            100.0 * err,
            start.elapsed().as_secs_f64()
        );
        print!("{}", log.to_csv());
        if objective == Objective::Dcn {
            for kk in [1, 2, 4, 8, 16] {
                let e = evaluate(&model, &test, Objective::Dcn, kk, InferMode::SwapIn)?;
                println!("  k={kk:<2} error {:.2}%", 100.0 * e);
            }
        }
    }
    Ok(())
}
