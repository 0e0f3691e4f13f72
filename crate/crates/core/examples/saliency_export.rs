//! Trains a small cluttered-digit model briefly, then writes the entropy
//! saliency map, the canvas and the selected patch boxes of a few test
//! canvases.
//!
//! cargo run --release --example saliency_export -- [out_dir] [train] [epochs] [k]

use std::fmt::Write as _;
use std::path::PathBuf;

use dcn::attention::{DcnModel, InferMode};
use dcn::data::{normalize_to_u8, synth_cluttered, to_tensor, write_pgm, CanvasSpec};
use dcn::training::{fit, Objective, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dcn::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dcn_saliency"));
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let k: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    std::fs::create_dir_all(&out)?;

    let train = synth_cluttered(&CanvasSpec::cluttered(40, 1), n)?;
    let test = synth_cluttered(&CanvasSpec::cluttered(40, 2), 4)?;
    let mut model: DcnModel<f32> = DcnModel::preset("cmnist", &mut ChaCha8Rng::seed_from_u64(5))?;
    let cfg = TrainConfig {
        k,
        epochs,
        batch_size: 32,
        seed: 3,
        ..TrainConfig::default()
    };
    fit(&mut model, &train, None, Objective::Dcn, &cfg)?;

    let x = to_tensor(&test, &(0..test.len()).collect::<Vec<_>>())?;
    let result = model.infer(&x, k, InferMode::SwapIn)?;
    for (i, (map, patches)) in result.saliency.iter().zip(&result.patches).enumerate() {
        write_pgm(&out.join(format!("saliency_{i}.pgm")), &normalize_to_u8(&map.values), map.rows, map.cols)?;
        write_pgm(&out.join(format!("image_{i}.pgm")), test.image(i), test.height, test.width)?;
        let mut boxes = String::new();
        for (&(r, c), &(top, left)) in patches.positions.iter().zip(&patches.origins) {
            let _ = writeln!(boxes, "{r} {c} {top} {left} {} {}", patches.size.0, patches.size.1);
        }
        std::fs::write(out.join(format!("boxes_{i}.txt")), &boxes)?;
        let pred = argmax(&result.probs[i]);
        println!("canvas {i}: label {:?}, predicted {pred}, patches {:?}", test.labels[i], patches.positions);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}
