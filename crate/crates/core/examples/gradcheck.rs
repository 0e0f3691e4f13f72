//! Finite-difference check of every tape primitive and of every preset
//! stack end to end.
//!
//! cargo run --release --example gradcheck -- [trials]

use dcn::gradcheck::{check_primitive, check_stack, primitive_cases};
use dcn::nn::{build_preset, LayerStack, PRESETS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dcn::Result<()> {
    let trials: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    println!("{:<22} {:>12}", "primitive", "max rel err");
    for (prim, shapes) in primitive_cases() {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            worst = worst.max(check_primitive(&prim, &shapes, 1e-5, 64, &mut rng)?.max_error());
        }
        println!("{:<22} {:>12.2e}", format!("{prim} {shapes:?}").chars().take(22).collect::<String>(), worst);
    }

    println!("\n{:<16} {:>10} {:>12}", "stack", "params", "max rel err");
    for name in PRESETS {
        let stack: LayerStack<f64> = build_preset(name, &mut rng)?;
        let worst = check_stack(&stack, trials, 1e-7, &mut rng)?;
        println!("{:<16} {:>10} {:>12.2e}", name, stack.param_count(), worst);
    }
    Ok(())
}
