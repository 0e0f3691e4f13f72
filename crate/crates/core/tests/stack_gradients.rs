use dcn::gradcheck::check_stack;
use dcn::nn::{build_preset, LayerStack, PRESETS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// small enough that a unit-norm step rarely crosses a relu or max-pool kink
const STEP: f64 = 1e-7;

#[test]
fn every_preset_passes_directional_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for name in PRESETS {
        let stack: LayerStack<f64> = build_preset(name, &mut rng).unwrap();
        let worst = check_stack(&stack, 20, STEP, &mut rng).unwrap();
        assert!(worst < 1e-4, "{name}: relative error {worst:e}");
    }
}
