//! Multiplication counts of the coarse, fine, soft-attention and DCN plans,
//! a per-layer breakdown and a sweep over input sizes.
//!
//! cargo run --release --example cost_report -- [family] [size]

use dcn::attention::{DcnModel, InferMode};
use dcn::cost::{plan_cost, size_sweep, Plan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dcn::Result<()> {
    let mut args = std::env::args().skip(1);
    let family = args.next().unwrap_or_else(|| "cmnist".into());
    let size: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let model: DcnModel<f32> = DcnModel::preset(&family, &mut ChaCha8Rng::seed_from_u64(0))?;

    let dcn = |k| Plan::Dcn {
        k,
        scales: vec![1.0],
        mode: InferMode::SwapIn,
    };
    let plans = [Plan::Coarse, Plan::Fine, Plan::SoftAttention, dcn(4), dcn(8)];
    println!("plan,input_h,input_w,k,total_mults");
    for plan in &plans {
        println!("{}", plan_cost(&model, plan, (size, size))?.csv_row());
    }

    println!("\n{}", plan_cost(&model, &dcn(8), (size, size))?.table());

    println!("plan,input_h,input_w,k,total_mults");
    for r in size_sweep(&model, &[60, 100, 140, 200], &[4, 8, 16], InferMode::SwapIn)? {
        println!("{}", r.csv_row());
    }
    Ok(())
}
