use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;

fn model(family: &str) -> DcnModel<f32> {
    DcnModel::preset(family, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
}

fn dcn(k: usize, mode: InferMode) -> Plan {
    Plan::Dcn {
        k,
        scales: vec![1.0],
        mode,
    }
}

fn images(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 1, h, w], |_| r.gen_range(0.0..1.0))
}

#[test]
fn conv_mults_examples() {
    assert_eq!(conv_mults(3, 16, (3, 3), (6, 6)), 15552);
    assert_eq!(conv_mults(1, 12, (7, 7), (47, 47)), 1_298_892);
    assert_eq!(conv_mults(1, 1, (1, 1), (1, 1)), 1);
}

#[test]
fn cluttered_costs_at_100() {
    let m = model("cmnist");
    let r = plan_cost(&m, &dcn(8, InferMode::SwapIn), (100, 100)).unwrap();
    assert_eq!(r.part_total("coarse"), 2_670_060);
    assert_eq!(r.part_total("top"), 3_687_360);
    assert_eq!(r.part_total("saliency"), 7_374_720);
    assert_eq!(r.part_total("fine"), 8 * 1_156_032);
    assert_eq!(r.part_total("refined-top"), 3_687_360);
    assert_eq!(r.total(), 26_667_756);

    let fine = plan_cost(&m, &Plan::Fine, (100, 100)).unwrap().total();
    let coarse = plan_cost(&m, &Plan::Coarse, (100, 100)).unwrap().total();
    assert_eq!(coarse, 2_670_060 + 3_687_360);
    assert!(fine as f64 / r.total() as f64 >= 2.5, "{fine} vs {}", r.total());
}

#[test]
fn counted_execution_matches_prediction() {
    for (family, size, k, mode) in [
        ("cmnist", (100, 100), 8, InferMode::SwapIn),
        ("toy", (28, 28), 5, InferMode::SwapIn),
        ("seq", (48, 96), 4, InferMode::FineOnly),
    ] {
        let m = model(family);
        let out = m.infer(&images(1, size.0, size.1, 1), k, mode).unwrap();
        let counted = CostReport::from_counter("dcn", size, k, &out.counter);
        let predicted = plan_cost(&m, &dcn(k, mode), size).unwrap();
        for part in PARTS {
            assert_eq!(counted.part_total(part), predicted.part_total(part), "{family} {part}");
        }
        for rec in &predicted.records {
            let c: u64 = counted
                .records
                .iter()
                .filter(|c| c.part == rec.part && c.layer == rec.layer)
                .map(|c| c.mults)
                .sum();
            assert_eq!(c, rec.mults, "{family} {} {}", rec.part, rec.layer);
        }
    }
}

#[test]
fn cost_is_affine_in_k() {
    let m = model("cmnist");
    let cost = |k| plan_cost(&m, &dcn(k, InferMode::SwapIn), (100, 100)).unwrap().total();
    let (c1, c2) = (cost(1), cost(2));
    let step = c2 - c1;
    assert_eq!(step, 1_156_032);
    for k in [4, 8] {
        assert_eq!(cost(k), c1 + step * (k as u64 - 1));
    }
}

#[test]
fn k_extremes() {
    let m = model("cmnist");
    let zero = plan_cost(&m, &dcn(0, InferMode::SwapIn), (100, 100)).unwrap();
    assert_eq!(zero.total(), 2_670_060 + 3_687_360 + 7_374_720);
    let all = plan_cost(&m, &dcn(23 * 23, InferMode::SwapIn), (100, 100)).unwrap();
    let fine = plan_cost(&m, &Plan::Fine, (100, 100)).unwrap();
    assert!(all.total() >= fine.total());
    assert!(matches!(
        plan_cost(&m, &dcn(23 * 23 + 1, InferMode::SwapIn), (100, 100)),
        Err(Error::KOutOfRange { .. })
    ));
}

#[test]
fn counts_do_not_depend_on_pixel_values() {
    let m = model("cmnist");
    let a = m.infer(&images(1, 60, 60, 1), 4, InferMode::SwapIn).unwrap().counter;
    let b = m.infer(&Tensor::zeros(&[1, 1, 60, 60]), 4, InferMode::SwapIn).unwrap().counter;
    assert_eq!(a.total(), b.total());
    assert_eq!(a, b);
}

#[test]
fn multi_scale_sums_scales() {
    let m = model("seq");
    let plan = Plan::Dcn {
        k: 2,
        scales: vec![1.0, 0.5],
        mode: InferMode::FineOnly,
    };
    let r = plan_cost(&m, &plan, (48, 96)).unwrap();
    let one = |s: f64| {
        let h = (48.0 * s) as usize;
        let w = (96.0 * s) as usize;
        let cells = m.grid(h, w).unwrap();
        plan_cost(&m, &dcn(2.min(cells.0 * cells.1), InferMode::FineOnly), (h, w)).unwrap().total()
    };
    assert_eq!(r.total(), one(1.0) + one(0.5));
    assert!(r.table().contains("fine"));
    assert_eq!(r.csv_row(), format!("dcn,48,96,2,{}", r.total()));
}
