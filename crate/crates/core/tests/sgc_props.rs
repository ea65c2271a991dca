mod common;

use proptest::prelude::*;
use rand::Rng;
use sgnet_core::gainop::{cascade, GainOperator};
use sgnet_core::kfunc::{self, compose_chain, ScalarFn};
use sgnet_core::sgc::{
    check_chain_condition, check_sgc_cycles, check_sgc_sampled, check_strong_sgc, standard_samples, Status, Witness,
};

use common::{random_explicit, rng};

fn cycle_value(g: &GainOperator, nodes: &[usize], r: f64) -> f64 {
    let gains: Vec<ScalarFn> = (0..nodes.len())
        .map(|k| g.gain(nodes[k], nodes[(k + 1) % nodes.len()]).expect("witness edge exists"))
        .collect();
    compose_chain(&gains).eval(r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn witnesses_are_sound(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(1..=6);
        let g = random_explicit(&mut r, n, 0.4, 3.0);
        let grid = kfunc::default_grid();
        let cycles = check_sgc_cycles(&g, &grid).unwrap();
        if let Some(Witness::Cycle { nodes, r, value }) = &cycles.witness {
            prop_assert!(value >= r);
            prop_assert!((cycle_value(&g, nodes, *r) - value).abs() <= 1e-12 * value.max(1.0));
        }
        let samples = standard_samples(&g, 64, seed).unwrap();
        let sampled = check_sgc_sampled(&g, &samples).unwrap();
        if let Some(Witness::Sequence { s, image }) = &sampled.witness {
            prop_assert!(!s.is_zero());
            prop_assert_eq!(image, &g.apply(s).unwrap());
            prop_assert!(image.ge(s).unwrap());
        }
        // an exact certificate can never be contradicted by sampling
        if cycles.status == Status::Certified {
            prop_assert!(!sampled.is_falsified());
        }
    }

    #[test]
    fn strong_condition_implies_plain(seed in any::<u64>(), rho in 0.05..1.0f64) {
        let mut r = rng(seed);
        let n = r.gen_range(1..=5);
        let g = random_explicit(&mut r, n, 0.4, 2.0);
        let samples = standard_samples(&g, 48, seed).unwrap();
        let strong = check_strong_sgc(&g, &ScalarFn::linear(rho), &samples).unwrap();
        let plain = check_sgc_sampled(&g, &samples).unwrap();
        if plain.is_falsified() {
            prop_assert!(strong.is_falsified());
        }
    }
}

#[test]
fn chain_condition_on_cascades() {
    let g = cascade(10, 0.5).unwrap();
    let v = check_chain_condition(&g, &ScalarFn::linear(0.5), 1.0, 6, 10).unwrap();
    assert_eq!(v.status, Status::Certified);
    let g = cascade(10, 1.0).unwrap();
    assert!(check_chain_condition(&g, &ScalarFn::linear(0.5), 1.0, 6, 10).unwrap().is_falsified());
}
