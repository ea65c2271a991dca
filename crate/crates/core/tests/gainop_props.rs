mod common;

use proptest::prelude::*;
use rand::Rng;
use sgnet_core::gainop::{kleene_star, oplus, NonnegSeq, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH};
use sgnet_core::kfunc::{self, ScalarFn};
use sgnet_core::sgc::{check_sgc_cycles, Status};

use common::{brute_force_chain_sup, certified_operators, random_explicit, random_seq, rng};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_is_monotone_and_max_preserving(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(1..=7);
        let g = random_explicit(&mut r, n, 0.4, 3.0);
        let s1 = random_seq(&mut r, n, 4.0);
        let s2 = random_seq(&mut r, n, 4.0);
        let joined = oplus(&s1, &s2).unwrap();
        prop_assert_eq!(g.apply(&joined).unwrap(), oplus(&g.apply(&s1).unwrap(), &g.apply(&s2).unwrap()).unwrap());
        prop_assert!(g.apply(&s1).unwrap().le(&g.apply(&joined).unwrap()).unwrap());
    }

    #[test]
    fn chain_supremum_matches_enumeration(seed in any::<u64>(), depth in 0usize..=4, r in prop::sample::select(vec![0.5, 1.0, 2.0])) {
        let mut rg = rng(seed);
        let n = rg.gen_range(1..=6);
        let g = random_explicit(&mut rg, n, 0.4, 2.0);
        let iterated = g.iterate(&NonnegSeq::window_constant(n, r), depth).unwrap().sup_norm();
        let oracle = brute_force_chain_sup(&g, depth, r);
        prop_assert!((iterated - oracle).abs() <= 1e-12 * oracle.max(1.0), "{iterated} vs {oracle}");
    }

    #[test]
    fn closure_properties(seed in any::<u64>()) {
        let g = certified_operators(seed, 1, 8).pop().unwrap();
        let mut r = rng(seed ^ 0x5eed);
        let s = random_seq(&mut r, g.window(), 3.0);
        let q = kleene_star(&g, &s, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH).unwrap();
        prop_assert!(q.converged);
        prop_assert!(s.le(&q.closure).unwrap());
        prop_assert!(g.apply(&q.closure).unwrap().le_tol(&q.closure, 1e-9).unwrap());
        let qq = kleene_star(&g, &q.closure, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH).unwrap();
        prop_assert!(qq.closure.max_abs_diff(&q.closure).unwrap() <= 1e-9);
    }

    #[test]
    fn fixed_points_of_closure_are_points_of_decay(seed in any::<u64>()) {
        let g = certified_operators(seed, 1, 6).pop().unwrap();
        let mut r = rng(seed ^ 0xdeca);
        let base = random_seq(&mut r, g.window(), 2.0);
        let image = kleene_star(&g, &base, 0.0, DEFAULT_KLEENE_MAX_DEPTH).unwrap().closure;
        for s in [base, image] {
            let q = kleene_star(&g, &s, 0.0, DEFAULT_KLEENE_MAX_DEPTH).unwrap().closure;
            prop_assert_eq!(q == s, g.apply(&s).unwrap().le(&s).unwrap());
        }
    }

    #[test]
    fn scaled_closure_gives_decay_margin(seed in any::<u64>(), theta in 0.01..0.3f64) {
        let g = certified_operators(seed, 1, 6).pop().unwrap();
        let scaled = g.scale(&ScalarFn::linear(theta)).unwrap();
        let mut r = rng(seed ^ 0x7e7a);
        let s = random_seq(&mut r, g.window(), 2.0);
        prop_assume!(check_sgc_cycles(&scaled, &kfunc::default_grid()).unwrap().status == Status::Certified);
        let q = kleene_star(&scaled, &s, 0.0, DEFAULT_KLEENE_MAX_DEPTH).unwrap();
        prop_assert!(q.converged);
        let image = g.apply(&q.closure).unwrap();
        let shrunk = q.closure.scaled(1.0 / (1.0 + theta));
        prop_assert!(image.le_tol(&shrunk, 1e-12).unwrap());
    }
}
