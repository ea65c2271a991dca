mod common;

use proptest::prelude::*;
use sgnet_core::gainop::{kleene_star, twonode, GainOperator, NonnegSeq};
use sgnet_core::kfunc::{self, Interval, ScalarFn};
use sgnet_core::path::{
    build_path_default, invert_path, verify_bilipschitz, verify_decay, verify_envelopes, verify_monotone, DecayPath,
};
use sgnet_core::sgc::{check_sgc_cycles, Status};

use common::{certified_operators, random_seq, rng};

fn grid() -> Vec<f64> {
    kfunc::log_grid(0.05, 20.0, 16)
}

/// Certified operators whose `θ = 0.05` scaling is still certified.
fn scalable(seed: u64) -> Option<(GainOperator, DecayPath)> {
    let g = certified_operators(seed, 1, 5).pop().unwrap();
    let theta = ScalarFn::linear(0.05);
    let scaled = g.scale(&theta).unwrap();
    if check_sgc_cycles(&scaled, &kfunc::default_grid()).unwrap().status != Status::Certified {
        return None;
    }
    let path = build_path_default(&g, &theta, &grid()).ok()?;
    Some((g, path))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constructed_paths_verify(seed in any::<u64>()) {
        let Some((g, path)) = scalable(seed) else { return Ok(()) };
        prop_assert!(verify_decay(&path, &g, 1e-9).unwrap().passed());
        prop_assert!(verify_envelopes(&path).unwrap().passed());
        prop_assert!(verify_monotone(&path, 0.0).unwrap().passed());
        for i in 1..=path.window {
            for (a, &r) in path.r_grid.iter().enumerate() {
                let stored = path.samples[a].get(i);
                prop_assert!((path.finite_representation(i, r).unwrap() - stored).abs() <= path.eps);
                prop_assert_eq!(invert_path(&path, i, stored).unwrap(), r);
            }
        }
    }

    #[test]
    fn closures_lie_on_segments_of_decay(seed in any::<u64>()) {
        let g = certified_operators(seed, 1, 6).pop().unwrap();
        let mut r = rng(seed);
        let s = kleene_star(&g, &random_seq(&mut r, g.window(), 2.0), 0.0, 10_000).unwrap().closure;
        let image = g.apply(&s).unwrap();
        for k in 0..=10 {
            let alpha = k as f64 / 10.0;
            let values = s.values().iter().zip(image.values()).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let seg = NonnegSeq::new(values, 0.0).unwrap();
            prop_assert!(g.apply(&seg).unwrap().le_tol(&seg, 1e-12).unwrap(), "alpha = {alpha}");
        }
    }

    #[test]
    fn larger_theta_dominates(t1 in 0.01..0.2f64, dt in 0.0..0.2f64) {
        let g = twonode(2.0, 0.2).unwrap();
        let low = build_path_default(&g, &ScalarFn::linear(t1), &grid()).unwrap();
        let high = build_path_default(&g, &ScalarFn::linear(t1 + dt), &grid()).unwrap();
        for (a, b) in low.samples.iter().zip(&high.samples) {
            prop_assert!(a.le_tol(b, 1e-12).unwrap());
        }
    }
}

#[test]
fn bilipschitz_matches_exhaustive_pair_scan() {
    let g = GainOperator::explicit(
        3,
        [
            (1, 2, ScalarFn::pwl(vec![(0.0, 0.0), (1.0, 1.5), (4.0, 2.5)])),
            (2, 3, ScalarFn::linear(0.6)),
            (3, 1, ScalarFn::saturating(0.5, 2.0)),
        ],
    )
    .unwrap();
    let path = build_path_default(&g, &ScalarFn::linear(0.05), &grid()).unwrap();
    let k = Interval::new(0.5, 5.0);
    let (c, big_c, verdict) = verify_bilipschitz(&path, k, 1e-6).unwrap();
    assert!(verdict.passed());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let inside: Vec<usize> = (0..path.r_grid.len()).filter(|&a| k.contains(path.r_grid[a])).collect();
    for i in 1..=3 {
        for (x, &a) in inside.iter().enumerate() {
            for &b in &inside[x + 1..] {
                let q = (path.r_grid[b] - path.r_grid[a]) / (path.samples[b].get(i) - path.samples[a].get(i));
                lo = lo.min(q);
                hi = hi.max(q);
            }
        }
    }
    assert!((c - lo).abs() <= 1e-9 * lo && (big_c - hi).abs() <= 1e-9 * hi, "{c} {big_c} vs {lo} {hi}");
    assert!(big_c > c, "mixed slopes give distinct constants");
}

#[test]
fn random_path_suite_is_not_vacuous() {
    let built = (0..20).filter(|&seed| scalable(seed).is_some()).count();
    assert!(built >= 10, "only {built} of 20 random operators produced a path");
}
