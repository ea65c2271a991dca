use proptest::prelude::*;
use sgnet_core::kfunc::{self, check_class, compose, invert, max_of, ClassTag, Interval, ScalarFn};

fn gain() -> impl Strategy<Value = ScalarFn> {
    prop_oneof![
        (0.05..5.0f64).prop_map(ScalarFn::linear),
        (0.1..3.0f64, 0.3..2.5f64).prop_map(|(c, p)| ScalarFn::power(c, p)),
        (0.1..5.0f64, 0.1..5.0f64).prop_map(|(c, h)| ScalarFn::saturating(c, h)),
    ]
}

fn unbounded_gain() -> impl Strategy<Value = ScalarFn> {
    prop_oneof![
        (0.05..5.0f64).prop_map(ScalarFn::linear),
        (0.1..3.0f64, 0.3..2.5f64).prop_map(|(c, p)| ScalarFn::power(c, p)),
    ]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn composition_is_associative(f in gain(), g in gain(), h in gain(), r in 0.0..50.0f64) {
        let left = compose(&f, &compose(&g, &h)).eval(r).unwrap();
        let right = compose(&compose(&f, &g), &h).eval(r).unwrap();
        let direct = f.eval(g.eval(h.eval(r).unwrap()).unwrap()).unwrap();
        prop_assert!(close(left, right, 1e-12) && close(left, direct, 1e-12));
    }

    #[test]
    fn inversion_round_trips(f in unbounded_gain(), x in 0.0..20.0f64) {
        let y = f.eval(x).unwrap();
        let top = 40.0f64.max(x * 2.0);
        let back = invert(&f, y, Interval::new(0.0, top), 1e-12).unwrap();
        prop_assert!((back - x).abs() <= 1e-8 * x.max(1.0), "{back} vs {x}");
        let symbolic = f.inverse().eval(y).unwrap();
        prop_assert!((symbolic - x).abs() <= 1e-8 * x.max(1.0));
    }

    #[test]
    fn max_of_is_pointwise_max_and_monotone(f in gain(), g in gain(), r1 in 0.0..30.0f64, dr in 0.0..30.0f64) {
        let m = max_of(&[f.clone(), g.clone()]).unwrap();
        let r2 = r1 + dr;
        prop_assert_eq!(m.eval(r1).unwrap(), f.eval(r1).unwrap().max(g.eval(r1).unwrap()));
        prop_assert!(m.eval(r1).unwrap() <= m.eval(r2).unwrap());
        prop_assert!(f.eval(r1).unwrap() <= f.eval(r2).unwrap());
    }

    #[test]
    fn id_plus_adds_identity(f in gain(), r in 0.0..30.0f64) {
        prop_assert!(close(f.id_plus().eval(r).unwrap(), r + f.eval(r).unwrap(), 1e-12));
    }

    #[test]
    fn positive_linear_is_unbounded(a in 0.01..100.0f64) {
        let class = check_class(&ScalarFn::linear(a), &kfunc::default_grid()).unwrap();
        prop_assert_eq!(class.tag, ClassTag::ClassKInf);
    }
}

#[test]
fn saturating_stays_bounded_class() {
    let class = check_class(&ScalarFn::saturating(1.0, 1.0), &kfunc::default_grid()).unwrap();
    assert_eq!(class.tag, ClassTag::ClassK);
}
