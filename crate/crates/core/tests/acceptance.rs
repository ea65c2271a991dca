//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgnet_core::envelope::KlEnvelope;
use sgnet_core::gainop::{
    cascade, example55, kleene_star, twonode, NonnegSeq, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH,
};
use sgnet_core::kfunc::{self, Interval, ScalarFn};
use sgnet_core::network::{
    check_comparison_domination, check_decay_implication, check_iss_estimate, comparison_solve, compose_v,
    fit_iss_envelope, gamma_external, iss_gain, linear_cascade, simulate, simulate_batch, v_series, InputSignal,
    Network, Trajectory,
};
use sgnet_core::path::{
    build_path_default, default_path_grid, verify_bilipschitz, verify_decay, verify_envelopes, verify_monotone,
    DecayPath,
};
use sgnet_core::sgc::{
    check_max_robust_sgc, check_ugas, standard_samples, virtual_reduction_verdict, IndexPartition, Status,
};

use common::{brute_force_chain_sup, certified_operators, random_explicit, random_seq, rng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, f64, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

fn counterexample() -> Outcome {
    let g = example55(64).map_err(err)?;
    let ones = NonnegSeq::ones(64);
    let mut worst = 0.0f64;
    for k in 2..=5u32 {
        let steps = 2usize.pow(k - 1) - 1;
        let value = g.iterate(&ones, steps).map_err(err)?.get(2usize.pow(k));
        let expected = (2f64.powi(k as i32 - 1) + 1.0) / 2f64.powi(k as i32);
        worst = worst.max((value - expected).abs());
    }
    ensure(worst <= 1e-12, || format!("chain values off by {worst:e}"))?;
    let ugas = check_ugas(&g, &[1.0], 31, 0.5).map_err(err)?;
    ensure(ugas.uniform_decay == Some(false), || format!("uniform_decay = {:?}", ugas.uniform_decay))?;
    let samples = standard_samples(&g, 500, 55).map_err(err)?;
    let robust = check_max_robust_sgc(&g, &ScalarFn::linear(0.5), 16, &samples).map_err(err)?;
    ensure(robust.status == Status::NoViolationFound, || format!("max-robust SGC gave {:?}", robust.status))?;
    Ok(format!("chain values exact to {worst:.1e}; uniform_decay=false; max-robust SGC NoViolationFound"))
}

fn kleene_properties() -> Outcome {
    let ops = certified_operators(2024, 50, 8);
    let mut r = rng(99);
    let mut image_checks = 0;
    for (n, g) in ops.iter().enumerate() {
        for _ in 0..4 {
            let s = random_seq(&mut r, g.window(), 3.0);
            let q = kleene_star(g, &s, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH).map_err(err)?;
            ensure(q.converged && s.le(&q.closure).unwrap(), || format!("operator {n}: s <= Q(s) fails"))?;
            let image = g.apply(&q.closure).map_err(err)?;
            ensure(image.le_tol(&q.closure, 1e-9).unwrap(), || format!("operator {n}: Q(s) is not a point of decay"))?;
            let qq = kleene_star(g, &q.closure, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH).map_err(err)?;
            let d = qq.closure.max_abs_diff(&q.closure).unwrap();
            ensure(d <= 1e-9, || format!("operator {n}: Q(Q(s)) differs by {d:e}"))?;
            for candidate in [s, q.closure] {
                let fixed =
                    kleene_star(g, &candidate, 0.0, DEFAULT_KLEENE_MAX_DEPTH).map_err(err)?.closure == candidate;
                let decays = g.apply(&candidate).unwrap().le(&candidate).unwrap();
                ensure(fixed == decays, || format!("operator {n}: image characterization fails"))?;
                image_checks += 1;
            }
        }
    }
    Ok(format!("50 certified operators, 200 closures, {image_checks} image characterization checks"))
}

fn chain_identity() -> Outcome {
    let mut r = rng(33);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = r.gen_range(1..=6);
        let g = random_explicit(&mut r, n, 0.4, 2.0);
        for depth in 0..=4 {
            for radius in [0.5, 1.0, 2.0] {
                let iterated = g.iterate(&NonnegSeq::window_constant(n, radius), depth).map_err(err)?.sup_norm();
                worst = worst.max((iterated - brute_force_chain_sup(&g, depth, radius)).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("largest deviation {worst:e}"))?;
    Ok(format!("20 operators x depths 0..=4 x 3 radii, largest deviation {worst:.1e}"))
}

fn path_construction() -> Outcome {
    let grid: Vec<f64> = (0..64).map(|k| 0.25 * 16f64.powf(k as f64 / 63.0)).collect();
    let g = twonode(2.0, 0.2).map_err(err)?;
    let path = build_path_default(&g, &ScalarFn::linear(0.1), &grid).map_err(err)?;
    let dev = path
        .r_grid
        .iter()
        .zip(&path.samples)
        .map(|(&r, s)| (s.get(1) - 2.2 * r).abs().max((s.get(2) - r).abs()))
        .fold(0.0, f64::max);
    ensure(dev <= 1e-9, || format!("sigma deviates from (2.2r, r) by {dev:e}"))?;
    ensure(verify_decay(&path, &g, 1e-9).map_err(err)?.passed(), || "verify_decay failed".into())?;
    ensure(verify_envelopes(&path).map_err(err)?.passed(), || "verify_envelopes failed".into())?;
    ensure(verify_monotone(&path, 0.0).map_err(err)?.passed(), || "verify_monotone failed".into())?;
    let (c, big_c, v) = verify_bilipschitz(&path, Interval::new(0.5, 2.0), 1e-6).map_err(err)?;
    ensure(v.passed() && (c - 1.0 / 2.2).abs() <= 1e-6 && (big_c - 1.0).abs() <= 1e-6, || {
        format!("c = {c}, C = {big_c}")
    })?;
    Ok(format!("sigma = (2.2r, r) to {dev:.1e}; c = {c:.9}, C = {big_c:.9}"))
}

fn cascade_setup() -> Result<(Network, DecayPath), String> {
    let net = linear_cascade(50, 0.25).map_err(err)?;
    let path =
        build_path_default(&cascade(50, 0.5).map_err(err)?, &ScalarFn::linear(0.1), &default_path_grid(1e-3, 10.0))
            .map_err(err)?;
    Ok((net, path))
}

fn random_x0(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn batch(net: &Network, cases: Vec<(Vec<f64>, InputSignal)>, horizon: f64) -> Result<Vec<Trajectory>, String> {
    simulate_batch(net, &cases, horizon, 1e-3).into_iter().collect::<Result<_, _>>().map_err(err)
}

fn composite_decay() -> Outcome {
    let (net, path) = cascade_setup()?;
    let v = compose_v(&net, &path).map_err(err)?;
    let gamma = gamma_external(&path, &net);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let cases = (0..20).map(|_| (random_x0(&mut r, 50), InputSignal::zero())).collect();
    let trajs = batch(&net, cases, 4.0)?;
    let mut active = 0.0;
    for (k, tr) in trajs.iter().enumerate() {
        let verdict = check_decay_implication(&v, &gamma, &ScalarFn::linear(0.1), tr, 5e-3, 1e-6).map_err(err)?;
        ensure(verdict.passed(), || format!("trajectory {k}: {:?}", verdict.witness))?;
        active += verdict.metrics["active"];
        let series = v_series(&v, tr).map_err(err)?;
        ensure(series.windows(2).all(|w| w[1] <= w[0] + 1e-6), || format!("trajectory {k}: V increases"))?;
    }
    Ok(format!("20 trajectories, {active} active grid times, V nonincreasing"))
}

fn iss_estimate() -> Outcome {
    let (net, path) = cascade_setup()?;
    let gamma_iss = iss_gain(&path, &net);
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let cases = (0..20)
        .map(|_| {
            let x0 = random_x0(&mut r, 50);
            let t0 = (r.gen_range(0.0..2.0f64) * 1000.0).round() / 1000.0;
            let magnitude = r.gen_range(0.0..=0.1);
            (x0, InputSignal::step(t0, magnitude).unwrap())
        })
        .collect();
    let trajs = batch(&net, cases, 6.0)?;
    let (train, held_out) = trajs.split_at(10);
    let beta = fit_iss_envelope(train, &net, &gamma_iss).map_err(err)?;
    let KlEnvelope::Geometric { c, lambda } = beta else {
        return Err(format!("fit fell back to {beta:?}"));
    };
    let verdict = check_iss_estimate(held_out, &net, &beta, &gamma_iss).map_err(err)?;
    ensure(verdict.passed(), || format!("held-out violation {:?}", verdict.witness))?;
    Ok(format!(
        "beta = {c:.4}*r*{lambda:.4}^t, gamma(1) = {:.4}, held-out max ratio {:.4}",
        gamma_iss.eval(1.0).map_err(err)?,
        verdict.metrics["max_ratio"]
    ))
}

fn comparison_oracle() -> Outcome {
    let e = comparison_solve(&ScalarFn::Identity, 1.0, 5.0, 1e-3).map_err(err)?;
    let d1 = e.iter().map(|&(t, v)| (v - (-t).exp()).abs()).fold(0.0, f64::max);
    let q = comparison_solve(&ScalarFn::power(1.0, 2.0), 1.0, 5.0, 1e-3).map_err(err)?;
    let d2 = q.iter().map(|&(t, v)| (v - 1.0 / (1.0 + t)).abs()).fold(0.0, f64::max);
    ensure(d1 <= 1e-8 && d2 <= 1e-8, || format!("analytic deviations {d1:e}, {d2:e}"))?;
    let net = linear_cascade(50, 0.25).map_err(err)?;
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut runs = 0.0;
    for _ in 0..3 {
        let tr = simulate(&net, &random_x0(&mut r, 50), &InputSignal::zero(), 3.0, 1e-3).map_err(err)?;
        for i in 1..=50 {
            let verdict = check_comparison_domination(&net, &tr, i, 1e-6).map_err(err)?;
            ensure(verdict.passed(), || format!("subsystem {i}: {:?}", verdict.witness))?;
            runs += verdict.metrics["active_runs"];
        }
    }
    Ok(format!("analytic deviations {d1:.1e}, {d2:.1e}; {runs} active intervals dominated"))
}

fn virtual_reduction() -> Outcome {
    let g = cascade(50, 0.5).map_err(err)?;
    let partition = IndexPartition { classes: 2, explicit: [(1, 1)].into_iter().collect(), default: 2 };
    let bars = vec![vec![ScalarFn::Zero, ScalarFn::Zero], vec![ScalarFn::linear(0.5), ScalarFn::linear(0.5)]];
    let verdict = virtual_reduction_verdict(&g, &partition, &bars, &kfunc::default_grid()).map_err(err)?;
    ensure(verdict.status == Status::Certified, || format!("virtual operator: {:?}", verdict.status))?;
    let ugas = check_ugas(&g, &[0.1, 1.0, 10.0], 64, 0.5).map_err(err)?;
    ensure(ugas.uniform_decay == Some(true), || "direct UGAS check disagrees".into())?;
    Ok(format!(
        "2-node virtual operator certified (cycle ratio {}), direct uniform decay",
        verdict.metrics["max_cycle_ratio"]
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("counterexample reproduction", 10.0, counterexample),
        ("Kleene closure properties", 30.0, kleene_properties),
        ("chain identity oracle", f64::INFINITY, chain_identity),
        ("path construction", f64::INFINITY, path_construction),
        ("composite Lyapunov decay", 60.0, composite_decay),
        ("ISS estimate", f64::INFINITY, iss_estimate),
        ("comparison oracle", f64::INFINITY, comparison_oracle),
        ("virtual reduction", f64::INFINITY, virtual_reduction),
    ];
    let mut failures = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(detail) if secs > *budget => Err(format!("{detail}; took {secs:.2} s, budget {budget} s")),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failures += outcome.is_err() as usize;
        println!("[{tag}] criterion {} {name} ({secs:.2} s): {detail}", k + 1);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
