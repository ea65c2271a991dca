//! Trajectory-level checks: the Lyapunov implications, the ISS estimate and
//! the scalar comparison system `v̇ = −α(v)`.

use super::lyapunov::CompositeV;
use super::{euclid, Network, NetworkError, Result, Trajectory};
use crate::envelope::{fit_tabulated, DecaySample, KlEnvelope, FIT_FLOOR};
use crate::kfunc::{self, ClassTag, ScalarFn};
use crate::sgc::{Verdict, Witness};

/// `V(x(t_k))` along a trajectory.
pub fn v_series(v: &CompositeV, traj: &Trajectory) -> Result<Vec<f64>> {
    traj.states.iter().map(|x| v.eval(x)).collect()
}

/// Slack for a forward difference at stride `h` of a function whose
/// derivative changes at rate at most `slope`.
pub fn default_dini_tol(h: f64, slope: f64) -> f64 {
    10.0 * h * slope
}

fn require_positive_definite(f: &ScalarFn, what: &str) -> Result<()> {
    let class = kfunc::check_class(f, &kfunc::default_grid())?;
    if !class.satisfies(ClassTag::PositiveDefinite) {
        return Err(NetworkError::BadArgument(format!("{what} is not positive definite on the sampling grid")));
    }
    Ok(())
}

/// Forward-difference check of `V > γ(‖u‖) ⇒ D⁺V ≤ −α̂(V)` at every grid time
/// where the premise holds and `t + h` lies on the trajectory.
///
/// Metrics: `active` (number of checked times) and `worst_margin`
/// (largest `lhs − rhs`).
pub fn check_decay_implication(
    v: &CompositeV,
    gamma: &ScalarFn,
    alpha_hat: &ScalarFn,
    traj: &Trajectory,
    h: f64,
    tol: f64,
) -> Result<Verdict> {
    require_positive_definite(alpha_hat, "alpha_hat")?;
    if !(h >= traj.dt * (1.0 - 1e-9)) {
        return Err(NetworkError::BadArgument(format!("stride {h} is shorter than the step {}", traj.dt)));
    }
    let stride = ((h / traj.dt).round() as usize).max(1);
    if traj.len() <= stride {
        return Err(NetworkError::Horizon { steps: traj.len().saturating_sub(1), stride });
    }
    let h = stride as f64 * traj.dt;
    let values = v_series(v, traj)?;
    let threshold = gamma.eval(traj.sup_input_norm)?;
    let scope =
        format!("forward differences at stride {h} on {} grid times, tol {tol:e}; {}", traj.len(), v.path().scope);
    let mut active = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..traj.len() - stride {
        if values[k] <= threshold {
            continue;
        }
        active += 1;
        let lhs = (values[k + stride] - values[k]) / h;
        let rhs = -alpha_hat.eval(values[k])?;
        worst = worst.max(lhs - rhs);
        if lhs > rhs + tol {
            return Ok(Verdict::falsified(Witness::Time { trajectory: 0, t: traj.times[k], lhs, rhs }, scope)
                .with_metric("active", active as f64));
        }
    }
    let verdict = Verdict::no_violation(scope).with_metric("active", active as f64);
    Ok(if active > 0 { verdict.with_metric("worst_margin", worst) } else { verdict })
}

/// Premise value `max(max_j γ_ij(V_j(x_j)), γ_iu(|u_i|))` of subsystem `i`.
fn premise_threshold(net: &Network, i: usize, x: &[f64], u_i: &[f64]) -> Result<f64> {
    let sub = &net.subsystems[i - 1];
    let mut threshold = sub.external_gain.eval(euclid(u_i))?;
    for (j, g) in &sub.gains_row {
        let vj = (net.subsystems[j - 1].lyapunov)(net.block(x, *j));
        threshold = threshold.max(g.eval(vj)?);
    }
    Ok(threshold)
}

/// `V_i(x_i) > max(γ_ij(V_j(x_j)), γ_iu(|u_i|)) ⇒ ∇V_i(x_i)·f_i ≤ −α_i(V_i(x_i)) + tol`.
/// Returns `true` when the premise fails.
pub fn check_subsystem_implication(net: &Network, i: usize, x: &[f64], u_i: &[f64], tol: f64) -> Result<bool> {
    net.check_state(x)?;
    if i == 0 || i > net.window() {
        return Err(NetworkError::BadArgument(format!("subsystem {i} outside 1..={}", net.window())));
    }
    let sub = &net.subsystems[i - 1];
    let grad = sub.lyap_gradient.as_ref().ok_or(NetworkError::MissingGradient(i))?;
    if u_i.len() != sub.input_dim {
        return Err(NetworkError::Dimension { expected: sub.input_dim, got: u_i.len() });
    }
    let xi = net.block(x, i);
    let vi = (sub.lyapunov)(xi);
    if vi <= premise_threshold(net, i, x, u_i)? {
        return Ok(true);
    }
    let nb: Vec<&[f64]> = sub.neighbors.iter().map(|&j| net.block(x, j)).collect();
    let f = (sub.dynamics)(&super::LocalState { x: xi, neighbors: &nb, u: u_i, t: 0.0 });
    let derivative: f64 = grad(xi).iter().zip(&f).map(|(g, f)| g * f).sum();
    Ok(derivative <= -sub.decay_rate.eval(vi)? + tol)
}

/// RK4 solution of `v̇ = −α(v)`, `v(0) = v0`, sampled every `dt` on `[0, horizon]`.
/// The curve is clamped to be nonnegative and nonincreasing.
pub fn comparison_solve(alpha: &ScalarFn, v0: f64, horizon: f64, dt: f64) -> Result<Vec<(f64, f64)>> {
    require_positive_definite(alpha, "alpha")?;
    if !(v0 >= 0.0) || !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(NetworkError::BadArgument("need v0 >= 0, dt > 0 and horizon >= 0".into()));
    }
    let steps = (horizon / dt).round() as usize;
    let rate = |v: f64| alpha.eval(v.max(0.0)).map(|a| -a);
    let mut out = Vec::with_capacity(steps + 1);
    let mut v = v0;
    out.push((0.0, v));
    for k in 1..=steps {
        let k1 = rate(v)?;
        let k2 = rate(v + dt / 2.0 * k1)?;
        let k3 = rate(v + dt / 2.0 * k2)?;
        let k4 = rate(v + dt * k3)?;
        v = (v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).clamp(0.0, v);
        out.push((k as f64 * dt, v));
    }
    Ok(out)
}

/// On every maximal run of grid times where the premise of subsystem `i`
/// holds, `V_i(x_i(t)) ≤ v(t − t_a) + tol` with `v` the comparison solution
/// started at `V_i(x_i(t_a))`.
pub fn check_comparison_domination(net: &Network, traj: &Trajectory, i: usize, tol: f64) -> Result<Verdict> {
    if i == 0 || i > net.window() {
        return Err(NetworkError::BadArgument(format!("subsystem {i} outside 1..={}", net.window())));
    }
    let sub = &net.subsystems[i - 1];
    let mut values = Vec::with_capacity(traj.len());
    let mut active = Vec::with_capacity(traj.len());
    for (x, u) in traj.states.iter().zip(&traj.inputs) {
        let vi = (sub.lyapunov)(net.block(x, i));
        active.push(vi > premise_threshold(net, i, x, net.input_block(u, i))?);
        values.push(vi);
    }
    let scope = format!("subsystem {i}, {} grid times, dt {}, tol {tol:e}", traj.len(), traj.dt);
    let mut runs = 0usize;
    let mut a = 0;
    while a < active.len() {
        if !active[a] {
            a += 1;
            continue;
        }
        let mut b = a;
        while b + 1 < active.len() && active[b + 1] {
            b += 1;
        }
        runs += 1;
        let curve = comparison_solve(&sub.decay_rate, values[a], (b - a) as f64 * traj.dt, traj.dt)?;
        for k in a..=b {
            let rhs = curve[(k - a).min(curve.len() - 1)].1;
            if values[k] > rhs + tol {
                return Ok(Verdict::falsified(
                    Witness::Time { trajectory: 0, t: traj.times[k], lhs: values[k], rhs },
                    scope,
                )
                .with_metric("index", i as f64));
            }
        }
        a = b + 1;
    }
    Ok(Verdict::no_violation(scope).with_metric("active_runs", runs as f64))
}

/// `σ_max⁻¹∘ψ_1(‖x‖) ≤ V(x) ≤ σ_min⁻¹∘ψ_2(‖x‖)` on the given states, relative slack `1e-9`.
pub fn check_composite_coercivity(v: &CompositeV, states: &[Vec<f64>]) -> Result<Verdict> {
    let net = v.network();
    let path = v.path();
    let lower = kfunc::compose(&path.sigma_max.inverse(), &net.uniform_coercivity.0);
    let upper = kfunc::compose(&path.sigma_min.inverse(), &net.uniform_coercivity.1);
    let scope = format!("composite coercivity on {} states", states.len());
    for x in states {
        let r = net.norm(x);
        let value = v.eval(x)?;
        let (lo, hi) = (lower.eval(r)?, upper.eval(r)?);
        let slack = 1e-9 * hi.max(1e-300);
        if value < lo - slack {
            return Ok(Verdict::falsified(Witness::GridPoint { r, index: 0, lhs: lo, rhs: value }, scope));
        }
        if value > hi + slack {
            return Ok(Verdict::falsified(Witness::GridPoint { r, index: 0, lhs: value, rhs: hi }, scope));
        }
    }
    Ok(Verdict::no_violation(scope))
}

/// Fits `β` on the training samples where `‖x(t)‖ > γ(‖u‖)`; elsewhere the
/// estimate holds for any `β ≥ 0`.
///
/// `C` is the largest ratio `‖x(0)‖/‖x0‖` among those samples at `t = 0`
/// (the largest ratio overall if none is at `t = 0`), and `λ` the slowest
/// pointwise rate `(‖x(t)‖/(C‖x0‖))^{1/t}`, so `C·r·λ^t` bounds every fitted
/// sample. If that rate is not below 1 the tabulated envelope is returned.
pub fn fit_iss_envelope(trajs: &[Trajectory], net: &Network, gamma_iss: &ScalarFn) -> Result<KlEnvelope> {
    let mut samples = Vec::new();
    for tr in trajs {
        let r = net.norm(tr.x0());
        let offset = gamma_iss.eval(tr.sup_input_norm)?;
        for (t, x) in tr.times.iter().zip(&tr.states) {
            let value = net.norm(x);
            if r > 0.0 && value > offset {
                samples.push(DecaySample { r, t: *t, value });
            }
        }
    }
    if samples.is_empty() {
        return Ok(KlEnvelope::Geometric { c: 0.0, lambda: 0.5 });
    }
    let ratio = |s: &DecaySample| s.value / s.r;
    let at_zero = samples.iter().filter(|s| s.t == 0.0).map(ratio).fold(0.0, f64::max);
    let c = if at_zero > 0.0 { at_zero } else { samples.iter().map(ratio).fold(0.0, f64::max) };
    let lambda = samples
        .iter()
        .filter(|s| s.t > 0.0 && ratio(s) / c > FIT_FLOOR)
        .map(|s| (ratio(s) / c).powf(1.0 / s.t))
        .fold(FIT_FLOOR, f64::max);
    if lambda >= 1.0 {
        return Ok(fit_tabulated(&samples));
    }
    Ok(KlEnvelope::Geometric { c, lambda })
}

/// `‖x(t)‖ ≤ β(‖x0‖, t) + γ(‖u‖)` at every sample of every trajectory, with
/// relative slack `1e-12`.
pub fn check_iss_estimate(
    trajs: &[Trajectory],
    net: &Network,
    beta: &KlEnvelope,
    gamma_iss: &ScalarFn,
) -> Result<Verdict> {
    let scope = format!("ISS estimate on {} trajectories", trajs.len());
    let mut worst = 0.0f64;
    for (k, tr) in trajs.iter().enumerate() {
        let r = net.norm(tr.x0());
        let offset = gamma_iss.eval(tr.sup_input_norm)?;
        for (t, x) in tr.times.iter().zip(&tr.states) {
            let lhs = net.norm(x);
            let rhs = beta.bound(r, *t) + offset;
            if rhs > 0.0 {
                worst = worst.max(lhs / rhs);
            }
            if lhs > rhs * (1.0 + 1e-12) {
                return Ok(Verdict::falsified(Witness::Time { trajectory: k, t: *t, lhs, rhs }, scope));
            }
        }
    }
    Ok(Verdict::no_violation(scope).with_metric("max_ratio", worst))
}
