//! Fixed-step RK4 integration with a zero-order hold on the input.

use rayon::prelude::*;

use super::{InputSignal, Network, NetworkError, Result};

/// Sup-norm beyond which a trajectory is reported as diverged.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Input held on `[t_k, t_{k+1})`, sampled at `t_k`.
    pub inputs: Vec<Vec<f64>>,
    /// `max_k ‖u(t_k)‖`.
    pub sup_input_norm: f64,
}

impl Trajectory {
    pub fn x0(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(x, k)| x + a * k).collect()
}

/// Integrates the network on `[0, horizon]` with step `dt`.
///
/// The number of steps is `round(horizon/dt)`. Within a step the input is
/// held at its value at the step start, which realizes the right-continuous
/// sampling of piecewise inputs whose jumps lie on the grid.
pub fn simulate(net: &Network, x0: &[f64], u: &InputSignal, horizon: f64, dt: f64) -> Result<Trajectory> {
    net.check_state(x0)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(NetworkError::BadArgument(format!("step {dt} must be positive")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(NetworkError::BadArgument(format!("horizon {horizon} must be nonnegative")));
    }
    let steps = (horizon / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut sup_input = 0.0f64;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let uk = u.sample(net, t);
        sup_input = sup_input.max(net.input_norm(&uk));
        if k < steps {
            let k1 = net.rhs(&x, &uk, t);
            let k2 = net.rhs(&axpy(&x, dt / 2.0, &k1), &uk, t + dt / 2.0);
            let k3 = net.rhs(&axpy(&x, dt / 2.0, &k2), &uk, t + dt / 2.0);
            let k4 = net.rhs(&axpy(&x, dt, &k3), &uk, t + dt);
            let next: Vec<f64> =
                (0..x.len()).map(|n| x[n] + dt / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n])).collect();
            times.push(t);
            states.push(std::mem::replace(&mut x, next));
            inputs.push(uk);
            if x.iter().any(|v| !v.is_finite()) || net.norm(&x) > BLOWUP_THRESHOLD {
                return Err(NetworkError::Divergence { t });
            }
        } else {
            times.push(t);
            states.push(x.clone());
            inputs.push(uk);
        }
    }
    Ok(Trajectory { dt, times, states, inputs, sup_input_norm: sup_input })
}

/// Simulates independent `(x0, u)` cases in parallel, preserving order.
pub fn simulate_batch(
    net: &Network,
    cases: &[(Vec<f64>, InputSignal)],
    horizon: f64,
    dt: f64,
) -> Vec<Result<Trajectory>> {
    cases.par_iter().map(|(x0, u)| simulate(net, x0, u, horizon, dt)).collect()
}

/// Plot table with columns `t, x_1…x_n, V, active`; `v` and `active` are
/// per-time values supplied by the caller.
pub fn trajectory_table(traj: &Trajectory, v: &[f64], active: &[bool]) -> (Vec<String>, Vec<Vec<f64>>) {
    let n = traj.states.first().map_or(0, Vec::len);
    let header = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x_{i}")))
        .chain(["V".to_string(), "active".to_string()])
        .collect();
    let rows = traj
        .times
        .iter()
        .zip(&traj.states)
        .enumerate()
        .map(|(k, (&t, x))| {
            let mut row = Vec::with_capacity(n + 3);
            row.push(t);
            row.extend(x);
            row.push(v[k]);
            row.push(if active[k] { 1.0 } else { 0.0 });
            row
        })
        .collect();
    (header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{affine, linear_cascade};
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_decay_matches_exponential() {
        let net = affine("scalar", &[1.0], &[]).unwrap();
        let tr = simulate(&net, &[1.0], &InputSignal::zero(), 1.0, 1e-3).unwrap();
        assert_eq!(tr.len(), 1001);
        assert_abs_diff_eq!(tr.states[1000][0], (-1.0f64).exp(), epsilon = 1e-9);
        assert_abs_diff_eq!(*tr.times.last().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_stays_zero() {
        let net = linear_cascade(4, 0.25).unwrap();
        let tr = simulate(&net, &[0.0; 4], &InputSignal::zero(), 0.5, 1e-2).unwrap();
        assert!(tr.states.iter().all(|x| x.iter().all(|&v| v == 0.0)));
        assert_eq!(tr.sup_input_norm, 0.0);
    }

    #[test]
    fn blowup_and_arguments() {
        let net = affine("unstable", &[1.0, 1.0], &[(1, 2, 50.0), (2, 1, 50.0)]).unwrap();
        let err = simulate(&net, &[1.0, 1.0], &InputSignal::zero(), 10.0, 1e-2).unwrap_err();
        assert!(matches!(err, NetworkError::Divergence { t } if t > 0.0 && t < 10.0));
        assert!(simulate(&net, &[1.0], &InputSignal::zero(), 1.0, 1e-2).is_err());
        assert!(simulate(&net, &[1.0, 1.0], &InputSignal::zero(), 1.0, 0.0).is_err());
    }

    #[test]
    fn step_input_is_held_from_its_start() {
        let net = affine("scalar", &[1.0], &[]).unwrap();
        let tr = simulate(&net, &[0.0], &InputSignal::step(0.5, 1.0).unwrap(), 1.0, 1e-3).unwrap();
        assert_eq!(tr.states[500][0], 0.0);
        assert_abs_diff_eq!(tr.states[1000][0], 1.0 - (-0.5f64).exp(), epsilon = 1e-9);
        assert_eq!(tr.sup_input_norm, 1.0);
    }

    #[test]
    fn batch_preserves_order() {
        let net = linear_cascade(3, 0.25).unwrap();
        let cases: Vec<_> = (0..4).map(|k| (vec![k as f64; 3], InputSignal::zero())).collect();
        let out = simulate_batch(&net, &cases, 0.1, 1e-2);
        for (k, tr) in out.into_iter().enumerate() {
            assert_eq!(tr.unwrap().x0(), &[k as f64; 3]);
        }
    }
}
