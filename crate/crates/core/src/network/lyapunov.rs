//! The composite Lyapunov function and the gains derived from it.

use super::{Network, NetworkError, Result};
use crate::kfunc::{self, ScalarFn};
use crate::path::{invert_knots, DecayPath};

/// `V(x) = max_i σ_i⁻¹(V_i(x_i))` over the network window.
#[derive(Debug, Clone)]
pub struct CompositeV {
    net: Network,
    path: DecayPath,
    /// Sampled `σ_i` values per tracked index.
    knots: Vec<Vec<f64>>,
}

/// Assembles `V` from the subsystem Lyapunov functions and a path of strict decay.
pub fn compose_v(net: &Network, path: &DecayPath) -> Result<CompositeV> {
    if path.window < net.window() {
        return Err(NetworkError::BadArgument(format!(
            "path tracks {} indices but the network has {}",
            path.window,
            net.window()
        )));
    }
    let knots = (1..=net.window()).map(|i| path.samples.iter().map(|s| s.get(i)).collect()).collect();
    Ok(CompositeV { net: net.clone(), path: path.clone(), knots })
}

impl CompositeV {
    pub fn path(&self) -> &DecayPath {
        &self.path
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// `V(x)` together with the first index attaining the maximum (0 at `x = 0`).
    pub fn eval_with_index(&self, x: &[f64]) -> Result<(f64, usize)> {
        self.net.check_state(x)?;
        let mut best = (0.0, 0);
        for (k, v) in self.net.lyapunov_values(x).into_iter().enumerate() {
            let i = k + 1;
            let ys = &self.knots[k];
            let top = ys[ys.len() - 1];
            if v > top * (1.0 + 1e-12) {
                return Err(NetworkError::OutOfRange { i, value: v, top });
            }
            let s = invert_knots(&self.path.r_grid, ys, i, v)?;
            if s > best.0 {
                best = (s, i);
            }
        }
        Ok(best)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_with_index(x)?.0)
    }
}

/// `σ_min⁻¹ ∘ (id + ρ) ∘ γ^u_max`.
pub fn gamma_external_from(sigma_min: &ScalarFn, rho: &ScalarFn, bound: &ScalarFn) -> ScalarFn {
    kfunc::compose(&sigma_min.inverse(), &kfunc::compose(&rho.id_plus(), bound))
}

/// The external gain `γ` of the composite Lyapunov implication.
pub fn gamma_external(path: &DecayPath, net: &Network) -> ScalarFn {
    gamma_external_from(&path.sigma_min, &path.rho, &net.external_gain_bound)
}

/// Gain of the state estimate, `ψ_1⁻¹ ∘ σ_max ∘ γ`: once `V ≤ γ(‖u‖)` the
/// coercivity of `V` bounds `‖x‖` by this function of `‖u‖`.
pub fn iss_gain(path: &DecayPath, net: &Network) -> ScalarFn {
    let outer = kfunc::compose(&net.uniform_coercivity.0.inverse(), &path.sigma_max);
    kfunc::compose(&outer, &gamma_external(path, net))
}

/// Lipschitz bound for `V` on `{‖x‖ ≤ R}`: the steepest inverse slope of
/// the sampled `σ_i` times the largest `L_i(R)`.
pub fn predicted_lipschitz(v: &CompositeV, radius: f64) -> Result<f64> {
    let path = v.path();
    let mut inverse_slope = 0.0f64;
    for i in 1..=v.net.window() {
        let pts = path.component(i)?;
        inverse_slope = inverse_slope.max(pts[0].0 / pts[0].1);
        for w in pts.windows(2) {
            inverse_slope = inverse_slope.max((w[1].0 - w[0].0) / (w[1].1 - w[0].1));
        }
    }
    let l = v.net.subsystems.iter().map(|s| (s.lipschitz_bound)(radius)).fold(0.0, f64::max);
    Ok(inverse_slope * l)
}
