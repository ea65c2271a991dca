//! Finite truncations of infinite ODE networks: subsystem descriptions,
//! RK4 simulation, the composite Lyapunov function `V(x) = max_i σ_i⁻¹(V_i(x_i))`
//! and trajectory-level checks of the ISS Lyapunov implication.
//!
//! The full state is a flat vector; subsystem `i` (1-based) occupies a
//! contiguous block of `dim` entries. Norms of subsystem states and inputs
//! are Euclidean, the network norm is the maximum over subsystems.

mod checks;
mod lyapunov;
mod simulate;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::gainop::{GainError, GainOperator};
use crate::kfunc::{KfuncError, ScalarFn};
use crate::path::PathError;
use crate::sgc::{SgcError, Verdict, Witness};

pub use checks::{
    check_comparison_domination, check_composite_coercivity, check_decay_implication, check_iss_estimate,
    check_subsystem_implication, comparison_solve, default_dini_tol, fit_iss_envelope, v_series,
};
pub use lyapunov::{compose_v, gamma_external, gamma_external_from, iss_gain, predicted_lipschitz, CompositeV};
pub use simulate::{simulate, simulate_batch, trajectory_table, Trajectory, BLOWUP_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("state has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("{0}")]
    BadArgument(String),
    #[error("trajectory diverged after t = {t}")]
    Divergence { t: f64 },
    #[error("V_{i} = {value} exceeds the sampled image {top} of sigma_{i}; extend the radius grid")]
    OutOfRange { i: usize, value: f64, top: f64 },
    #[error("subsystem {0} has no Lyapunov gradient")]
    MissingGradient(usize),
    #[error("horizon of {steps} steps is shorter than the difference stride {stride}")]
    Horizon { steps: usize, stride: usize },
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Function(#[from] KfuncError),
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    Sgc(#[from] SgcError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// Everything a subsystem's right-hand side may read.
pub struct LocalState<'a> {
    pub x: &'a [f64],
    /// States of `Subsystem::neighbors`, in the same order.
    pub neighbors: &'a [&'a [f64]],
    pub u: &'a [f64],
    pub t: f64,
}

pub type Dynamics = Arc<dyn Fn(&LocalState<'_>) -> Vec<f64> + Send + Sync>;
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type BoundFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Subsystem {
    pub dim: usize,
    pub input_dim: usize,
    pub dynamics: Dynamics,
    /// `V_i`.
    pub lyapunov: StateFn,
    pub lyap_gradient: Option<GradientFn>,
    /// Indices `I_i` this subsystem reads, within the network window.
    pub neighbors: Vec<usize>,
    /// `γ_ij`, supported on `neighbors`.
    pub gains_row: Vec<(usize, ScalarFn)>,
    /// `γ_iu`.
    pub external_gain: ScalarFn,
    /// `α_i`.
    pub decay_rate: ScalarFn,
    /// `(ψ_i1, ψ_i2)` with `ψ_i1(|x_i|) ≤ V_i(x_i) ≤ ψ_i2(|x_i|)`.
    pub coercivity: (ScalarFn, ScalarFn),
    /// Lipschitz constant of `V_i` on `{|x_i| ≤ R}`.
    pub lipschitz_bound: BoundFn,
}

impl fmt::Debug for Subsystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subsystem")
            .field("dim", &self.dim)
            .field("input_dim", &self.input_dim)
            .field("neighbors", &self.neighbors)
            .field("gains_row", &self.gains_row)
            .field("external_gain", &self.external_gain)
            .field("decay_rate", &self.decay_rate)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub name: String,
    pub subsystems: Vec<Subsystem>,
    /// `(ψ_1, ψ_2)` with `ψ_1 ≤ ψ_i1` and `ψ_i2 ≤ ψ_2`.
    pub uniform_coercivity: (ScalarFn, ScalarFn),
    /// `α̃ ≤ α_i`.
    pub uniform_decay: ScalarFn,
    /// `γ^u_max ≥ γ_iu`.
    pub external_gain_bound: ScalarFn,
    offsets: Vec<usize>,
    input_offsets: Vec<usize>,
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Network {
    pub fn new(
        name: impl Into<String>,
        subsystems: Vec<Subsystem>,
        uniform_coercivity: (ScalarFn, ScalarFn),
        uniform_decay: ScalarFn,
        external_gain_bound: ScalarFn,
    ) -> Result<Self> {
        let n = subsystems.len();
        for (k, sub) in subsystems.iter().enumerate() {
            let i = k + 1;
            if sub.dim == 0 {
                return Err(NetworkError::BadArgument(format!("subsystem {i} has dimension 0")));
            }
            if let Some(&j) = sub.neighbors.iter().find(|&&j| j == 0 || j > n) {
                return Err(NetworkError::BadArgument(format!("subsystem {i} reads index {j} outside 1..={n}")));
            }
            if let Some((j, _)) = sub.gains_row.iter().find(|(j, _)| !sub.neighbors.contains(j)) {
                return Err(NetworkError::BadArgument(format!("gain ({i}, {j}) has no matching neighbor")));
            }
        }
        let offsets = prefix_sums(subsystems.iter().map(|s| s.dim));
        let input_offsets = prefix_sums(subsystems.iter().map(|s| s.input_dim));
        Ok(Network {
            name: name.into(),
            subsystems,
            uniform_coercivity,
            uniform_decay,
            external_gain_bound,
            offsets,
            input_offsets,
        })
    }

    pub fn window(&self) -> usize {
        self.subsystems.len()
    }

    pub fn state_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        *self.input_offsets.last().unwrap()
    }

    /// Block of subsystem `i` (1-based) inside a full state vector.
    pub fn block<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[self.offsets[i - 1]..self.offsets[i]]
    }

    pub fn input_block<'a>(&self, u: &'a [f64], i: usize) -> &'a [f64] {
        &u[self.input_offsets[i - 1]..self.input_offsets[i]]
    }

    /// `‖x‖ = max_i |x_i|`.
    pub fn norm(&self, x: &[f64]) -> f64 {
        (1..=self.window()).map(|i| euclid(self.block(x, i))).fold(0.0, f64::max)
    }

    /// `‖u(t)‖ = max_i |u_i(t)|` for a sampled full input vector.
    pub fn input_norm(&self, u: &[f64]) -> f64 {
        (1..=self.window()).map(|i| euclid(self.input_block(u, i))).fold(0.0, f64::max)
    }

    pub fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(NetworkError::Dimension { expected: self.state_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Values `V_i(x_i)` for all subsystems.
    pub fn lyapunov_values(&self, x: &[f64]) -> Vec<f64> {
        self.subsystems.iter().enumerate().map(|(k, s)| (s.lyapunov)(self.block(x, k + 1))).collect()
    }

    /// Right-hand side `f(x, u, t)` of the whole network.
    pub fn rhs(&self, x: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        for (k, sub) in self.subsystems.iter().enumerate() {
            let i = k + 1;
            let nb: Vec<&[f64]> = sub.neighbors.iter().map(|&j| self.block(x, j)).collect();
            let local = LocalState { x: self.block(x, i), neighbors: &nb, u: self.input_block(u, i), t };
            out.extend((sub.dynamics)(&local));
        }
        out
    }

    /// The explicit gain operator `Γ` of the window.
    pub fn gain_operator(&self) -> Result<GainOperator> {
        let entries = self
            .subsystems
            .iter()
            .enumerate()
            .flat_map(|(k, s)| s.gains_row.iter().map(move |(j, f)| (k + 1, *j, f.clone())));
        Ok(GainOperator::explicit(self.window(), entries)?)
    }

    /// Samples the declared uniform bounds `ψ_1 ≤ ψ_i1`, `ψ_i2 ≤ ψ_2`,
    /// `α̃ ≤ α_i` and `γ_iu ≤ γ^u_max` on `grid`.
    pub fn check_uniform_bounds(&self, grid: &[f64]) -> Result<Verdict> {
        let scope = format!("uniform bounds sampled on {} radii over {} subsystems", grid.len(), self.window());
        let (psi1, psi2) = &self.uniform_coercivity;
        for (k, sub) in self.subsystems.iter().enumerate() {
            let pairs: [(&ScalarFn, &ScalarFn); 4] = [
                (psi1, &sub.coercivity.0),
                (&sub.coercivity.1, psi2),
                (&self.uniform_decay, &sub.decay_rate),
                (&sub.external_gain, &self.external_gain_bound),
            ];
            for &r in grid {
                for (lo, hi) in pairs {
                    let (lhs, rhs) = (lo.eval(r)?, hi.eval(r)?);
                    if lhs > rhs * (1.0 + 1e-12) {
                        return Ok(Verdict::falsified(Witness::GridPoint { r, index: k + 1, lhs, rhs }, scope));
                    }
                }
            }
        }
        Ok(Verdict::no_violation(scope))
    }

    /// Samples `ψ_i1(|x_i|) ≤ V_i(x_i) ≤ ψ_i2(|x_i|)` and `V_i(0) = 0` on the given states.
    pub fn check_subsystem_coercivity(&self, states: &[Vec<f64>]) -> Result<Verdict> {
        let scope = format!("subsystem coercivity sampled on {} states", states.len());
        for (k, sub) in self.subsystems.iter().enumerate() {
            let zero = (sub.lyapunov)(&vec![0.0; sub.dim]);
            if zero != 0.0 {
                return Ok(Verdict::falsified(Witness::GridPoint { r: 0.0, index: k + 1, lhs: zero, rhs: 0.0 }, scope));
            }
        }
        for x in states {
            self.check_state(x)?;
            for (k, sub) in self.subsystems.iter().enumerate() {
                let xi = self.block(x, k + 1);
                let (r, v) = (euclid(xi), (sub.lyapunov)(xi));
                let (lo, hi) = (sub.coercivity.0.eval(r)?, sub.coercivity.1.eval(r)?);
                let slack = 1e-12 * hi.max(1.0);
                if v < lo - slack || v > hi + slack {
                    let (lhs, rhs) = if v < lo { (lo, v) } else { (v, hi) };
                    return Ok(Verdict::falsified(Witness::GridPoint { r, index: k + 1, lhs, rhs }, scope));
                }
            }
        }
        Ok(Verdict::no_violation(scope))
    }
}

fn prefix_sums(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for d in it {
        out.push(out.last().unwrap() + d);
    }
    out
}

/// Piecewise right-continuous input: segment `k` applies on `[start_k, start_{k+1})`.
#[derive(Clone)]
pub struct InputSignal {
    segments: Vec<(f64, InputValue)>,
    description: String,
}

/// Per-subsystem input value `i ↦ u_i` on one segment.
pub type InputValue = Arc<dyn Fn(usize) -> Vec<f64> + Send + Sync>;

impl fmt::Debug for InputSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InputSignal({})", self.description)
    }
}

impl InputSignal {
    pub fn new(segments: Vec<(f64, InputValue)>, description: impl Into<String>) -> Result<Self> {
        if segments.first().map(|s| s.0) != Some(0.0) {
            return Err(NetworkError::BadArgument("first input segment must start at 0".into()));
        }
        if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(NetworkError::BadArgument("input segment starts must increase".into()));
        }
        Ok(InputSignal { segments, description: description.into() })
    }

    /// `u ≡ 0`.
    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Every component of every `u_i` equal to `c`.
    pub fn constant(c: f64) -> Self {
        InputSignal { segments: vec![(0.0, uniform(c))], description: format!("constant {c}") }
    }

    /// `0` before `t0`, then every component equal to `c`.
    pub fn step(t0: f64, c: f64) -> Result<Self> {
        if t0 == 0.0 {
            return Ok(Self::constant(c));
        }
        Self::new(vec![(0.0, uniform(0.0)), (t0, uniform(c))], format!("step {c} at t = {t0}"))
    }

    /// Scalar input per subsystem from `values` (1-based), zero past its end.
    pub fn per_index(values: Vec<f64>) -> Self {
        let description = format!("per-index values on {} subsystems", values.len());
        let f: InputValue = Arc::new(move |i| vec![values.get(i - 1).copied().unwrap_or(0.0)]);
        InputSignal { segments: vec![(0.0, f)], description }
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Full input vector at time `t`, right-continuous at segment starts.
    pub fn sample(&self, net: &Network, t: f64) -> Vec<f64> {
        let k = self.segments.partition_point(|s| s.0 <= t).saturating_sub(1);
        let value = &self.segments[k].1;
        let mut out = Vec::with_capacity(net.input_dim());
        for (idx, sub) in net.subsystems.iter().enumerate() {
            let mut v = value(idx + 1);
            v.resize(sub.input_dim, *v.last().unwrap_or(&0.0));
            out.extend(v);
        }
        out
    }
}

fn uniform(c: f64) -> InputValue {
    Arc::new(move |_| vec![c])
}

/// Scalar affine network `ẋ_i = −a_i x_i + Σ_j b_ij x_j + u_i` with `V_i = |x_i|`.
///
/// With `d_i` neighbors the gains `γ_ij = 2·d_i·|b_ij|/a_i`, `γ_iu = 4/a_i` and
/// the decay rate `α_i = a_i/4` make the Lyapunov implication hold: under
/// its premise the coupling contributes at most `a_i|x_i|/2` and the input
/// at most `a_i|x_i|/4`.
pub fn affine(name: &str, diag: &[f64], couplings: &[(usize, usize, f64)]) -> Result<Network> {
    let n = diag.len();
    if let Some(&a) = diag.iter().find(|&&a| !(a > 0.0)) {
        return Err(NetworkError::BadArgument(format!("diagonal decay {a} must be positive")));
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, b) in couplings {
        if i == 0 || j == 0 || i > n || j > n || i == j {
            return Err(NetworkError::BadArgument(format!("coupling ({i}, {j}) invalid for {n} subsystems")));
        }
        if b != 0.0 {
            rows[i - 1].push((j, b));
        }
    }
    let subsystems = rows
        .into_iter()
        .zip(diag)
        .map(|(row, &a)| {
            let d = row.len() as f64;
            let neighbors = row.iter().map(|&(j, _)| j).collect();
            let gains_row = row.iter().map(|&(j, b)| (j, ScalarFn::linear(2.0 * d * b.abs() / a))).collect();
            let coeffs: Vec<f64> = row.iter().map(|&(_, b)| b).collect();
            let dynamics: Dynamics = Arc::new(move |s: &LocalState<'_>| {
                let coupling: f64 = coeffs.iter().zip(s.neighbors).map(|(b, xj)| b * xj[0]).sum();
                vec![-a * s.x[0] + coupling + s.u[0]]
            });
            Subsystem {
                dim: 1,
                input_dim: 1,
                dynamics,
                lyapunov: Arc::new(|x: &[f64]| x[0].abs()),
                lyap_gradient: Some(Arc::new(|x: &[f64]| vec![if x[0] == 0.0 { 0.0 } else { x[0].signum() }])),
                neighbors,
                gains_row,
                external_gain: ScalarFn::linear(4.0 / a),
                decay_rate: ScalarFn::linear(a / 4.0),
                coercivity: (ScalarFn::Identity, ScalarFn::Identity),
                lipschitz_bound: Arc::new(|_| 1.0),
            }
        })
        .collect();
    let a_min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    Network::new(
        name,
        subsystems,
        (ScalarFn::Identity, ScalarFn::Identity),
        ScalarFn::linear(a_min / 4.0),
        ScalarFn::linear(4.0 / a_min),
    )
}

/// `ẋ_i = −x_i + c·x_{i−1} + u_i` on `n` nodes: gains `Linear(2c)`,
/// `γ_iu = Linear(4)`, `α_i = Linear(0.25)`.
pub fn linear_cascade(n: usize, coupling: f64) -> Result<Network> {
    let couplings: Vec<_> = (2..=n).map(|i| (i, i - 1, coupling)).collect();
    affine("linear_cascade", &vec![1.0; n], &couplings)
}

/// Two scalar nodes with gains `γ_12 = Linear(a)` and `γ_21 = Linear(b)`.
pub fn twonode_network(a: f64, b: f64) -> Result<Network> {
    affine("twonode", &[1.0, 1.0], &[(1, 2, a / 2.0), (2, 1, b / 2.0)])
}
