//! Small-gain condition checkers.
//!
//! Sampled checks over the cone can only falsify; they report
//! [`Status::NoViolationFound`] when no sample violates the condition.
//! [`Status::Certified`] is reserved for exact finite computations: cycle
//! enumeration on explicit finite operators, and the chain criterion,
//! which evaluates the chain supremum exactly on the truncation window.

mod cycles;
mod reduce;
mod ugas;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gainop::{kleene_star, GainError, GainOperator, NonnegSeq, DEFAULT_KLEENE_EPS};
use crate::kfunc::{self, check_class, ClassTag, KfuncError, ScalarFn};

pub use cycles::{check_sgc_cycles, check_sgc_cycles_bounded, simple_cycles, DEFAULT_CYCLE_WINDOW};
pub use reduce::{compactification_check, virtual_reduce, virtual_reduction_verdict, IndexPartition, VirtualTarget};
pub use ugas::{check_ugas, check_ugs, UgasReport, DEFAULT_DECAY_TARGET};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SgcError {
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    Function(#[from] KfuncError),
    #[error("cycle enumeration needs a fully explicit operator")]
    NotExplicit,
    #[error("window {window} exceeds the cycle enumeration bound {bound}")]
    TooLarge { window: usize, bound: usize },
    #[error("{0}")]
    BadFunction(String),
    #[error("virtual gain does not dominate: gamma_{i}{j}({r}) = {gain} > {bound}")]
    Domination { i: usize, j: usize, r: f64, gain: f64, bound: f64 },
    #[error("{0}")]
    BadArgument(String),
}

pub type Result<T> = std::result::Result<T, SgcError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    Falsified,
    NoViolationFound,
    Certified,
}

/// Evidence attached to a falsified verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Witness {
    /// `s` with its image under the checked map.
    Sequence { s: NonnegSeq, image: NonnegSeq },
    /// A cycle `nodes[0] → nodes[1] → … → nodes[0]` whose composition is not below the identity at `r`.
    Cycle { nodes: Vec<usize>, r: f64, value: f64 },
    /// Violation of the perturbed operator `Γ_ij`.
    Perturbed { i: usize, j: usize, inner: Box<Witness> },
    /// Chain supremum `value` at depth `depth` (attained at `index`) above `bound`.
    Chain { depth: usize, index: usize, value: f64, bound: f64 },
    /// Grid point `r` and index where `lhs ≤ rhs` fails.
    GridPoint { r: f64, index: usize, lhs: f64, rhs: f64 },
    /// Trajectory `trajectory` at time `t` where `lhs ≤ rhs` fails.
    Time { trajectory: usize, t: f64, lhs: f64, rhs: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    pub witness: Option<Witness>,
    /// Grids, truncation windows and depths the verdict is valid for.
    pub scope: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

impl Verdict {
    pub fn certified(scope: impl Into<String>) -> Self {
        Verdict { status: Status::Certified, witness: None, scope: scope.into(), metrics: BTreeMap::new() }
    }

    pub fn no_violation(scope: impl Into<String>) -> Self {
        Verdict { status: Status::NoViolationFound, witness: None, scope: scope.into(), metrics: BTreeMap::new() }
    }

    pub fn falsified(witness: Witness, scope: impl Into<String>) -> Self {
        Verdict { status: Status::Falsified, witness: Some(witness), scope: scope.into(), metrics: BTreeMap::new() }
    }

    pub fn with_metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    pub fn is_falsified(&self) -> bool {
        self.status == Status::Falsified
    }

    pub fn passed(&self) -> bool {
        !self.is_falsified()
    }
}

pub(crate) fn truncation_scope(g: &GainOperator) -> String {
    if g.is_explicit() {
        format!("explicit operator on {} nodes", g.window())
    } else {
        format!("{} at truncation N={}", g.kind_name(), g.window())
    }
}

/// `r·𝟙` in the form natural for the operator: explicit operators see only
/// their window, generated ones the full sequence including the tail.
pub fn ray(g: &GainOperator, r: f64) -> NonnegSeq {
    if g.is_explicit() {
        NonnegSeq::window_constant(g.window(), r)
    } else {
        NonnegSeq::constant(g.window(), r)
    }
}

/// Sample family for sampled SGC checks: unit vectors, rays `r𝟙`, their
/// Kleene closures, and random sparse positive vectors filling up to `count`.
pub fn standard_samples(g: &GainOperator, count: usize, seed: u64) -> Result<Vec<NonnegSeq>> {
    let n = g.window();
    let mut out: Vec<NonnegSeq> = (1..=n).map(|i| NonnegSeq::unit(n, i)).collect();
    for r in [0.1, 1.0, 10.0] {
        let base = ray(g, r);
        let q = kleene_star(g, &base, DEFAULT_KLEENE_EPS, 4 * n + 64)?;
        out.push(base);
        out.push(q.closure);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < count {
        let density: f64 = rng.gen_range(0.1..=1.0);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let values: Vec<f64> =
            (0..n).map(|_| if rng.gen_bool(density) { scale * rng.gen_range(0.01..1.0) } else { 0.0 }).collect();
        let tail = if g.is_explicit() || !rng.gen_bool(0.5) { 0.0 } else { scale * rng.gen_range(0.0..1.0) };
        let s = NonnegSeq::new(values, tail)?;
        if !s.is_zero() {
            out.push(s);
        }
    }
    Ok(out)
}

/// Falsifies `Γ(s) ≱ s` on the given nonzero samples.
pub fn check_sgc_sampled(g: &GainOperator, samples: &[NonnegSeq]) -> Result<Verdict> {
    check_map_sampled(g, samples, Ok, "SGC")
}

fn check_map_sampled(
    g: &GainOperator,
    samples: &[NonnegSeq],
    post: impl Fn(NonnegSeq) -> Result<NonnegSeq>,
    label: &str,
) -> Result<Verdict> {
    let mut tested = 0usize;
    for s in samples.iter().filter(|s| !s.is_zero()) {
        tested += 1;
        let image = post(g.apply(s)?)?;
        if image.ge(s)? {
            return Ok(Verdict::falsified(
                Witness::Sequence { s: s.clone(), image },
                format!("{label} sampled on {tested} points; {}", truncation_scope(g)),
            ));
        }
    }
    Ok(Verdict::no_violation(format!("{label} sampled on {tested} points; {}", truncation_scope(g)))
        .with_metric("samples", tested as f64))
}

/// Falsifies the strong SGC `(id + ρ) ∘ Γ(s) ≱ s` on samples.
pub fn check_strong_sgc(g: &GainOperator, rho: &ScalarFn, samples: &[NonnegSeq]) -> Result<Verdict> {
    rho.validate()?;
    let class = check_class(rho, &kfunc::default_grid())?;
    if !class.satisfies(ClassTag::ClassKInf) {
        return Err(SgcError::BadFunction("rho must be class K-infinity on the sampling grid".into()));
    }
    let lift = rho.id_plus();
    check_map_sampled(g, samples, |img| Ok(img.map_fn(&lift)?), "strong SGC")
}

fn require_below_identity(f: &ScalarFn, what: &str) -> Result<()> {
    f.validate()?;
    if let Some(r) = kfunc::first_not_below_identity(f, &kfunc::default_grid())? {
        return Err(SgcError::BadFunction(format!("{what} must be below the identity, fails at r = {r}")));
    }
    Ok(())
}

/// Max-robust SGC: every single-entry perturbation `Γ_ij`, `i, j ≤ ij_bound`,
/// must satisfy the SGC.
///
/// Each `Γ_ij` is checked on `samples` together with its own closures
/// `Q_ij(r𝟙)`. Explicit operators small enough for cycle enumeration are
/// additionally checked exactly; if every perturbed operator is then
/// certified, the verdict is [`Status::Certified`].
pub fn check_max_robust_sgc(
    g: &GainOperator,
    omega: &ScalarFn,
    ij_bound: usize,
    samples: &[NonnegSeq],
) -> Result<Verdict> {
    require_below_identity(omega, "omega")?;
    let bound = ij_bound.min(g.window());
    let pairs: Vec<(usize, usize)> = (1..=bound).flat_map(|i| (1..=bound).map(move |j| (i, j))).collect();
    let exact = g.is_explicit() && g.window() <= DEFAULT_CYCLE_WINDOW;
    let grid = kfunc::default_grid();
    let outcomes: Vec<Result<Verdict>> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<Verdict> {
            let perturbed = g.perturb(i, j, omega)?;
            let mut own: Vec<NonnegSeq> = samples.to_vec();
            for r in [0.1, 1.0, 10.0] {
                let q = kleene_star(&perturbed, &ray(&perturbed, r), DEFAULT_KLEENE_EPS, 4 * g.window() + 64)?;
                own.push(q.closure);
            }
            let sampled = check_sgc_sampled(&perturbed, &own)?;
            if sampled.is_falsified() || !exact {
                return Ok(sampled);
            }
            check_sgc_cycles(&perturbed, &grid)
        })
        .collect();
    let mut all_certified = exact;
    for ((i, j), outcome) in pairs.iter().zip(outcomes) {
        let v = outcome?;
        if let Some(w) = v.witness.clone().filter(|_| v.is_falsified()) {
            return Ok(Verdict::falsified(
                Witness::Perturbed { i: *i, j: *j, inner: Box::new(w) },
                format!("max-robust SGC over (i, j) <= {bound}; {}", v.scope),
            ));
        }
        all_certified &= v.status == Status::Certified;
    }
    let scope = format!(
        "max-robust SGC over (i, j) <= {bound}, {} samples per pair plus closures; {}",
        samples.len(),
        truncation_scope(g)
    );
    let verdict = if all_certified { Verdict::certified(scope) } else { Verdict::no_violation(scope) };
    Ok(verdict.with_metric("pairs", pairs.len() as f64))
}

/// Chain supremum `sup_i (Γ^n(r𝟙))_i` with every index of the chain kept at or
/// below `index_bound`, for `n = 0..=n_max`.
pub fn chain_sup_profile(g: &GainOperator, r: f64, n_max: usize, index_bound: usize) -> Result<Vec<(f64, usize)>> {
    let n = g.window();
    let bound = index_bound.min(n);
    let mask = |s: NonnegSeq| -> Result<NonnegSeq> {
        let values = s.values().iter().enumerate().map(|(k, &v)| if k < bound { v } else { 0.0 }).collect();
        Ok(NonnegSeq::new(values, 0.0)?)
    };
    let argmax = |s: &NonnegSeq| -> (f64, usize) {
        s.values().iter().enumerate().fold((0.0, 1), |best, (k, &v)| if v > best.0 { (v, k + 1) } else { best })
    };
    let mut cur = mask(NonnegSeq::window_constant(n, r))?;
    let mut out = vec![argmax(&cur)];
    for _ in 0..n_max {
        cur = mask(g.apply(&cur)?)?;
        out.push(argmax(&cur));
    }
    Ok(out)
}

/// Least chain length `n ≤ n_max` whose chain supremum at `r` is at most `η(r)`.
pub fn check_chain_condition(
    g: &GainOperator,
    eta: &ScalarFn,
    r: f64,
    n_max: usize,
    index_bound: usize,
) -> Result<Verdict> {
    require_below_identity(eta, "eta")?;
    if !(r > 0.0) {
        return Err(SgcError::BadArgument(format!("chain criterion needs r > 0, got {r}")));
    }
    let target = eta.eval(r)?;
    let profile = chain_sup_profile(g, r, n_max, index_bound)?;
    let bound = index_bound.min(g.window());
    let scope = format!("chains within indices <= {bound}, r = {r}, n <= {n_max}; {}", truncation_scope(g));
    for (n, &(value, _)) in profile.iter().enumerate().skip(1) {
        if value <= target {
            return Ok(Verdict::certified(scope).with_metric("n", n as f64).with_metric("chain_sup", value));
        }
    }
    let (value, index) = profile.last().copied().unwrap_or((r, 1));
    Ok(Verdict::falsified(Witness::Chain { depth: n_max, index, value, bound: target }, scope))
}

/// Whether `(Γ^k(s))_i ≤ tol` for some `k ≤ k_max`.
pub fn check_componentwise_attractivity(
    g: &GainOperator,
    s: &NonnegSeq,
    i: usize,
    k_max: usize,
    tol: f64,
) -> Result<bool> {
    Ok(first_attractive_step(g, s, i, k_max, tol)?.is_some())
}

/// First `k ≤ k_max` with `(Γ^k(s))_i ≤ tol`.
pub fn first_attractive_step(
    g: &GainOperator,
    s: &NonnegSeq,
    i: usize,
    k_max: usize,
    tol: f64,
) -> Result<Option<usize>> {
    if i == 0 || i > g.window() {
        return Err(SgcError::BadArgument(format!("index {i} outside the window 1..={}", g.window())));
    }
    let mut cur = s.clone();
    for k in 0..=k_max {
        if cur.get(i) <= tol {
            return Ok(Some(k));
        }
        if k < k_max {
            cur = g.apply(&cur)?;
        }
    }
    Ok(None)
}
