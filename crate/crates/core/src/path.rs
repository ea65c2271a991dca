//! Paths of strict decay `σ(r) = Q_θ(r𝟙)` and grid verification of their
//! defining properties.
//!
//! A path is stored as closure samples on a sorted grid of radii. Between
//! grid points components are evaluated by monotone piecewise-linear
//! interpolation. Only the window indices `1..=N` are tracked; the tail
//! entry of each sample is kept for decay checks of generated operators.

use rayon::prelude::*;
use thiserror::Error;

use crate::gainop::{kleene_star, GainError, GainOperator, NonnegSeq, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH};
use crate::kfunc::{self, ClassTag, Interval, KfuncError, ScalarFn};
use crate::sgc::{self, ray, SgcError, Verdict, Witness, DEFAULT_DECAY_TARGET};

/// Radii per decade of [`default_path_grid`].
pub const DEFAULT_PATH_PER_DECADE: usize = 64;
/// Largest number of gain chains [`DecayPath::chain_functions`] will enumerate.
pub const CHAIN_ENUMERATION_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    Function(#[from] KfuncError),
    #[error(transparent)]
    Sgc(#[from] SgcError),
    #[error("invalid radius grid: {0}")]
    Grid(String),
    #[error("scaled operator fails the UGAS precondition at r = {r}: {reason}")]
    Precondition { r: f64, reason: String },
    #[error("closure at r = {r} did not converge within {depth} iterations")]
    NotConverged { r: f64, depth: usize },
    #[error("constructed path fails its own {check} check: {scope}")]
    SelfCheck { check: &'static str, scope: String },
    #[error("{0}")]
    Domain(String),
    #[error("index {i} outside the tracked window 1..={window}")]
    Index { i: usize, window: usize },
    #[error("more than {cap} chains needed to represent component {i}")]
    TooManyChains { i: usize, cap: usize },
}

pub type Result<T> = std::result::Result<T, PathError>;

/// Options for [`build_path`].
#[derive(Debug, Clone, Default)]
pub struct PathOptions {
    /// Contraction certificate `ω`; when given, `σ_max = ω⁻¹`.
    pub omega: Option<ScalarFn>,
    /// Depth of the UGAS precondition check; `None` means `max(2N, 64)`.
    pub k_max: Option<usize>,
    /// Decay target of the UGAS precondition; `None` means [`DEFAULT_DECAY_TARGET`].
    pub decay_target: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DecayPath {
    pub window: usize,
    pub r_grid: Vec<f64>,
    /// `samples[a] = σ(r_grid[a])`, tail included.
    pub samples: Vec<NonnegSeq>,
    /// Closure depth used at each grid point.
    pub depths: Vec<usize>,
    /// Depth `k0` on `[r_a, r_{a+1}]` such that `⊕_{k ≤ k0} Γ_θ^k(r𝟙)` reproduces both endpoints.
    pub k0_per_interval: Vec<usize>,
    pub rho: ScalarFn,
    pub theta: ScalarFn,
    pub sigma_min: ScalarFn,
    pub sigma_max: ScalarFn,
    /// The scaled operator `Γ_θ` the samples were computed from.
    pub scaled: GainOperator,
    pub eps: f64,
    pub scope: String,
}

/// Log-spaced radius grid on `[lo, hi]` with [`DEFAULT_PATH_PER_DECADE`] points per decade.
pub fn default_path_grid(lo: f64, hi: f64) -> Vec<f64> {
    kfunc::log_grid(lo, hi, DEFAULT_PATH_PER_DECADE)
}

fn check_grid(r_grid: &[f64]) -> Result<()> {
    if r_grid.len() < 2 {
        return Err(PathError::Grid("need at least two radii".into()));
    }
    if r_grid.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(PathError::Grid("radii must be positive and finite".into()));
    }
    if r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PathError::Grid("radii must be strictly increasing".into()));
    }
    Ok(())
}

/// Builds `σ(r) = Q_θ(r𝟙)` on `r_grid` with `ρ = θ` and `σ_min = id`.
///
/// The scaled operator must pass [`sgc::check_ugas`] at both grid
/// endpoints, and the result must pass [`verify_decay`],
/// [`verify_envelopes`] and (for grids of at least 8 points)
/// [`verify_monotone`] before it is returned.
pub fn build_path(
    g: &GainOperator,
    theta: &ScalarFn,
    r_grid: &[f64],
    eps: f64,
    m_max: usize,
    options: &PathOptions,
) -> Result<DecayPath> {
    check_grid(r_grid)?;
    let scaled = g.scale(theta)?;
    let n = g.window();
    let k_max = options.k_max.unwrap_or((2 * n).max(64));
    let target = options.decay_target.unwrap_or(DEFAULT_DECAY_TARGET);
    for r in [r_grid[0], r_grid[r_grid.len() - 1]] {
        let report = match sgc::check_ugas(&scaled, &[r], k_max, target) {
            Ok(report) => report,
            Err(SgcError::Gain(GainError::BadEntry { .. })) => {
                return Err(PathError::Precondition { r, reason: "iterates overflow".into() });
            }
            Err(e) => return Err(e.into()),
        };
        if report.inconclusive {
            return Err(PathError::Precondition { r, reason: "closure did not converge".into() });
        }
        if report.uniform_decay != Some(true) {
            return Err(PathError::Precondition { r, reason: format!("no decay to {target}·r within {k_max} steps") });
        }
    }

    let closures = r_grid
        .par_iter()
        .map(|&r| {
            let q = kleene_star(&scaled, &ray(&scaled, r), eps, m_max)?;
            if !q.converged {
                return Err(PathError::NotConverged { r, depth: m_max });
            }
            Ok((q.closure, q.depth_used))
        })
        .collect::<Result<Vec<_>>>()?;
    let (samples, depths): (Vec<_>, Vec<_>) = closures.into_iter().unzip();
    let k0_per_interval = depths.windows(2).map(|w| w[0].max(w[1])).collect();

    let sigma_max = match &options.omega {
        Some(omega) => omega.inverse(),
        None => {
            let mut running = 0.0f64;
            let knots = r_grid
                .iter()
                .zip(&samples)
                .map(|(&r, s)| {
                    running = running.max(s.values().iter().copied().fold(r, f64::max));
                    (r, running)
                })
                .collect();
            ScalarFn::pwl(knots)
        }
    };

    let path = DecayPath {
        window: n,
        r_grid: r_grid.to_vec(),
        samples,
        depths,
        k0_per_interval,
        rho: theta.clone(),
        theta: theta.clone(),
        sigma_min: ScalarFn::Identity,
        sigma_max,
        scaled,
        eps,
        scope: format!(
            "{} radii in [{:e}, {:e}], indices 1..={n} tracked ({}), closure eps {eps:e}",
            r_grid.len(),
            r_grid[0],
            r_grid[r_grid.len() - 1],
            g.kind_name()
        ),
    };

    let tol = 10.0 * eps.max(DEFAULT_KLEENE_EPS);
    let mut gates = vec![("decay", verify_decay(&path, g, tol)?), ("envelope", verify_envelopes(&path)?)];
    if r_grid.len() >= 8 {
        gates.push(("monotonicity", verify_monotone(&path, 0.0)?));
    }
    for (check, verdict) in gates {
        if verdict.is_falsified() {
            return Err(PathError::SelfCheck { check, scope: format!("{:?}", verdict.witness) });
        }
    }
    Ok(path)
}

/// [`build_path`] with the default closure tolerance and depth cap.
pub fn build_path_default(g: &GainOperator, theta: &ScalarFn, r_grid: &[f64]) -> Result<DecayPath> {
    build_path(g, theta, r_grid, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH, &PathOptions::default())
}

impl DecayPath {
    fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.window {
            return Err(PathError::Index { i, window: self.window });
        }
        Ok(())
    }

    /// `(r_a, σ_i(r_a))` for every grid point.
    pub fn component(&self, i: usize) -> Result<Vec<(f64, f64)>> {
        self.check_index(i)?;
        Ok(self.r_grid.iter().zip(&self.samples).map(|(&r, s)| (r, s.get(i))).collect())
    }

    /// `σ_i(r)` by piecewise-linear interpolation: from the origin below the
    /// grid, with the last slope above it.
    pub fn eval(&self, i: usize, r: f64) -> Result<f64> {
        self.check_index(i)?;
        if !(r >= 0.0) {
            return Err(PathError::Domain(format!("sigma evaluated at negative radius {r}")));
        }
        Ok(interpolate(&self.r_grid, |a| self.samples[a].get(i), r))
    }

    /// Largest sampled value of `σ_i`.
    pub fn image_top(&self, i: usize) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.samples.last().map_or(0.0, |s| s.get(i)))
    }

    /// Grid interval `a` with `r_a ≤ r ≤ r_{a+1}`, clamped to the grid.
    pub fn interval_of(&self, r: f64) -> usize {
        self.r_grid.partition_point(|&x| x <= r).saturating_sub(1).min(self.r_grid.len() - 2)
    }

    /// `⊕_{k ≤ k0} Γ_θ^k(r𝟙)_i` with `k0` taken from the interval containing `r`.
    pub fn finite_representation(&self, i: usize, r: f64) -> Result<f64> {
        self.check_index(i)?;
        let k0 = self.k0_per_interval[self.interval_of(r)];
        let mut cur = ray(&self.scaled, r);
        let mut best = cur.get(i);
        for _ in 0..k0 {
            cur = self.scaled.apply(&cur)?;
            best = best.max(cur.get(i));
        }
        Ok(best)
    }

    /// Composed-gain chains from `i` of length at most `k0` on interval `a`.
    /// Their pointwise maximum is `σ_i` on that interval.
    ///
    /// Indices past the window follow the truncation: they are read through
    /// the sentinel row `N+1`.
    pub fn chain_functions(&self, i: usize, a: usize) -> Result<Vec<ScalarFn>> {
        self.check_index(i)?;
        let k0 = *self.k0_per_interval.get(a).ok_or_else(|| PathError::Domain(format!("no grid interval {a}")))?;
        let sentinel = self.window + 1;
        let tail_seen = !self.scaled.is_explicit();
        let mut out = vec![ScalarFn::Identity];
        let mut frontier: Vec<(usize, ScalarFn)> = vec![(i, ScalarFn::Identity)];
        for _ in 0..k0 {
            let mut next = Vec::new();
            for (node, outer) in &frontier {
                for (j, f) in self.scaled.row(*node) {
                    let j = j.min(sentinel);
                    if j == sentinel && !tail_seen {
                        continue;
                    }
                    next.push((j, kfunc::compose(outer, &f)));
                }
            }
            out.extend(next.iter().map(|(_, f)| f.clone()));
            if out.len() > CHAIN_ENUMERATION_CAP {
                return Err(PathError::TooManyChains { i, cap: CHAIN_ENUMERATION_CAP });
            }
            frontier = next;
        }
        Ok(out)
    }
}

fn interpolate(grid: &[f64], value: impl Fn(usize) -> f64, r: f64) -> f64 {
    let last = grid.len() - 1;
    if r <= grid[0] {
        return value(0) * r / grid[0];
    }
    if r >= grid[last] {
        let slope = (value(last) - value(last - 1)) / (grid[last] - grid[last - 1]);
        return value(last) + slope * (r - grid[last]);
    }
    let a = grid.partition_point(|&x| x <= r) - 1;
    let w = (r - grid[a]) / (grid[a + 1] - grid[a]);
    value(a) + w * (value(a + 1) - value(a))
}

/// `σ_i⁻¹(v)` by monotone piecewise-linear inversion of the samples, exact on
/// knots and extended with the last slope above the top sample.
pub fn invert_path(path: &DecayPath, i: usize, v: f64) -> Result<f64> {
    path.check_index(i)?;
    let ys: Vec<f64> = path.samples.iter().map(|s| s.get(i)).collect();
    invert_knots(&path.r_grid, &ys, i, v)
}

/// Inverse of the piecewise-linear interpolant through `(rs[a], ys[a])`.
pub(crate) fn invert_knots(rs: &[f64], ys: &[f64], i: usize, v: f64) -> Result<f64> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(PathError::Domain(format!("cannot invert sigma at {v}")));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let last = ys.len() - 1;
    if v < ys[0] {
        return Ok(rs[0] * v / ys[0]);
    }
    if v > ys[last] {
        let slope = (ys[last] - ys[last - 1]) / (rs[last] - rs[last - 1]);
        if !(slope > 0.0) {
            return Err(PathError::Domain(format!("sigma_{i} is flat at the top of its grid")));
        }
        return Ok(rs[last] + (v - ys[last]) / slope);
    }
    let a = ys.partition_point(|&y| y < v);
    if ys[a] == v {
        return Ok(rs[a]);
    }
    let w = (v - ys[a - 1]) / (ys[a] - ys[a - 1]);
    Ok(rs[a - 1] + w * (rs[a] - rs[a - 1]))
}

/// `Γ(σ(r)) ≤ (id+ρ)⁻¹(σ(r)) + tol·𝟙` at every grid point.
///
/// The tail entry is checked as index `N+1`.
pub fn verify_decay(path: &DecayPath, g: &GainOperator, tol: f64) -> Result<Verdict> {
    if g.window() != path.window {
        return Err(PathError::Gain(GainError::Shape { expected: path.window, got: g.window() }));
    }
    let shrink = path.rho.id_plus().inverse();
    let scope = format!("decay margin rho = theta on {}", path.scope);
    let mut worst = f64::NEG_INFINITY;
    for (&r, s) in path.r_grid.iter().zip(&path.samples) {
        let image = g.apply(s)?;
        let bound = s.map_fn(&shrink)?;
        for index in 1..=path.window + 1 {
            let (lhs, rhs) = (image.get(index), bound.get(index));
            worst = worst.max(lhs - rhs);
            if lhs > rhs + tol {
                return Ok(Verdict::falsified(Witness::GridPoint { r, index, lhs, rhs }, scope));
            }
        }
    }
    Ok(Verdict::no_violation(scope).with_metric("max_excess", worst))
}

/// `σ_min(r) ≤ σ_i(r) ≤ σ_max(r)` at every grid point and tracked index,
/// with relative slack `1e-12`.
pub fn verify_envelopes(path: &DecayPath) -> Result<Verdict> {
    let scope = format!("envelope sandwich on {}", path.scope);
    for (&r, s) in path.r_grid.iter().zip(&path.samples) {
        let lo = path.sigma_min.eval(r)?;
        let hi = path.sigma_max.eval(r)?;
        let slack = 1e-12 * hi.abs().max(1.0);
        for index in 1..=path.window {
            let v = s.get(index);
            if v < lo - slack {
                return Ok(Verdict::falsified(Witness::GridPoint { r, index, lhs: lo, rhs: v }, scope));
            }
            if v > hi + slack {
                return Ok(Verdict::falsified(Witness::GridPoint { r, index, lhs: v, rhs: hi }, scope));
            }
        }
    }
    Ok(Verdict::no_violation(scope))
}

/// Strict growth with `σ_i(r_{a+1}) − σ_i(r_a) ≥ margin·(r_{a+1} − r_a)` and a
/// positive increment, `σ_i(r_0) ≤ σ_max(r_0)`, and the class-K∞ tail
/// heuristic at the top of the grid.
pub fn verify_monotone(path: &DecayPath, margin: f64) -> Result<Verdict> {
    if path.r_grid.len() < 8 {
        return Err(PathError::Grid(format!("need at least 8 radii, got {}", path.r_grid.len())));
    }
    let scope = format!("monotonicity with margin {margin} on {}", path.scope);
    let r0 = path.r_grid[0];
    let cap0 = path.sigma_max.eval(r0)?;
    let top = path.r_grid.len() - 1;
    let reference = path.r_grid.partition_point(|&r| r <= path.r_grid[top] / 10.0).saturating_sub(1);
    for index in 1..=path.window {
        let v0 = path.samples[0].get(index);
        if v0 > cap0 * (1.0 + 1e-12) {
            return Ok(Verdict::falsified(Witness::GridPoint { r: r0, index, lhs: v0, rhs: cap0 }, scope));
        }
        for a in 0..top {
            let (lo, hi) = (path.samples[a].get(index), path.samples[a + 1].get(index));
            let need = margin * (path.r_grid[a + 1] - path.r_grid[a]);
            if !(hi - lo > 0.0) || hi - lo < need {
                return Ok(Verdict::falsified(
                    Witness::GridPoint { r: path.r_grid[a + 1], index, lhs: hi - lo, rhs: need },
                    scope,
                ));
            }
        }
        let v_top = path.samples[top].get(index);
        let grows =
            reference > 0 && reference < top && v_top >= kfunc::KINF_DECADE_GROWTH * path.samples[reference].get(index);
        if v_top < kfunc::KINF_TAIL_RATIO * path.r_grid[top] && !grows {
            return Ok(Verdict::falsified(
                Witness::GridPoint {
                    r: path.r_grid[top],
                    index,
                    lhs: v_top,
                    rhs: kfunc::KINF_TAIL_RATIO * path.r_grid[top],
                },
                scope,
            ));
        }
    }
    Ok(Verdict::no_violation(scope))
}

/// Extreme divided differences of `σ_i⁻¹` over grid pairs inside `k`.
///
/// Returns `(c, C, verdict)` with `c·|v − w| ≤ |σ_i⁻¹(v) − σ_i⁻¹(w)| ≤ C·|v − w|`
/// observed for all tracked indices. The verdict is falsified when `c < tol`
/// or `C` is infinite (a flat segment of some `σ_i`).
pub fn verify_bilipschitz(path: &DecayPath, k: Interval, tol: f64) -> Result<(f64, f64, Verdict)> {
    if !(k.lo > 0.0) {
        return Err(PathError::Domain(format!("interval [{}, {}] must stay away from 0", k.lo, k.hi)));
    }
    let first = path.r_grid[0];
    let last = path.r_grid[path.r_grid.len() - 1];
    if k.lo < first || k.hi > last || k.hi <= k.lo {
        return Err(PathError::Domain(format!(
            "interval [{}, {}] not inside the grid hull [{first}, {last}]",
            k.lo, k.hi
        )));
    }
    let inside: Vec<usize> = (0..path.r_grid.len()).filter(|&a| k.contains(path.r_grid[a])).collect();
    if inside.len() < 2 {
        return Err(PathError::Grid(format!("fewer than two radii inside [{}, {}]", k.lo, k.hi)));
    }
    let scope = format!(
        "divided differences on {} radii in [{}, {}], tracked indices 1..={} only",
        inside.len(),
        k.lo,
        k.hi,
        path.window
    );
    let (mut c, mut big_c) = (f64::INFINITY, 0.0f64);
    let mut witness = None;
    // Extremes over all grid pairs are attained by adjacent pairs: a wide
    // divided difference is a weighted mean of the adjacent ones it spans.
    for index in 1..=path.window {
        for w in inside.windows(2) {
            let (a, b) = (w[0], w[1]);
            let dv = path.samples[b].get(index) - path.samples[a].get(index);
            let q = (path.r_grid[b] - path.r_grid[a]) / dv;
            let q = if dv > 0.0 { q } else { f64::INFINITY };
            if q < c {
                c = q;
            }
            if q > big_c {
                big_c = q;
                if !q.is_finite() {
                    witness = Some(Witness::GridPoint { r: path.r_grid[b], index, lhs: dv, rhs: 0.0 });
                }
            }
        }
    }
    let verdict = match witness {
        Some(w) => Verdict::falsified(w, scope),
        None if c < tol => Verdict::falsified(Witness::GridPoint { r: k.lo, index: 0, lhs: c, rhs: tol }, scope),
        None => Verdict::no_violation(scope),
    };
    Ok((c, big_c, verdict.with_metric("c", c).with_metric("C", big_c)))
}

/// Sampled bi-Lipschitz constants `(l, L)` of all window gains on `k`:
/// `l·(r₂ − r₁) ≤ γ_ij(r₂) − γ_ij(r₁) ≤ L·(r₂ − r₁)` over adjacent radii of
/// `grid` inside `k`. The lower constant of a hypothesis of the
/// construction; reported, not enforced.
pub fn gain_bilipschitz(g: &GainOperator, k: Interval, grid: &[f64]) -> Result<(f64, f64)> {
    let radii: Vec<f64> = grid.iter().copied().filter(|&r| k.contains(r)).collect();
    if radii.len() < 2 {
        return Err(PathError::Grid("fewer than two radii inside the interval".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (_, _, f) in g.entries() {
        for w in radii.windows(2) {
            let q = (f.eval(w[1])? - f.eval(w[0])?) / (w[1] - w[0]);
            lo = lo.min(q);
            hi = hi.max(q);
        }
    }
    if hi == 0.0 {
        lo = 0.0;
    }
    Ok((lo, hi))
}

/// Plot table: header `r, sigma_i…` and one row per grid point.
pub fn path_table(path: &DecayPath, indices: &[usize]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    for &i in indices {
        path.check_index(i)?;
    }
    let header = std::iter::once("r".to_string()).chain(indices.iter().map(|i| format!("sigma_{i}"))).collect();
    let rows = path
        .r_grid
        .iter()
        .zip(&path.samples)
        .map(|(&r, s)| std::iter::once(r).chain(indices.iter().map(|&i| s.get(i))).collect())
        .collect();
    Ok((header, rows))
}

/// `true` if `σ_min` and `σ_max` are both certified class K∞ on the default grid.
pub fn envelopes_are_kinf(path: &DecayPath) -> Result<bool> {
    let grid = kfunc::default_grid();
    Ok(kfunc::check_class(&path.sigma_min, &grid)?.satisfies(ClassTag::ClassKInf)
        && kfunc::check_class(&path.sigma_max, &grid)?.satisfies(ClassTag::ClassKInf))
}
