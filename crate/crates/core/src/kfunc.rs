//! Comparison functions on the half line.
//!
//! A [`ScalarFn`] is a closed-form or piecewise-linear map `[0, ∞) → [0, ∞)`
//! standing for a class-K, class-K∞ or positive-definite function. Values
//! are immutable; composition and pointwise maximum build new trees that are
//! evaluated lazily. Only `Linear ∘ Linear` and compositions with the
//! identity are simplified symbolically.
//!
//! Class membership is never proven symbolically. [`check_class`] samples a
//! grid and the resulting [`FnClass`] records the range it was sampled on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default absolute tolerance for [`invert`].
pub const DEFAULT_INVERT_TOL: f64 = 1e-10;
/// Iteration cap for every bisection in this module.
pub const BISECTION_CAP: usize = 200;
/// A class-K∞ candidate reaches `KINF_TAIL_RATIO * R` at the largest grid point `R`,
pub const KINF_TAIL_RATIO: f64 = 0.5;
/// or grows by at least this factor over the top decade of the grid.
pub const KINF_DECADE_GROWTH: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KfuncError {
    #[error("comparison functions are defined on [0, inf), got {0}")]
    Domain(f64),
    #[error("malformed function: {0}")]
    Malformed(String),
    #[error("value {y} is outside the certified image [{lo}, {hi}]")]
    OutOfRange { y: f64, lo: f64, hi: f64 },
    #[error("function is not strictly increasing on [{lo}, {hi}]")]
    NotMonotone { lo: f64, hi: f64 },
    #[error("max_of needs at least one function")]
    EmptyMax,
    #[error("invalid sampling grid: {0}")]
    Grid(String),
}

pub type Result<T> = std::result::Result<T, KfuncError>;

/// Closed interval `[lo, hi]` of the half line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lo && r <= self.hi
    }
}

/// A representable monotone comparison function.
///
/// Serialized as a tagged record, e.g. `{kind = "linear", slope = 0.5}` or
/// `{kind = "pwl", knots = [[0, 0], [1, 2]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarFn {
    Zero,
    Identity,
    Linear {
        slope: f64,
    },
    /// `coeff * r^exponent`
    Power {
        coeff: f64,
        exponent: f64,
    },
    /// `coeff * r / (halfsat + r)`, bounded by `coeff`.
    Saturating {
        coeff: f64,
        halfsat: f64,
    },
    /// Linear interpolation through `(r, value)` knots. Below the first knot the
    /// function interpolates from the origin; beyond the last knot it continues
    /// with the slope of the last segment.
    #[serde(rename = "pwl")]
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
    },
    /// `outer ∘ inner`
    Compose {
        outer: Box<ScalarFn>,
        inner: Box<ScalarFn>,
    },
    MaxOf {
        fns: Vec<ScalarFn>,
    },
    /// `r ↦ r + inner(r)`
    IdPlus {
        inner: Box<ScalarFn>,
    },
    /// Numerical inverse of a strictly increasing, unbounded `inner`.
    InverseOf {
        inner: Box<ScalarFn>,
    },
}

impl ScalarFn {
    pub fn linear(slope: f64) -> Self {
        ScalarFn::Linear { slope }
    }

    pub fn power(coeff: f64, exponent: f64) -> Self {
        ScalarFn::Power { coeff, exponent }
    }

    pub fn saturating(coeff: f64, halfsat: f64) -> Self {
        ScalarFn::Saturating { coeff, halfsat }
    }

    pub fn pwl(knots: Vec<(f64, f64)>) -> Self {
        ScalarFn::PiecewiseLinear { knots }
    }

    /// `id + self`, folded to a slope when `self` is linear.
    pub fn id_plus(&self) -> Self {
        match self {
            ScalarFn::Zero => ScalarFn::Identity,
            ScalarFn::Identity => ScalarFn::linear(2.0),
            ScalarFn::Linear { slope } => ScalarFn::linear(1.0 + slope),
            other => ScalarFn::IdPlus { inner: Box::new(other.clone()) },
        }
    }

    /// Inverse function, symbolic for linear forms and numerical otherwise.
    pub fn inverse(&self) -> Self {
        match self {
            ScalarFn::Identity => ScalarFn::Identity,
            ScalarFn::Linear { slope } if *slope > 0.0 => ScalarFn::linear(1.0 / slope),
            ScalarFn::InverseOf { inner } => (**inner).clone(),
            other => ScalarFn::InverseOf { inner: Box::new(other.clone()) },
        }
    }

    /// Slope when the function is (symbolically) linear.
    pub fn as_linear_slope(&self) -> Option<f64> {
        match self {
            ScalarFn::Zero => Some(0.0),
            ScalarFn::Identity => Some(1.0),
            ScalarFn::Linear { slope } => Some(*slope),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Zero) || matches!(self, ScalarFn::Linear { slope } if *slope == 0.0)
    }

    /// Structural well-formedness: finite parameters, sorted knots, nonempty maxima.
    pub fn validate(&self) -> Result<()> {
        match self {
            ScalarFn::Zero | ScalarFn::Identity => Ok(()),
            ScalarFn::Linear { slope } => finite("slope", *slope),
            ScalarFn::Power { coeff, exponent } => {
                finite("coeff", *coeff)?;
                finite("exponent", *exponent)?;
                if *exponent <= 0.0 {
                    return Err(KfuncError::Malformed(format!("power exponent must be positive, got {exponent}")));
                }
                Ok(())
            }
            ScalarFn::Saturating { coeff, halfsat } => {
                finite("coeff", *coeff)?;
                finite("halfsat", *halfsat)?;
                if *halfsat <= 0.0 {
                    return Err(KfuncError::Malformed(format!("saturation constant must be positive, got {halfsat}")));
                }
                Ok(())
            }
            ScalarFn::PiecewiseLinear { knots } => check_knots(knots),
            ScalarFn::Compose { outer, inner } => {
                outer.validate()?;
                inner.validate()
            }
            ScalarFn::MaxOf { fns } => {
                if fns.is_empty() {
                    return Err(KfuncError::EmptyMax);
                }
                fns.iter().try_for_each(ScalarFn::validate)
            }
            ScalarFn::IdPlus { inner } | ScalarFn::InverseOf { inner } => inner.validate(),
        }
    }

    /// Evaluates the function at `r ≥ 0`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) || r.is_infinite() {
            return Err(KfuncError::Domain(r));
        }
        match self {
            ScalarFn::Zero => Ok(0.0),
            ScalarFn::Identity => Ok(r),
            ScalarFn::Linear { slope } => {
                finite("slope", *slope)?;
                Ok(slope * r)
            }
            ScalarFn::Power { coeff, exponent } => {
                if !(*exponent > 0.0) || !coeff.is_finite() {
                    return Err(KfuncError::Malformed("power parameters".into()));
                }
                Ok(if r == 0.0 { 0.0 } else { coeff * r.powf(*exponent) })
            }
            ScalarFn::Saturating { coeff, halfsat } => {
                if !(*halfsat > 0.0) || !coeff.is_finite() {
                    return Err(KfuncError::Malformed("saturating parameters".into()));
                }
                Ok(coeff * r / (halfsat + r))
            }
            ScalarFn::PiecewiseLinear { knots } => {
                check_knots(knots)?;
                Ok(eval_pwl(knots, r))
            }
            ScalarFn::Compose { outer, inner } => outer.eval(inner.eval(r)?),
            ScalarFn::MaxOf { fns } => {
                if fns.is_empty() {
                    return Err(KfuncError::EmptyMax);
                }
                let mut best = 0.0f64;
                for f in fns {
                    best = best.max(f.eval(r)?);
                }
                Ok(best)
            }
            ScalarFn::IdPlus { inner } => Ok(r + inner.eval(r)?),
            ScalarFn::InverseOf { inner } => unbounded_inverse(inner, r),
        }
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(KfuncError::Malformed(format!("{name} must be finite, got {v}")))
    }
}

fn check_knots(knots: &[(f64, f64)]) -> Result<()> {
    if knots.is_empty() {
        return Err(KfuncError::Malformed("piecewise-linear function without knots".into()));
    }
    for &(r, v) in knots {
        if !r.is_finite() || !v.is_finite() || r < 0.0 {
            return Err(KfuncError::Malformed(format!("bad knot ({r}, {v})")));
        }
    }
    if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(KfuncError::Malformed("knots are not strictly sorted".into()));
    }
    Ok(())
}

fn eval_pwl(knots: &[(f64, f64)], r: f64) -> f64 {
    let (x0, y0) = knots[0];
    if r <= x0 {
        return if x0 == 0.0 { y0 } else { y0 * r / x0 };
    }
    // index of the first knot strictly to the right of r
    let idx = knots.partition_point(|&(x, _)| x <= r);
    let (a, b) = if idx < knots.len() {
        (knots[idx - 1], knots[idx])
    } else if knots.len() >= 2 {
        (knots[knots.len() - 2], knots[knots.len() - 1])
    } else {
        ((0.0, 0.0), knots[0])
    };
    a.1 + (b.1 - a.1) * (r - a.0) / (b.0 - a.0)
}

/// Inverse of an unbounded increasing function by bracketing and bisection.
fn unbounded_inverse(f: &ScalarFn, y: f64) -> Result<f64> {
    if y == 0.0 {
        return Ok(0.0);
    }
    let mut hi = y.max(1.0);
    let mut doublings = 0;
    while f.eval(hi)? < y {
        hi *= 2.0;
        doublings += 1;
        if doublings > BISECTION_CAP || !hi.is_finite() {
            return Err(KfuncError::OutOfRange { y, lo: 0.0, hi: f.eval(hi.min(f64::MAX))? });
        }
    }
    bisect_root(f, y, 0.0, hi)
}

/// Smallest `r` in `[lo, hi]` with `f(r) ≥ y`, to machine resolution.
fn bisect_root(f: &ScalarFn, y: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f.eval(mid)? < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `outer ∘ inner` with the cheap symbolic simplifications applied.
pub fn compose(outer: &ScalarFn, inner: &ScalarFn) -> ScalarFn {
    match (outer, inner) {
        (ScalarFn::Identity, f) | (f, ScalarFn::Identity) => f.clone(),
        (ScalarFn::Zero, _) => ScalarFn::Zero,
        (ScalarFn::Linear { slope: a }, ScalarFn::Linear { slope: b }) => ScalarFn::linear(a * b),
        (f, ScalarFn::Zero) if f.eval(0.0) == Ok(0.0) => ScalarFn::Zero,
        _ => ScalarFn::Compose { outer: Box::new(outer.clone()), inner: Box::new(inner.clone()) },
    }
}

/// Composes a chain `fs[0] ∘ fs[1] ∘ … ∘ fs[n-1]`; the empty chain is the identity.
pub fn compose_chain<'a, I>(fs: I) -> ScalarFn
where
    I: IntoIterator<Item = &'a ScalarFn>,
    I::IntoIter: DoubleEndedIterator,
{
    fs.into_iter().rev().fold(ScalarFn::Identity, |acc, f| compose(f, &acc))
}

/// Pointwise maximum of a nonempty family.
pub fn max_of(fs: &[ScalarFn]) -> Result<ScalarFn> {
    match fs {
        [] => Err(KfuncError::EmptyMax),
        [single] => Ok(single.clone()),
        _ => Ok(ScalarFn::MaxOf { fns: fs.to_vec() }),
    }
}

/// Solves `f(r) = y` on `range` by bisection.
///
/// The function is first spot-checked for strict increase on `range`, and `y`
/// must lie in `[f(range.lo), f(range.hi)]` up to `tol`.
pub fn invert(f: &ScalarFn, y: f64, range: Interval, tol: f64) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(KfuncError::Domain(y));
    }
    if !(range.lo >= 0.0) || !(range.hi > range.lo) {
        return Err(KfuncError::Grid(format!("bad inversion range [{}, {}]", range.lo, range.hi)));
    }
    let probe: Vec<f64> = (0..=8).map(|k| range.lo + (range.hi - range.lo) * k as f64 / 8.0).collect();
    let mut prev = f.eval(probe[0])?;
    for &r in &probe[1..] {
        let v = f.eval(r)?;
        if v <= prev {
            return Err(KfuncError::NotMonotone { lo: range.lo, hi: range.hi });
        }
        prev = v;
    }
    let f_lo = f.eval(range.lo)?;
    let f_hi = f.eval(range.hi)?;
    if y < f_lo - tol || y > f_hi + tol {
        return Err(KfuncError::OutOfRange { y, lo: f_lo, hi: f_hi });
    }
    let r = bisect_root(f, y, range.lo, range.hi)?;
    let err = (f.eval(r)? - y).abs();
    if err > tol * y.max(1.0) && y > f_lo && y < f_hi {
        // a jump in f across the root; bisection cannot do better
        return Err(KfuncError::NotMonotone { lo: range.lo, hi: range.hi });
    }
    Ok(r)
}

/// Classification tags, ordered from weakest to strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassTag {
    NotMonotone,
    PositiveDefinite,
    ClassK,
    ClassKInf,
}

/// Outcome of grid-sampled classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnClass {
    pub tag: ClassTag,
    pub certified_range: Interval,
    /// The function vanished on every grid point.
    pub zero: bool,
}

impl FnClass {
    /// `ClassKInf ⊆ ClassK ⊆ PositiveDefinite`.
    pub fn satisfies(&self, required: ClassTag) -> bool {
        self.tag >= required
    }
}

/// Samples `f` on `grid` and returns the strongest class consistent with the samples.
///
/// The grid must be sorted, start at 0 and have at least 8 points.
pub fn check_class(f: &ScalarFn, grid: &[f64]) -> Result<FnClass> {
    if grid.len() < 8 {
        return Err(KfuncError::Grid(format!("need at least 8 points, got {}", grid.len())));
    }
    if grid[0] != 0.0 {
        return Err(KfuncError::Grid("grid must contain 0 as its first point".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KfuncError::Grid("grid is not strictly increasing".into()));
    }
    let values = grid.iter().map(|&r| f.eval(r)).collect::<Result<Vec<_>>>()?;
    let top = *grid.last().unwrap();
    let range = Interval::new(0.0, top);
    let zero = values.iter().all(|&v| v == 0.0);
    let tag = if zero || values[0].abs() > 0.0 {
        ClassTag::NotMonotone
    } else if values.windows(2).all(|w| w[1] - w[0] > f64::EPSILON * w[1].abs().max(f64::MIN_POSITIVE)) {
        if unbounded_tail(grid, &values) {
            ClassTag::ClassKInf
        } else {
            ClassTag::ClassK
        }
    } else if values[1..].iter().all(|&v| v > 0.0) {
        ClassTag::PositiveDefinite
    } else {
        ClassTag::NotMonotone
    };
    Ok(FnClass { tag, certified_range: range, zero })
}

/// Heuristic unboundedness test on the top of a sampled grid.
fn unbounded_tail(grid: &[f64], values: &[f64]) -> bool {
    let top = *grid.last().unwrap();
    let f_top = *values.last().unwrap();
    if f_top >= KINF_TAIL_RATIO * top {
        return true;
    }
    let reference = grid.partition_point(|&r| r <= top / 10.0).saturating_sub(1).max(1);
    f_top >= KINF_DECADE_GROWTH * values[reference] && grid[reference] < top
}

/// First grid point `r > 0` with `f(r) ≥ r`, if any.
pub fn first_not_below_identity(f: &ScalarFn, grid: &[f64]) -> Result<Option<f64>> {
    for &r in grid.iter().filter(|&&r| r > 0.0) {
        if f.eval(r)? >= r {
            return Ok(Some(r));
        }
    }
    Ok(None)
}

/// `0` followed by `per_decade` log-spaced points per decade on `[lo, hi]`.
pub fn class_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend(log_grid(lo, hi, per_decade));
    g
}

/// Log-spaced points on `[lo, hi]` (both included), `per_decade` per decade.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && per_decade > 0);
    let decades = (hi / lo).log10();
    let n = ((decades * per_decade as f64).ceil() as usize).max(1);
    (0..=n).map(|k| if k == n { hi } else { lo * (hi / lo).powf(k as f64 / n as f64) }).collect()
}

/// The default classification grid used by checkers that need one.
pub fn default_grid() -> Vec<f64> {
    class_grid(1e-3, 1e3, 8)
}
