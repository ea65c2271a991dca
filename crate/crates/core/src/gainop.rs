//! Max-type gain operators on the nonnegative sequence cone.
//!
//! A [`GainOperator`] maps `s ↦ (max_j γ_ij(s_j))_i`. Indices are 1-based.
//! Every operator works on a truncation window `N`: a [`NonnegSeq`] stores
//! `N` explicit entries plus a scalar tail that stands for every index past
//! `N`. Explicit operators are fully specified on the window and produce a
//! zero tail; generated operators evaluate their row rule at the sentinel
//! index `N + 1` to produce the tail.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kfunc::{self, check_class, ClassTag, KfuncError, ScalarFn};

pub const DEFAULT_KLEENE_EPS: f64 = 1e-9;
pub const DEFAULT_KLEENE_MAX_DEPTH: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GainError {
    #[error("window mismatch: operator has window {expected}, sequence has {got}")]
    Shape { expected: usize, got: usize },
    #[error("sequence entries must be finite and nonnegative (index {index}: {value})")]
    BadEntry { index: usize, value: f64 },
    #[error("index ({i}, {j}) is outside the window 1..={window}")]
    OutOfWindow { i: usize, j: usize, window: usize },
    #[error("gain ({i}, {j}) is neither zero nor class K on the sampling grid")]
    NotClassK { i: usize, j: usize },
    #[error("scaling function is not class K on the sampling grid")]
    BadScaling,
    #[error("perturbation is not below the identity: omega({r}) >= {r}")]
    InvalidPerturbation { r: f64 },
    #[error(transparent)]
    Function(#[from] KfuncError),
}

pub type Result<T> = std::result::Result<T, GainError>;

/// Finite-window nonnegative sequence standing for an element of `ℓ∞⁺`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonnegSeq {
    values: Vec<f64>,
    tail: f64,
}

impl NonnegSeq {
    pub fn new(values: Vec<f64>, tail: f64) -> Result<Self> {
        for (k, &v) in values.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(GainError::BadEntry { index: k + 1, value: v });
            }
        }
        if !(tail >= 0.0) || !tail.is_finite() {
            return Err(GainError::BadEntry { index: values.len() + 1, value: tail });
        }
        Ok(NonnegSeq { values, tail })
    }

    pub fn zeros(window: usize) -> Self {
        NonnegSeq { values: vec![0.0; window], tail: 0.0 }
    }

    /// `r·𝟙`: every index, including the tail, equals `r`.
    pub fn constant(window: usize, r: f64) -> Self {
        NonnegSeq { values: vec![r; window], tail: r }
    }

    /// The all-ones sequence `𝟙` (tail 1).
    pub fn ones(window: usize) -> Self {
        Self::constant(window, 1.0)
    }

    /// `r` on the window and zero beyond it.
    pub fn window_constant(window: usize, r: f64) -> Self {
        NonnegSeq { values: vec![r; window], tail: 0.0 }
    }

    /// Unit vector `e_i` (tail 0).
    pub fn unit(window: usize, i: usize) -> Self {
        assert!(i >= 1 && i <= window, "unit index {i} outside 1..={window}");
        let mut values = vec![0.0; window];
        values[i - 1] = 1.0;
        NonnegSeq { values, tail: 0.0 }
    }

    pub fn window(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// Entry at 1-based index `i`; indices past the window read the tail.
    pub fn get(&self, i: usize) -> f64 {
        debug_assert!(i >= 1);
        if i <= self.values.len() {
            self.values[i - 1]
        } else {
            self.tail
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().copied().fold(self.tail, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm() == 0.0
    }

    fn same_window(&self, other: &NonnegSeq) -> Result<()> {
        if self.window() == other.window() {
            Ok(())
        } else {
            Err(GainError::Shape { expected: self.window(), got: other.window() })
        }
    }

    /// Componentwise `self ≤ other + tol`, tails included.
    pub fn le_tol(&self, other: &NonnegSeq, tol: f64) -> Result<bool> {
        self.same_window(other)?;
        Ok(self.tail <= other.tail + tol && self.values.iter().zip(&other.values).all(|(a, b)| *a <= *b + tol))
    }

    pub fn le(&self, other: &NonnegSeq) -> Result<bool> {
        self.le_tol(other, 0.0)
    }

    /// Componentwise `self ≥ other` on the window and the tail.
    pub fn ge(&self, other: &NonnegSeq) -> Result<bool> {
        other.le(self)
    }

    /// Largest componentwise deviation, tails included.
    pub fn max_abs_diff(&self, other: &NonnegSeq) -> Result<f64> {
        self.same_window(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold((self.tail - other.tail).abs(), f64::max))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        NonnegSeq { values: self.values.iter().map(|v| v * factor).collect(), tail: self.tail * factor }
    }

    /// Applies a scalar function to every entry and the tail.
    pub fn map_fn(&self, f: &ScalarFn) -> Result<Self> {
        let values = self.values.iter().map(|&v| f.eval(v)).collect::<kfunc::Result<Vec<_>>>()?;
        let tail = f.eval(self.tail)?;
        NonnegSeq::new(values, tail)
    }
}

/// Componentwise maximum `s1 ⊕ s2`, tails included.
pub fn oplus(s1: &NonnegSeq, s2: &NonnegSeq) -> Result<NonnegSeq> {
    s1.same_window(s2)?;
    Ok(NonnegSeq {
        values: s1.values.iter().zip(&s2.values).map(|(a, b)| a.max(*b)).collect(),
        tail: s1.tail.max(s2.tail),
    })
}

/// Row `i` of an operator: the finitely many `(j, γ_ij)` with nonzero gain, sorted by `j`.
pub type Row = Vec<(usize, ScalarFn)>;

/// Row generator for an infinite operator.
pub type RowRule = Arc<dyn Fn(usize) -> Row + Send + Sync>;

#[derive(Clone)]
enum Source {
    Explicit,
    Generated { name: String, rule: RowRule },
}

/// Sparse max-type gain operator.
#[derive(Clone)]
pub struct GainOperator {
    window: usize,
    /// rows for indices `1..=window`, followed by the sentinel row `window + 1`
    rows: Vec<Row>,
    source: Source,
}

impl fmt::Debug for GainOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.source {
            Source::Explicit => "explicit".to_string(),
            Source::Generated { name, .. } => format!("generated:{name}"),
        };
        f.debug_struct("GainOperator")
            .field("kind", &kind)
            .field("window", &self.window)
            .field("edges", &self.edge_count())
            .finish()
    }
}

fn normalize_row(mut entries: Vec<(usize, ScalarFn)>) -> Row {
    entries.retain(|(_, f)| !f.is_zero());
    entries.sort_by_key(|(j, _)| *j);
    let mut row: Row = Vec::with_capacity(entries.len());
    for (j, f) in entries {
        match row.last_mut() {
            Some((last, g)) if *last == j => {
                *g = kfunc::max_of(&[g.clone(), f]).expect("nonempty");
            }
            _ => row.push((j, f)),
        }
    }
    row
}

fn certify_gain(i: usize, j: usize, f: &ScalarFn, grid: &[f64]) -> Result<()> {
    f.validate()?;
    if f.is_zero() {
        return Ok(());
    }
    let class = check_class(f, grid)?;
    if class.zero || class.satisfies(ClassTag::ClassK) {
        Ok(())
    } else {
        Err(GainError::NotClassK { i, j })
    }
}

impl GainOperator {
    /// Fully specified finite operator from `(i, j, γ_ij)` triples.
    pub fn explicit<I>(window: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, ScalarFn)>,
    {
        let grid = kfunc::default_grid();
        let mut by_row: BTreeMap<usize, Vec<(usize, ScalarFn)>> = BTreeMap::new();
        for (i, j, f) in entries {
            if i == 0 || j == 0 || i > window || j > window {
                return Err(GainError::OutOfWindow { i, j, window });
            }
            certify_gain(i, j, &f, &grid)?;
            by_row.entry(i).or_default().push((j, f));
        }
        let mut rows = vec![Row::new(); window + 1];
        for (i, entries) in by_row {
            rows[i - 1] = normalize_row(entries);
        }
        Ok(GainOperator { window, rows, source: Source::Explicit })
    }

    /// Infinite operator given by a row rule, computed on `1..=window`.
    pub fn generated(name: impl Into<String>, window: usize, rule: RowRule) -> Result<Self> {
        let grid = kfunc::default_grid();
        let mut rows = Vec::with_capacity(window + 1);
        for i in 1..=window + 1 {
            let row = normalize_row(rule(i));
            for (j, f) in &row {
                if *j == 0 {
                    return Err(GainError::OutOfWindow { i, j: *j, window });
                }
                certify_gain(i, *j, f, &grid)?;
            }
            rows.push(row);
        }
        Ok(GainOperator { window, rows, source: Source::Generated { name: name.into(), rule } })
    }

    /// The same operator family recomputed on a different window.
    pub fn with_window(&self, window: usize) -> Result<Self> {
        match &self.source {
            Source::Generated { name, rule } => Self::generated(name.clone(), window, rule.clone()),
            Source::Explicit => {
                let entries: Vec<_> = self.entries().collect();
                Self::explicit(window, entries)
            }
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self.source, Source::Explicit)
    }

    pub fn kind_name(&self) -> String {
        match &self.source {
            Source::Explicit => "explicit".into(),
            Source::Generated { name, .. } => name.clone(),
        }
    }

    /// Row `i` for any `i ≥ 1`; generated operators evaluate their rule past the window.
    pub fn row(&self, i: usize) -> Row {
        if i >= 1 && i <= self.window + 1 {
            self.rows[i - 1].clone()
        } else {
            match &self.source {
                Source::Explicit => Row::new(),
                Source::Generated { rule, .. } => normalize_row(rule(i)),
            }
        }
    }

    fn row_ref(&self, i: usize) -> &[(usize, ScalarFn)] {
        &self.rows[i - 1]
    }

    /// Nonzero entries `(i, j, γ_ij)` with `i` inside the window.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, ScalarFn)> + '_ {
        self.rows[..self.window]
            .iter()
            .enumerate()
            .flat_map(|(k, row)| row.iter().map(move |(j, f)| (k + 1, *j, f.clone())))
    }

    pub fn edge_count(&self) -> usize {
        self.rows[..self.window].iter().map(Vec::len).sum()
    }

    /// Gain `γ_ij`, or `None` when it is zero.
    pub fn gain(&self, i: usize, j: usize) -> Option<ScalarFn> {
        self.row(i).into_iter().find(|(k, _)| *k == j).map(|(_, f)| f)
    }

    fn map_rows(&self, f: impl Fn(usize, Row) -> Row + Send + Sync + 'static) -> Result<Self> {
        let f = Arc::new(f);
        match &self.source {
            Source::Explicit => {
                let mut rows: Vec<Row> =
                    self.rows.iter().enumerate().map(|(k, row)| normalize_row(f(k + 1, row.clone()))).collect();
                rows[self.window].clear();
                Ok(GainOperator { window: self.window, rows, source: Source::Explicit })
            }
            Source::Generated { name, rule } => {
                let inner = rule.clone();
                let g = f.clone();
                let rule: RowRule = Arc::new(move |i| g(i, inner(i)));
                let rows = (1..=self.window + 1).map(|i| normalize_row(rule(i))).collect();
                Ok(GainOperator { window: self.window, rows, source: Source::Generated { name: name.clone(), rule } })
            }
        }
    }

    /// `Γ(s)_i = max_{j} γ_ij(s_j)`.
    pub fn apply(&self, s: &NonnegSeq) -> Result<NonnegSeq> {
        if s.window() != self.window {
            return Err(GainError::Shape { expected: self.window, got: s.window() });
        }
        let eval_row = |row: &[(usize, ScalarFn)]| -> Result<f64> {
            let mut best = 0.0f64;
            for (j, f) in row {
                best = best.max(f.eval(s.get(*j))?);
            }
            Ok(best)
        };
        let mut values = Vec::with_capacity(self.window);
        for i in 1..=self.window {
            values.push(eval_row(self.row_ref(i))?);
        }
        let tail = match self.source {
            Source::Explicit => 0.0,
            Source::Generated { .. } => eval_row(self.row_ref(self.window + 1))?,
        };
        NonnegSeq::new(values, tail)
    }

    /// `Γ^k(s)`.
    pub fn iterate(&self, s: &NonnegSeq, k: usize) -> Result<NonnegSeq> {
        let mut cur = s.clone();
        if cur.window() != self.window {
            return Err(GainError::Shape { expected: self.window, got: cur.window() });
        }
        for _ in 0..k {
            cur = self.apply(&cur)?;
        }
        Ok(cur)
    }

    /// `Γ_θ`: every gain replaced by `(id + θ) ∘ γ_ij`.
    pub fn scale(&self, theta: &ScalarFn) -> Result<Self> {
        theta.validate()?;
        if !theta.is_zero() {
            let class = check_class(theta, &kfunc::default_grid())?;
            if !class.satisfies(ClassTag::ClassK) {
                return Err(GainError::BadScaling);
            }
        }
        let lift = theta.id_plus();
        self.map_rows(move |_, row| row.into_iter().map(|(j, f)| (j, kfunc::compose(&lift, &f))).collect())
    }

    /// `Γ_ij(s) = Γ(s) ⊕ ω(s_j)·e_i`, realized by max-merging `ω` into entry `(i, j)`.
    pub fn perturb(&self, i: usize, j: usize, omega: &ScalarFn) -> Result<Self> {
        omega.validate()?;
        let grid = kfunc::default_grid();
        if let Some(r) = kfunc::first_not_below_identity(omega, &grid)? {
            return Err(GainError::InvalidPerturbation { r });
        }
        certify_gain(i, j, omega, &grid)?;
        if i == 0 || j == 0 || (self.is_explicit() && (i > self.window || j > self.window)) {
            return Err(GainError::OutOfWindow { i, j, window: self.window });
        }
        let omega = omega.clone();
        self.map_rows(move |row_index, mut row| {
            if row_index == i {
                row.push((j, omega.clone()));
            }
            row
        })
    }

    /// Sup over chains `γ_{i j1} ∘ … ∘ γ_{j_{n-1} j_n}(r)` of length `n`
    /// starting at `i`, following the row rule without any window. Used to
    /// probe rows far beyond the truncation.
    pub fn chain_sup_from(&self, i: usize, n: usize, r: f64) -> Result<f64> {
        if n == 0 {
            return Ok(r);
        }
        let mut best = 0.0f64;
        for (j, f) in self.row(i) {
            best = best.max(f.eval(self.chain_sup_from(j, n - 1, r)?)?);
        }
        Ok(best)
    }
}

/// Approximation of `Q(s) = ⊕_k Γ^k(s)` returned by [`kleene_star`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KleeneResult {
    pub closure: NonnegSeq,
    /// Largest `m` with `Γ^m(s)` included in the running maximum.
    pub depth_used: usize,
    /// Sup-norm change caused by the last included iterate.
    pub residual: f64,
    pub converged: bool,
}

/// Strong transitive closure `Q(s) = ⊕_{k ≥ 0} Γ^k(s)`.
///
/// Iteration stops exactly once an iterate is dominated by the running
/// maximum (every later iterate is then dominated as well, since `Γ` is
/// monotone and max-preserving). Otherwise it stops when the running
/// maximum changed by at most `eps` and the current iterate itself has
/// sup-norm at most `eps`. Reaching `m_max` leaves `converged = false`.
pub fn kleene_star(g: &GainOperator, s: &NonnegSeq, eps: f64, m_max: usize) -> Result<KleeneResult> {
    if s.window() != g.window() {
        return Err(GainError::Shape { expected: g.window(), got: s.window() });
    }
    let mut running = s.clone();
    let mut current = s.clone();
    let mut depth_used = 0;
    let mut residual = 0.0;
    for m in 1..=m_max {
        let next = g.apply(&current)?;
        if next.le(&running)? {
            return Ok(KleeneResult { closure: running, depth_used, residual: 0.0, converged: true });
        }
        let merged = oplus(&running, &next)?;
        residual = merged.max_abs_diff(&running)?;
        running = merged;
        depth_used = m;
        if residual <= eps && next.sup_norm() <= eps {
            return Ok(KleeneResult { closure: running, depth_used, residual, converged: true });
        }
        current = next;
    }
    Ok(KleeneResult { closure: running, depth_used, residual, converged: false })
}

/// `true` for `k ∈ {2, 4, 8, …}`.
pub fn is_power_of_two_at_least_two(k: usize) -> bool {
    k >= 2 && k.is_power_of_two()
}

/// The shift operator with `γ_{k+1,k} = δ_k·k/(k+1)`, where `δ_k = 0` for
/// `k ∈ {2, 4, 8, …}` and `1` otherwise. Its iterates of `𝟙` do not tend to zero.
pub fn example55(window: usize) -> Result<GainOperator> {
    let rule: RowRule = Arc::new(|i| {
        if i < 2 {
            return Row::new();
        }
        let k = i - 1;
        if is_power_of_two_at_least_two(k) {
            Row::new()
        } else {
            vec![(k, ScalarFn::linear(k as f64 / (k + 1) as f64))]
        }
    });
    GainOperator::generated("example55", window, rule)
}

/// Cascade `γ_{i,i-1} = gain(i)` for `i ≥ 2`, infinite.
pub fn cascade_with(
    name: impl Into<String>,
    window: usize,
    gain: impl Fn(usize) -> ScalarFn + Send + Sync + 'static,
) -> Result<GainOperator> {
    let rule: RowRule = Arc::new(move |i| if i < 2 { Row::new() } else { vec![(i - 1, gain(i))] });
    GainOperator::generated(name, window, rule)
}

/// Cascade with the same linear gain on every link.
pub fn cascade(window: usize, slope: f64) -> Result<GainOperator> {
    cascade_with(format!("cascade({slope})"), window, move |_| ScalarFn::linear(slope))
}

/// Two nodes with `γ_12 = Linear(a)` and `γ_21 = Linear(b)`.
pub fn twonode(a: f64, b: f64) -> Result<GainOperator> {
    GainOperator::explicit(2, [(1, 2, ScalarFn::linear(a)), (2, 1, ScalarFn::linear(b))])
}

/// The zero operator on a window.
pub fn zero_operator(window: usize) -> GainOperator {
    GainOperator::explicit(window, std::iter::empty()).expect("empty operator is valid")
}
