//! Finite certificates for infinite operators: virtual-gain reduction and the
//! compactification test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_sgc_cycles, require_below_identity, Result, SgcError, Verdict, Witness};
use crate::gainop::GainOperator;
use crate::kfunc::ScalarFn;

/// Map `p: ℕ → {1, …, M}` given by explicit assignments and a default class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexPartition {
    pub classes: usize,
    #[serde(default)]
    pub explicit: BTreeMap<usize, usize>,
    pub default: usize,
}

impl IndexPartition {
    pub fn class_of(&self, i: usize) -> usize {
        self.explicit.get(&i).copied().unwrap_or(self.default)
    }

    fn validate(&self) -> Result<()> {
        let ok = |c: usize| c >= 1 && c <= self.classes;
        if !ok(self.default) || !self.explicit.values().all(|&c| ok(c)) {
            return Err(SgcError::BadArgument(format!("partition classes must lie in 1..={}", self.classes)));
        }
        Ok(())
    }
}

/// Builds the `M`-node virtual operator `Γ̄` after checking `γ_ij ≤ γ̄_{p(i)p(j)}`
/// on `grid` for every nonzero gain of the window (sentinel row included).
///
/// `virtual_gains[a][b]` is `γ̄_{a+1, b+1}`.
pub fn virtual_reduce(
    g: &GainOperator,
    partition: &IndexPartition,
    virtual_gains: &[Vec<ScalarFn>],
    grid: &[f64],
) -> Result<GainOperator> {
    partition.validate()?;
    let m = partition.classes;
    if virtual_gains.len() != m || virtual_gains.iter().any(|row| row.len() != m) {
        return Err(SgcError::BadArgument(format!("virtual gain matrix must be {m}x{m}")));
    }
    let rows = (1..=g.window() + 1).flat_map(|i| g.row(i).into_iter().map(move |(j, f)| (i, j, f)));
    for (i, j, f) in rows {
        let bar = &virtual_gains[partition.class_of(i) - 1][partition.class_of(j) - 1];
        for &r in grid.iter().filter(|&&r| r > 0.0) {
            let gain = f.eval(r)?;
            let bound = bar.eval(r)?;
            if gain > bound {
                return Err(SgcError::Domination { i, j, r, gain, bound });
            }
        }
    }
    let entries = (0..m).flat_map(|a| (0..m).map(move |b| (a + 1, b + 1, virtual_gains[a][b].clone())));
    Ok(GainOperator::explicit(m, entries)?)
}

/// Reduction followed by cycle certification of the virtual operator.
///
/// A certified virtual operator implies UGAS of the system induced by the
/// original operator; the domination itself is only grid-checked.
pub fn virtual_reduction_verdict(
    g: &GainOperator,
    partition: &IndexPartition,
    virtual_gains: &[Vec<ScalarFn>],
    grid: &[f64],
) -> Result<Verdict> {
    let reduced = match virtual_reduce(g, partition, virtual_gains, grid) {
        Ok(op) => op,
        Err(SgcError::Domination { i, j, r, gain, bound }) => {
            return Ok(Verdict::falsified(
                Witness::GridPoint { r, index: i, lhs: gain, rhs: bound },
                format!("virtual domination failed at gain ({i}, {j}); {}", super::truncation_scope(g)),
            ));
        }
        Err(e) => return Err(e),
    };
    let mut v = check_sgc_cycles(&reduced, grid)?;
    v.scope = format!(
        "virtual {}-node reduction, domination sampled on {} radii over the window of {}; {}; \
         a certified virtual operator implies UGAS of the original",
        partition.classes,
        grid.len(),
        super::truncation_scope(g),
        v.scope
    );
    Ok(v)
}

/// Column of a virtual row: a real index or the added point `∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VirtualTarget {
    Index(usize),
    Infinity,
}

fn chain_from_infinity(g: &GainOperator, inf_row: &[(VirtualTarget, ScalarFn)], depth: usize, r: f64) -> Result<f64> {
    if depth == 0 {
        return Ok(r);
    }
    let mut best = 0.0f64;
    for (target, f) in inf_row {
        let inner = match target {
            VirtualTarget::Infinity => chain_from_infinity(g, inf_row, depth - 1, r)?,
            VirtualTarget::Index(j) => g.chain_sup_from(*j, depth - 1, r)?,
        };
        best = best.max(f.eval(inner)?);
    }
    Ok(best)
}

/// Samples the upper-semicontinuity condition at `∞`:
/// `limsup_i sup_chains γ̄_{i j_1} ∘ … ∘ γ̄_{j_{k0-1} j_{k0}}(ω^{-1}(r)) ≤ sup_chains γ̄_{∞ j_1} ∘ …(r)`.
///
/// The limsup is estimated by the largest chain value over the last quarter
/// of `index_probe`. Virtual gains `γ̄_{i∞}` from real indices into `∞` are
/// taken to be zero.
pub fn compactification_check(
    g: &GainOperator,
    virtual_inf_row: &[(VirtualTarget, ScalarFn)],
    omega: &ScalarFn,
    k0: usize,
    r_grid: &[f64],
    index_probe: &[usize],
) -> Result<Verdict> {
    require_below_identity(omega, "omega")?;
    if k0 == 0 {
        return Err(SgcError::BadArgument("k0 must be positive".into()));
    }
    if index_probe.is_empty() || index_probe.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SgcError::BadArgument("index probe must be nonempty and increasing".into()));
    }
    let omega_inv = omega.inverse();
    let tail_start = index_probe.len() - index_probe.len().div_ceil(4);
    let tail = &index_probe[tail_start..];
    let scope = format!(
        "limsup estimated on indices {}..={}, k0 = {k0}, {} radii",
        tail[0],
        tail[tail.len() - 1],
        r_grid.len()
    );
    let mut worst = 0.0f64;
    for &r in r_grid.iter().filter(|&&r| r > 0.0) {
        let lifted = omega_inv.eval(r)?;
        let mut lhs = 0.0f64;
        let mut at = tail[0];
        for &i in tail {
            let v = g.chain_sup_from(i, k0, lifted)?;
            if v > lhs {
                lhs = v;
                at = i;
            }
        }
        let rhs = chain_from_infinity(g, virtual_inf_row, k0, r)?;
        worst = worst.max(if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        });
        if lhs > rhs * (1.0 + 1e-12) {
            return Ok(Verdict::falsified(Witness::GridPoint { r, index: at, lhs, rhs }, scope));
        }
    }
    Ok(Verdict::no_violation(scope).with_metric("max_ratio", worst))
}
