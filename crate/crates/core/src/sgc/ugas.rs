//! Stability of the induced discrete-time system `s(k+1) = Γ(s(k))`.

use serde::{Deserialize, Serialize};

use super::{ray, truncation_scope, Result, SgcError};
use crate::envelope::{fit_kl_envelope, DecaySample, KlEnvelope};
use crate::gainop::{kleene_star, GainOperator, NonnegSeq, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH};
use crate::kfunc::ScalarFn;

pub const DEFAULT_DECAY_TARGET: f64 = 0.5;

/// Norm tables and stability verdicts on a finite set of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UgasReport {
    pub radii: Vec<f64>,
    pub k_max: usize,
    /// `norms[a][k] = ‖Γ^k(r_a 𝟙)‖`.
    pub norms: Vec<Vec<f64>>,
    /// `max_k norms[a][k]`: the empirical UGS gain at each radius.
    pub envelope: Vec<f64>,
    pub ugs: bool,
    /// Monotone interpolant through `(r_a, envelope_a)`.
    pub ugs_gain: Option<ScalarFn>,
    /// `closure_norms[a][k] = ‖Γ^k(Q(r_a 𝟙))‖` (UGAS check only).
    #[serde(default)]
    pub closure_norms: Vec<Vec<f64>>,
    /// First `k` with `closure_norms[a][k] ≤ decay_target·r_a`.
    #[serde(default)]
    pub decay_steps: Vec<Option<usize>>,
    pub decay_target: Option<f64>,
    pub uniform_decay: Option<bool>,
    pub kl_envelope: Option<KlEnvelope>,
    pub weak_attractivity_on_imq: Option<bool>,
    /// Some closure `Q(r𝟙)` did not converge within the depth cap.
    pub inconclusive: bool,
    pub scope: String,
}

fn norm_table(g: &GainOperator, start: &NonnegSeq, k_max: usize) -> Result<Vec<f64>> {
    let mut cur = start.clone();
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(cur.sup_norm());
    for _ in 0..k_max {
        cur = g.apply(&cur)?;
        out.push(cur.sup_norm());
    }
    Ok(out)
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(SgcError::BadArgument("radii must be nonempty, positive and finite".into()));
    }
    Ok(())
}

/// Tabulates `‖Γ^k(r𝟙)‖` for `k ≤ k_max` and the envelope `r ↦ max_k ‖Γ^k(r𝟙)‖`.
pub fn check_ugs(g: &GainOperator, radii: &[f64], k_max: usize) -> Result<UgasReport> {
    check_radii(radii)?;
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norms = sorted.iter().map(|&r| norm_table(g, &ray(g, r), k_max)).collect::<Result<Vec<_>>>()?;
    let envelope: Vec<f64> = norms.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).collect();
    let ugs = envelope.iter().all(|v| v.is_finite());
    let ugs_gain = ugs.then(|| {
        let mut knots = Vec::with_capacity(sorted.len());
        let mut running = 0.0f64;
        for (&r, &e) in sorted.iter().zip(&envelope) {
            running = running.max(e);
            if knots.last().is_none_or(|&(x, _): &(f64, f64)| r > x) {
                knots.push((r, running));
            }
        }
        ScalarFn::pwl(knots)
    });
    Ok(UgasReport {
        radii: sorted,
        k_max,
        norms,
        envelope,
        ugs,
        ugs_gain,
        closure_norms: Vec::new(),
        decay_steps: Vec::new(),
        decay_target: None,
        uniform_decay: None,
        kl_envelope: None,
        weak_attractivity_on_imq: None,
        inconclusive: false,
        scope: format!("{} radii, k <= {k_max}; {}", radii.len(), truncation_scope(g)),
    })
}

/// UGS table plus uniform decay from the closures `Q(r𝟙)`.
///
/// Since every `s` with `‖s‖ ≤ r` satisfies `s ≤ Q(r𝟙)` and `Γ` is monotone,
/// `‖Γ^k(Q(r𝟙))‖` bounds the whole ball. `uniform_decay` holds iff for
/// every radius some `k ≤ k_max` brings it below `decay_target·r`.
pub fn check_ugas(g: &GainOperator, radii: &[f64], k_max: usize, decay_target: f64) -> Result<UgasReport> {
    if !(decay_target > 0.0 && decay_target < 1.0) {
        return Err(SgcError::BadArgument(format!("decay target must lie in (0, 1), got {decay_target}")));
    }
    let mut report = check_ugs(g, radii, k_max)?;
    let mut inconclusive = false;
    let mut closure_norms = Vec::with_capacity(report.radii.len());
    for &r in &report.radii {
        let q = kleene_star(g, &ray(g, r), DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH)?;
        inconclusive |= !q.converged;
        closure_norms.push(norm_table(g, &q.closure, k_max)?);
    }
    let decay_steps: Vec<Option<usize>> = report
        .radii
        .iter()
        .zip(&closure_norms)
        .map(|(&r, row)| row.iter().position(|&v| v <= decay_target * r))
        .collect();
    let uniform = decay_steps.iter().all(Option::is_some);
    let weak = report
        .radii
        .iter()
        .zip(&closure_norms)
        .all(|(&r, row)| row.iter().copied().fold(f64::INFINITY, f64::min) <= DEFAULT_KLEENE_EPS * r.max(1.0));
    let kl_envelope = uniform.then(|| {
        let samples: Vec<DecaySample> = report
            .radii
            .iter()
            .zip(&closure_norms)
            .flat_map(|(&r, row)| row.iter().enumerate().map(move |(k, &value)| DecaySample { r, t: k as f64, value }))
            .collect();
        fit_kl_envelope(&samples)
    });
    report.scope = format!("{}; decay target {decay_target}, closures with eps {DEFAULT_KLEENE_EPS:e}", report.scope);
    report.closure_norms = closure_norms;
    report.decay_steps = decay_steps;
    report.decay_target = Some(decay_target);
    report.uniform_decay = Some(uniform);
    report.kl_envelope = kl_envelope;
    report.weak_attractivity_on_imq = Some(weak);
    report.inconclusive = inconclusive;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gainop::{cascade, example55, zero_operator};

    #[test]
    fn ugs_envelopes() {
        let radii = [0.5, 1.0, 2.0];
        for g in [cascade(16, 0.5).unwrap(), example55(16).unwrap(), zero_operator(4)] {
            let rep = check_ugs(&g, &radii, 20).unwrap();
            assert!(rep.ugs);
            for (a, &r) in rep.radii.iter().enumerate() {
                assert_eq!(rep.norms[a][0], r);
                assert_eq!(rep.envelope[a], r, "{g:?}");
            }
        }
        let z = check_ugs(&zero_operator(4), &[1.0], 3).unwrap();
        assert_eq!(z.norms[0], vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ugas_examples() {
        let rep = check_ugas(&cascade(16, 0.5).unwrap(), &[1.0, 3.0], 32, 0.5).unwrap();
        assert_eq!(rep.uniform_decay, Some(true));
        assert_eq!(rep.decay_steps, vec![Some(1), Some(1)]);
        assert!(matches!(rep.kl_envelope, Some(KlEnvelope::Geometric { .. })));

        let rep = check_ugas(&zero_operator(3), &[1.0], 4, 0.1).unwrap();
        assert_eq!(rep.decay_steps, vec![Some(1)]);
        assert_eq!(rep.weak_attractivity_on_imq, Some(true));

        let rep = check_ugas(&example55(64).unwrap(), &[1.0], 31, 0.5).unwrap();
        assert_eq!(rep.uniform_decay, Some(false));
        assert!(!rep.inconclusive);
        assert!(rep.kl_envelope.is_none());
        assert!(check_ugas(&zero_operator(1), &[1.0], 1, 1.5).is_err());
        assert!(check_ugs(&zero_operator(1), &[0.0], 1).is_err());
    }
}
