//! Class-KL envelopes `β(r, t)` fitted to decay data.
//!
//! Two forms: geometric `C·r·λ^t` and a tabulated monotone factor
//! `r·φ(t)`. The geometric form is fitted by least squares on log ratios and
//! then lifted so it bounds every fitted point; if the log-residual exceeds
//! [`GEOMETRIC_RESIDUAL_LIMIT`] the tabulated form is used instead.

use serde::{Deserialize, Serialize};

/// Relative RMS residual above which the geometric fit is rejected.
pub const GEOMETRIC_RESIDUAL_LIMIT: f64 = 0.10;
/// Values at or below this ratio are treated as numerically zero when fitting.
pub const FIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum KlEnvelope {
    Geometric { c: f64, lambda: f64 },
    Tabulated { times: Vec<f64>, factors: Vec<f64> },
}

/// One observation: at magnitude `r` and time `t` the quantity equalled `value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySample {
    pub r: f64,
    pub t: f64,
    pub value: f64,
}

impl KlEnvelope {
    pub fn bound(&self, r: f64, t: f64) -> f64 {
        match self {
            KlEnvelope::Geometric { c, lambda } => c * r * lambda.powf(t),
            KlEnvelope::Tabulated { times, factors } => {
                if times.is_empty() {
                    return 0.0;
                }
                let idx = times.partition_point(|&s| s <= t + 1e-12);
                r * factors[idx.saturating_sub(1)]
            }
        }
    }

    /// Same envelope with the constant multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            KlEnvelope::Geometric { c, lambda } => KlEnvelope::Geometric { c: c * factor, lambda: *lambda },
            KlEnvelope::Tabulated { times, factors } => {
                KlEnvelope::Tabulated { times: times.clone(), factors: factors.iter().map(|f| f * factor).collect() }
            }
        }
    }
}

/// Least-squares slope and intercept of `y` on `x`.
fn least_squares(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Geometric fit when it is good enough, otherwise the tabulated envelope.
pub fn fit_kl_envelope(samples: &[DecaySample]) -> KlEnvelope {
    fit_geometric(samples).unwrap_or_else(|| fit_tabulated(samples))
}

/// Geometric envelope `C·r·λ^t` bounding every sample, or `None` when the
/// data do not decay geometrically.
pub fn fit_geometric(samples: &[DecaySample]) -> Option<KlEnvelope> {
    let logs: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.r > 0.0 && s.value / s.r > FIT_FLOOR)
        .map(|s| (s.t, (s.value / s.r).ln()))
        .collect();
    if logs.is_empty() {
        // nothing above the floor: everything is bounded by any envelope
        return Some(KlEnvelope::Geometric { c: FIT_FLOOR, lambda: 0.5 });
    }
    let (slope, intercept) = least_squares(&logs)?;
    if slope >= 0.0 {
        return None;
    }
    let rms = (logs.iter().map(|(t, y)| (y - intercept - slope * t).powi(2)).sum::<f64>() / logs.len() as f64).sqrt();
    if rms.exp() - 1.0 > GEOMETRIC_RESIDUAL_LIMIT {
        return None;
    }
    let lambda = slope.exp();
    let c = samples.iter().filter(|s| s.r > 0.0).map(|s| s.value / (s.r * lambda.powf(s.t))).fold(0.0, f64::max);
    Some(KlEnvelope::Geometric { c, lambda })
}

/// Tabulated factor `φ(t) = max { value / r : sample time ≥ t }`.
pub fn fit_tabulated(samples: &[DecaySample]) -> KlEnvelope {
    let mut times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut factors = vec![0.0f64; times.len()];
    for s in samples.iter().filter(|s| s.r > 0.0) {
        let idx = times.partition_point(|&t| t < s.t);
        factors[idx] = factors[idx].max(s.value / s.r);
    }
    for k in (0..factors.len().saturating_sub(1)).rev() {
        factors[k] = factors[k].max(factors[k + 1]);
    }
    KlEnvelope::Tabulated { times, factors }
}
