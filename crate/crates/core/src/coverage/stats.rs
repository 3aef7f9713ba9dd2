use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::CoverageError;

/// Smallest `n` with `2·exp(−2nε²) ≤ δ`.
pub fn hoeffding_min_samples(epsilon: f64, delta: f64) -> Result<u64, CoverageError> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(CoverageError::Domain(format!(
            "need ε, δ in (0, 1), got ε = {epsilon}, δ = {delta}"
        )));
    }
    let raw = (2.0 / delta).ln() / (2.0 * epsilon * epsilon);
    let mut n = raw.ceil().max(1.0) as u64;
    // ceil() can land one off when `raw` is within rounding of an integer
    while n > 1 && bound(n - 1, epsilon) <= delta {
        n -= 1;
    }
    while bound(n, epsilon) > delta {
        n += 1;
    }
    Ok(n)
}

fn bound(n: u64, epsilon: f64) -> f64 {
    2.0 * (-2.0 * n as f64 * epsilon * epsilon).exp()
}

fn z_for(confidence: f64) -> Result<f64, CoverageError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(CoverageError::Domain(format!("confidence {confidence} outside (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - (1.0 - confidence) / 2.0))
}

fn wilson_from_p(p: f64, n: f64, z: f64) -> (f64, f64) {
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).clamp(0.0, 1.0), (centre + half).clamp(0.0, 1.0))
}

pub fn wilson_interval(successes: u64, n: u64, confidence: f64) -> Result<(f64, f64), CoverageError> {
    if n == 0 {
        return Err(CoverageError::Domain("Wilson interval needs n ≥ 1".into()));
    }
    if successes > n {
        return Err(CoverageError::Domain(format!("{successes} successes out of {n}")));
    }
    let z = z_for(confidence)?;
    Ok(wilson_from_p(successes as f64 / n as f64, n as f64, z))
}

pub fn wilson_half_width(successes: u64, n: u64, confidence: f64) -> Result<f64, CoverageError> {
    let (lo, hi) = wilson_interval(successes, n, confidence)?;
    Ok(0.5 * (hi - lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub success: bool,
    /// Density of the distribution the point was drawn from.
    pub proposal: f64,
    /// Exposure prior at the point.
    pub prior: f64,
}

impl OutcomeRecord {
    pub fn weight(&self) -> f64 {
        self.prior / self.proposal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_eff: f64,
}

/// Importance-weighted success rate with a 95 % Wilson interval on the Kish
/// effective sample size.
pub fn weighted_success(records: &[OutcomeRecord]) -> Result<EstimateWithCI, CoverageError> {
    if records.is_empty() {
        return Err(CoverageError::EmptySet);
    }
    let mut sw = 0.0;
    let mut sw2 = 0.0;
    let mut swy = 0.0;
    for r in records {
        if !(r.proposal > 0.0) {
            return Err(CoverageError::Domain(format!("proposal density {} ≤ 0", r.proposal)));
        }
        let w = r.weight();
        if !w.is_finite() || w < 0.0 {
            return Err(CoverageError::Domain(format!("weight {w} not finite and non-negative")));
        }
        sw += w;
        sw2 += w * w;
        if r.success {
            swy += w;
        }
    }
    if sw <= 0.0 {
        return Err(CoverageError::Domain("all weights are zero".into()));
    }
    let estimate = swy / sw;
    let n_eff = sw * sw / sw2;
    let n = n_eff.floor().max(1.0);
    let (lo, hi) = wilson_from_p(estimate, n, z_for(0.95)?);
    Ok(EstimateWithCI {
        estimate,
        lo: lo.min(estimate),
        hi: hi.max(estimate),
        n_eff,
    })
}

/// `q ∝ √π`, normalised.
pub fn importance_proposal(prior: &[f64]) -> Result<Vec<f64>, CoverageError> {
    if let Some(p) = prior.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(CoverageError::Domain(format!(
            "prior mass {p} is not a finite non-negative number"
        )));
    }
    let roots: Vec<f64> = prior.iter().map(|p| p.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    if total <= 0.0 {
        return Err(CoverageError::DegeneratePrior);
    }
    Ok(roots.into_iter().map(|r| r / total).collect())
}
