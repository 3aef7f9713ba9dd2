//! Loss taxonomy, reversibility partition, risk thresholds and context tuples.
//!
//! Loss levels are ordinal: `L0` stands for an avoided outcome (no loss), and
//! `L1..=L7` grow in severity. `L1..=L5` are reversible, `L6` and `L7` are not.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Threshold used for every loss class when none is given.
pub const DEFAULT_RISK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HazardError {
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("invalid loss level `{0}`")]
    InvalidLossLevel(String),
    #[error("invalid risk assessment: {0}")]
    InvalidRisk(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum LossLevel {
    #[default]
    L0,
    L1,
    L2,
    L3,
    L4,
    L5,
    L6,
    L7,
}

impl LossLevel {
    pub const ALL: [LossLevel; 8] = [
        LossLevel::L0,
        LossLevel::L1,
        LossLevel::L2,
        LossLevel::L3,
        LossLevel::L4,
        LossLevel::L5,
        LossLevel::L6,
        LossLevel::L7,
    ];

    /// The seven levels that carry a loss.
    pub const LOSSES: [LossLevel; 7] = [
        LossLevel::L1,
        LossLevel::L2,
        LossLevel::L3,
        LossLevel::L4,
        LossLevel::L5,
        LossLevel::L6,
        LossLevel::L7,
    ];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(ordinal: u8) -> Option<Self> {
        Self::ALL.get(ordinal as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LossLevel::L0 => "Avoid",
            LossLevel::L1 => "Loss of Customer Satisfaction",
            LossLevel::L2 => "Loss of or Damage to Objects Outside the Vehicle",
            LossLevel::L3 => "Loss of Mission",
            LossLevel::L4 => "Loss of or Damage to Vehicle",
            LossLevel::L5 => "Environmental Loss",
            LossLevel::L6 => "Injury to People",
            LossLevel::L7 => "Loss of Life",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            LossLevel::L0 => "Collision avoided; no loss incurred.",
            LossLevel::L1 => "Minor inconvenience or dissatisfaction of users.",
            LossLevel::L2 => "Minor damage to property in the environment.",
            LossLevel::L3 => "The vehicle fails to complete its mission.",
            LossLevel::L4 => "Significant damage to or loss of the vehicle itself.",
            LossLevel::L5 => "Pollution or ecological disruption.",
            LossLevel::L6 => "Harm to individuals caused by the vehicle.",
            LossLevel::L7 => "Fatality caused by the vehicle.",
        }
    }

    pub fn reversibility(self) -> Reversibility {
        classify_reversibility(self)
    }
}

impl fmt::Display for LossLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.ordinal())
    }
}

impl FromStr for LossLevel {
    type Err = HazardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.eq_ignore_ascii_case("avoid") {
            return Ok(LossLevel::L0);
        }
        trimmed
            .strip_prefix('L')
            .or_else(|| trimmed.strip_prefix('l'))
            .and_then(|digits| digits.parse::<u8>().ok())
            .and_then(LossLevel::from_ordinal)
            .ok_or_else(|| HazardError::InvalidLossLevel(s.to_string()))
    }
}

impl TryFrom<String> for LossLevel {
    type Error = HazardError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<LossLevel> for String {
    fn from(level: LossLevel) -> Self {
        level.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reversibility {
    Reversible,
    Irreversible,
    NoLoss,
}

pub fn classify_reversibility(level: LossLevel) -> Reversibility {
    match level {
        LossLevel::L0 => Reversibility::NoLoss,
        LossLevel::L1 | LossLevel::L2 | LossLevel::L3 | LossLevel::L4 | LossLevel::L5 => Reversibility::Reversible,
        LossLevel::L6 | LossLevel::L7 => Reversibility::Irreversible,
    }
}

/// Ordinal loss reduction achieved by a mitigation. Avoided outcomes use `L0`.
pub fn delta_loss(unmitigated: LossLevel, mitigated: LossLevel) -> Result<u8, HazardError> {
    if mitigated > unmitigated {
        return Err(HazardError::ContractViolation(format!(
            "mitigated level {mitigated} exceeds unmitigated level {unmitigated}"
        )));
    }
    Ok(unmitigated.ordinal() - mitigated.ordinal())
}

/// Per-loss-class risk values and the thresholds that trigger them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RiskAssessment {
    risks: Vec<f64>,
    thresholds: Vec<f64>,
}

impl RiskAssessment {
    pub fn new(risks: Vec<f64>, thresholds: Vec<f64>) -> Result<Self, HazardError> {
        if risks.len() != thresholds.len() {
            return Err(HazardError::InvalidRisk(format!(
                "{} risk values but {} thresholds",
                risks.len(),
                thresholds.len()
            )));
        }
        if let Some(r) = risks.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(HazardError::InvalidRisk(format!("risk {r} outside [0, 1]")));
        }
        if let Some(l) = thresholds.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
            return Err(HazardError::InvalidRisk(format!("threshold {l} outside (0, 1]")));
        }
        Ok(Self { risks, thresholds })
    }

    pub fn with_default_thresholds(risks: Vec<f64>) -> Result<Self, HazardError> {
        let thresholds = vec![DEFAULT_RISK_THRESHOLD; risks.len()];
        Self::new(risks, thresholds)
    }

    pub fn risks(&self) -> &[f64] {
        &self.risks
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.risks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risks.is_empty()
    }

    /// Indices `i` with `R_i > λ_i` (strict).
    pub fn exceeds_risk_threshold(&self) -> BTreeSet<usize> {
        self.risks
            .iter()
            .zip(&self.thresholds)
            .enumerate()
            .filter(|(_, (r, l))| r > l)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Opaque world-state record: a scene id plus tagged numeric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WorldSnapshot {
    pub scene_id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl WorldSnapshot {
    pub fn new(scene_id: impl Into<String>) -> Self {
        Self {
            scene_id: scene_id.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: impl Into<String>, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }
}

/// History, current snapshot and predicted feasible futures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    #[serde(default)]
    pub history: Vec<WorldSnapshot>,
    pub current: WorldSnapshot,
    #[serde(default)]
    pub predicted: Vec<WorldSnapshot>,
}

impl Context {
    pub fn at(current: WorldSnapshot) -> Self {
        Self {
            history: Vec::new(),
            current,
            predicted: Vec::new(),
        }
    }

    pub fn scene_id(&self) -> &str {
        &self.current.scene_id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reversibility_examples() {
        assert_eq!(classify_reversibility(LossLevel::L4), Reversibility::Reversible);
        assert_eq!(classify_reversibility(LossLevel::L7), Reversibility::Irreversible);
        assert_eq!(classify_reversibility(LossLevel::L0), Reversibility::NoLoss);
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let rev: Vec<_> = LossLevel::ALL
            .iter()
            .filter(|l| l.reversibility() == Reversibility::Reversible)
            .collect();
        let irr: Vec<_> = LossLevel::ALL
            .iter()
            .filter(|l| l.reversibility() == Reversibility::Irreversible)
            .collect();
        assert_eq!(rev.len(), 5);
        assert_eq!(irr.len(), 2);
        assert_eq!(LossLevel::LOSSES.len(), 7);
        assert!(rev.iter().all(|l| !irr.contains(l)));
    }

    #[test]
    fn threshold_examples() {
        let r = RiskAssessment::with_default_thresholds(vec![0.9]).unwrap();
        assert_eq!(r.exceeds_risk_threshold(), BTreeSet::from([0]));
        let r = RiskAssessment::new(vec![0.0, 0.2], vec![0.5, 0.5]).unwrap();
        assert!(r.exceeds_risk_threshold().is_empty());
        // strict inequality
        let r = RiskAssessment::new(vec![0.5], vec![0.5]).unwrap();
        assert!(r.exceeds_risk_threshold().is_empty());
    }

    #[test]
    fn malformed_assessments_rejected() {
        assert!(RiskAssessment::new(vec![1.2], vec![0.5]).is_err());
        assert!(RiskAssessment::new(vec![0.2], vec![0.0]).is_err());
        assert!(RiskAssessment::new(vec![0.2, 0.3], vec![0.5]).is_err());
    }

    #[test]
    fn delta_loss_examples() {
        assert_eq!(delta_loss(LossLevel::L7, LossLevel::L4), Ok(3));
        assert_eq!(delta_loss(LossLevel::L6, LossLevel::L0), Ok(6));
        assert_eq!(delta_loss(LossLevel::L4, LossLevel::L4), Ok(0));
        assert!(matches!(
            delta_loss(LossLevel::L2, LossLevel::L5),
            Err(HazardError::ContractViolation(_))
        ));
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("L6".parse::<LossLevel>().unwrap(), LossLevel::L6);
        assert_eq!("Avoid".parse::<LossLevel>().unwrap(), LossLevel::L0);
        assert!("L8".parse::<LossLevel>().is_err());
        assert_eq!(LossLevel::L3.to_string(), "L3");
    }

    fn level() -> impl Strategy<Value = LossLevel> {
        (0u8..8).prop_map(|o| LossLevel::from_ordinal(o).unwrap())
    }

    proptest! {
        #[test]
        fn delta_loss_bounds(a in level(), b in level()) {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            let d = delta_loss(hi, lo).unwrap();
            prop_assert!(d <= 7);
            prop_assert_eq!(d == 0, hi == lo);
        }

        #[test]
        fn raising_a_risk_never_shrinks_triggered_set(
            risks in proptest::collection::vec(0.0f64..=1.0, 1..6),
            idx in 0usize..6,
            bump in 0.0f64..1.0,
        ) {
            let n = risks.len();
            let base = RiskAssessment::with_default_thresholds(risks.clone()).unwrap();
            let mut raised = risks;
            let i = idx % n;
            raised[i] = (raised[i] + bump).min(1.0);
            let raised = RiskAssessment::with_default_thresholds(raised).unwrap();
            prop_assert!(base.exceeds_risk_threshold().is_subset(&raised.exceeds_risk_threshold()));
        }
    }
}
