//! HARA-STPA catalog: hazard rows, unsafe control actions, per-scene
//! UCA mappings and UCA → FSM trace links.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsm::{build_emrm_machine, build_loss_eval_machine, Machine, TransitionRef};
use crate::hazard::{Context, LossLevel, RiskAssessment, DEFAULT_RISK_THRESHOLD};

const BUILTIN_CATALOG: &str = include_str!("../data/catalog.yaml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("catalog data corrupt: {0}")]
    DataCorrupt(String),
    #[error("{section}[{row}].{field}: {message}")]
    Invalid {
        section: &'static str,
        row: usize,
        field: &'static str,
        message: String,
    },
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("unknown UCA `{0}`")]
    UnknownUca(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UcaId {
    UCA1,
    UCA2,
    UCA3,
    UCA4,
}

impl UcaId {
    pub const ALL: [UcaId; 4] = [UcaId::UCA1, UcaId::UCA2, UcaId::UCA3, UcaId::UCA4];

    pub fn mode(self) -> UcaMode {
        match self {
            UcaId::UCA1 => UcaMode::NotProviding,
            UcaId::UCA2 => UcaMode::ProvidingUnneeded,
            UcaId::UCA3 => UcaMode::WrongTiming,
            UcaId::UCA4 => UcaMode::WrongDuration,
        }
    }
}

impl fmt::Display for UcaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for UcaId {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UcaId::ALL
            .into_iter()
            .find(|u| u.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CatalogError::UnknownUca(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UcaMode {
    NotProviding,
    ProvidingUnneeded,
    WrongTiming,
    WrongDuration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardEntry {
    pub row_id: String,
    pub hazard: String,
    pub description: String,
    pub maneuverability: u8,
    pub avoidability: u8,
    pub mitigability: u8,
    pub smil: String,
    pub risk: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub simulated: bool,
}

impl HazardEntry {
    /// Rows that exist only as catalog data, with no simulated scene behind them.
    pub fn catalog_only(&self) -> bool {
        !self.simulated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcaEntry {
    pub id: UcaId,
    pub mode: UcaMode,
    pub description: String,
    pub hazards: Vec<String>,
    pub losses: Vec<LossLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcaMapping {
    pub uca: UcaId,
    pub hazards: Vec<String>,
    pub losses: Vec<LossLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMapping {
    pub id: String,
    pub mappings: Vec<UcaMapping>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceLink {
    pub uca: UcaId,
    pub machine: String,
    #[serde(default)]
    pub exercised: Vec<TransitionRef>,
    /// Transitions whose absence is the malfunction (e.g. a maneuver never started).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required_missing: Vec<TransitionRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    /// Filled in from the UCA row when the catalog is loaded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hazards: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub losses: Vec<LossLevel>,
}

impl TraceLink {
    pub fn transitions(&self) -> impl Iterator<Item = &TransitionRef> {
        self.exercised.iter().chain(&self.required_missing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationRecord {
    pub hazards: BTreeSet<String>,
    pub losses: BTreeSet<LossLevel>,
    /// Aligned with `losses` in ascending order.
    pub risk: RiskAssessment,
}

impl IntegrationRecord {
    pub fn is_empty(&self) -> bool {
        self.hazards.is_empty() && self.losses.is_empty()
    }

    /// Losses whose risk exceeds its threshold.
    pub fn triggered_losses(&self) -> BTreeSet<LossLevel> {
        let losses: Vec<_> = self.losses.iter().copied().collect();
        self.risk
            .exceeds_risk_threshold()
            .into_iter()
            .map(|i| losses[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub hazards: Vec<HazardEntry>,
    pub ucas: Vec<UcaEntry>,
    pub scenes: Vec<SceneMapping>,
    pub trace_links: Vec<TraceLink>,
}

pub fn builtin_catalog() -> Result<Catalog, CatalogError> {
    Catalog::from_yaml(BUILTIN_CATALOG)
}

fn invalid(section: &'static str, row: usize, field: &'static str, message: String) -> CatalogError {
    CatalogError::Invalid {
        section,
        row,
        field,
        message,
    }
}

fn machine_named(name: &str) -> Option<Machine> {
    match name {
        "emrm" => Some(build_emrm_machine()),
        "loss-eval" => Some(build_loss_eval_machine()),
        _ => None,
    }
}

impl Catalog {
    pub fn from_yaml(text: &str) -> Result<Self, CatalogError> {
        let mut catalog: Catalog = serde_yaml::from_str(text).map_err(|e| {
            let loc = e
                .location()
                .map(|l| format!("line {}, column {}: ", l.line(), l.column()))
                .unwrap_or_default();
            CatalogError::DataCorrupt(format!("{loc}{e}"))
        })?;
        catalog.validate()?;
        catalog.fill_trace_targets();
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|e| CatalogError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_yaml(&text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("catalog serializes")
    }

    fn fill_trace_targets(&mut self) {
        for link in &mut self.trace_links {
            if let Some(u) = self.ucas.iter().find(|u| u.id == link.uca) {
                if link.hazards.is_empty() {
                    link.hazards = u.hazards.clone();
                }
                if link.losses.is_empty() {
                    link.losses = u.losses.clone();
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let mut seen_hazards = BTreeSet::new();
        for (i, h) in self.hazards.iter().enumerate() {
            if !is_hazard_id(&h.hazard) {
                return Err(invalid("hazards", i, "hazard", format!("`{}` is not H1..H9", h.hazard)));
            }
            if !seen_hazards.insert(h.hazard.as_str()) {
                return Err(invalid("hazards", i, "hazard", format!("duplicate `{}`", h.hazard)));
            }
            for (field, v) in [
                ("maneuverability", h.maneuverability),
                ("avoidability", h.avoidability),
                ("mitigability", h.mitigability),
            ] {
                if !(1..=3).contains(&v) {
                    return Err(invalid("hazards", i, field, format!("rating {v} outside 1..3")));
                }
            }
            if !(0.0..=1.0).contains(&h.risk) {
                return Err(invalid("hazards", i, "risk", format!("{} outside [0, 1]", h.risk)));
            }
            if h.smil.trim().is_empty() {
                return Err(invalid("hazards", i, "smil", "empty grade".into()));
            }
        }

        let known = |id: &String| seen_hazards.contains(id.as_str());
        let mut seen_ucas = BTreeSet::new();
        for (i, u) in self.ucas.iter().enumerate() {
            if !seen_ucas.insert(u.id) {
                return Err(invalid("ucas", i, "id", format!("duplicate `{}`", u.id)));
            }
            if u.mode != u.id.mode() {
                return Err(invalid(
                    "ucas",
                    i,
                    "mode",
                    format!("{:?} does not match {}", u.mode, u.id),
                ));
            }
            if u.hazards.is_empty() {
                return Err(invalid("ucas", i, "hazards", "at least one hazard required".into()));
            }
            if let Some(h) = u.hazards.iter().find(|h| !known(h)) {
                return Err(invalid("ucas", i, "hazards", format!("unknown hazard `{h}`")));
            }
            if u.losses.is_empty() || u.losses.contains(&LossLevel::L0) {
                return Err(invalid("ucas", i, "losses", "needs at least one loss in L1..L7".into()));
            }
        }
        if seen_ucas.len() != UcaId::ALL.len() {
            let missing: Vec<_> = UcaId::ALL
                .iter()
                .filter(|u| !seen_ucas.contains(u))
                .map(|u| u.to_string())
                .collect();
            return Err(invalid(
                "ucas",
                self.ucas.len(),
                "id",
                format!("missing {}", missing.join(", ")),
            ));
        }

        for (i, s) in self.scenes.iter().enumerate() {
            if self.scenes[..i].iter().any(|o| o.id == s.id) {
                return Err(invalid("scenes", i, "id", format!("duplicate `{}`", s.id)));
            }
            for m in &s.mappings {
                if let Some(h) = m.hazards.iter().find(|h| !known(h)) {
                    return Err(invalid("scenes", i, "mappings", format!("unknown hazard `{h}`")));
                }
                if !m.hazards.is_empty() && m.losses.is_empty() {
                    return Err(invalid(
                        "scenes",
                        i,
                        "mappings",
                        format!("{} maps hazards but no losses", m.uca),
                    ));
                }
            }
        }

        let mut linked = BTreeSet::new();
        for (i, link) in self.trace_links.iter().enumerate() {
            if !linked.insert(link.uca) {
                return Err(invalid("trace_links", i, "uca", format!("duplicate `{}`", link.uca)));
            }
            let machine = machine_named(&link.machine).ok_or_else(|| {
                invalid(
                    "trace_links",
                    i,
                    "machine",
                    format!("unknown machine `{}`", link.machine),
                )
            })?;
            if let Some(t) = link.transitions().find(|t| !machine.has_transition(&t.state, &t.event)) {
                return Err(invalid(
                    "trace_links",
                    i,
                    "exercised",
                    format!("transition {t} not defined in `{}`", link.machine),
                ));
            }
        }
        Ok(())
    }

    pub fn hazard(&self, id: &str) -> Option<&HazardEntry> {
        self.hazards.iter().find(|h| h.hazard == id)
    }

    pub fn uca(&self, id: UcaId) -> &UcaEntry {
        self.ucas
            .iter()
            .find(|u| u.id == id)
            .expect("validated catalog holds every UCA")
    }

    pub fn scene(&self, id: &str) -> Result<&SceneMapping, CatalogError> {
        self.scenes
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| CatalogError::UnknownScene(id.to_string()))
    }

    /// Union of hazards and losses that `ucas` lead to in the context's scene.
    /// Each loss gets the largest default risk among the hazards mapped with it.
    pub fn integrate(&self, context: &Context, ucas: &BTreeSet<UcaId>) -> Result<IntegrationRecord, CatalogError> {
        let scene = self.scene(context.scene_id())?;
        let mut hazards = BTreeSet::new();
        let mut losses = BTreeSet::new();
        let mut pairs: Vec<(LossLevel, f64)> = Vec::new();
        for &u in ucas {
            for m in scene.mappings.iter().filter(|m| m.uca == u) {
                let risk = m
                    .hazards
                    .iter()
                    .filter_map(|h| self.hazard(h))
                    .map(|h| h.risk)
                    .fold(0.0, f64::max);
                hazards.extend(m.hazards.iter().cloned());
                for &l in &m.losses {
                    losses.insert(l);
                    pairs.push((l, risk));
                }
            }
        }
        let risks: Vec<f64> = losses
            .iter()
            .map(|l| {
                pairs
                    .iter()
                    .filter(|(pl, _)| pl == l)
                    .map(|(_, r)| *r)
                    .fold(0.0, f64::max)
            })
            .collect();
        let thresholds = vec![DEFAULT_RISK_THRESHOLD; risks.len()];
        let risk = RiskAssessment::new(risks, thresholds).map_err(|e| CatalogError::DataCorrupt(e.to_string()))?;
        Ok(IntegrationRecord { hazards, losses, risk })
    }

    pub fn trace(&self, uca: UcaId) -> Result<&TraceLink, CatalogError> {
        self.trace_links
            .iter()
            .find(|t| t.uca == uca)
            .ok_or_else(|| CatalogError::UnknownUca(uca.to_string()))
    }

    /// Like [`Catalog::trace`] but from a textual id.
    pub fn trace_str(&self, uca: &str) -> Result<&TraceLink, CatalogError> {
        self.trace(uca.parse()?)
    }
}

fn is_hazard_id(id: &str) -> bool {
    id.strip_prefix('H')
        .and_then(|n| n.parse::<u8>().ok())
        .is_some_and(|n| (1..=9).contains(&n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::WorldSnapshot;
    use proptest::prelude::*;

    fn tjunction() -> Context {
        Context::at(WorldSnapshot::new("emrm_scene_1"))
    }

    #[test]
    fn builtin_shape() {
        let c = builtin_catalog().unwrap();
        assert_eq!(c.hazards.len(), 8);
        assert_eq!(c.ucas.len(), 4);
        assert_eq!(c.trace_links.len(), 4);
        let h8 = &c.hazards[0];
        assert_eq!(
            (
                h8.row_id.as_str(),
                h8.hazard.as_str(),
                h8.maneuverability,
                h8.avoidability,
                h8.mitigability,
                h8.smil.as_str()
            ),
            ("L8", "H8", 3, 3, 3, "D")
        );
        assert!(!h8.catalog_only());
        assert_eq!(c.hazards.iter().filter(|h| h.catalog_only()).count(), 7);
    }

    #[test]
    fn integrate_examples() {
        let c = builtin_catalog().unwrap();
        let r = c.integrate(&tjunction(), &BTreeSet::from([UcaId::UCA1])).unwrap();
        assert_eq!(r.hazards, BTreeSet::from(["H8".to_string()]));
        assert_eq!(r.losses, BTreeSet::from([LossLevel::L4, LossLevel::L6, LossLevel::L7]));
        assert_eq!(r.triggered_losses(), r.losses);

        let r = c.integrate(&tjunction(), &BTreeSet::new()).unwrap();
        assert!(r.is_empty());
        assert!(r.risk.is_empty());

        let r = c.integrate(&tjunction(), &BTreeSet::from([UcaId::UCA3])).unwrap();
        assert!(r.losses.contains(&LossLevel::L7));

        let elsewhere = Context::at(WorldSnapshot::new("nowhere"));
        assert!(matches!(
            c.integrate(&elsewhere, &BTreeSet::new()),
            Err(CatalogError::UnknownScene(_))
        ));
    }

    #[test]
    fn trace_examples() {
        let c = builtin_catalog().unwrap();
        let t1 = c.trace(UcaId::UCA1).unwrap();
        assert_eq!(t1.required_missing, vec![TransitionRef::new("S3", "execute_maneuver")]);
        assert!(t1.exercised.contains(&TransitionRef::new("S2", "high_risk")));
        let t4 = c.trace(UcaId::UCA4).unwrap();
        assert_eq!(t4.exercised, vec![TransitionRef::new("S4", "timeout_error")]);
        assert_eq!(t4.hazards, vec!["H8".to_string()]);
        assert!(matches!(c.trace_str("UCA9"), Err(CatalogError::UnknownUca(_))));
    }

    #[test]
    fn trace_links_reference_emrm_transitions() {
        let c = builtin_catalog().unwrap();
        let m = build_emrm_machine();
        for link in &c.trace_links {
            for t in link.transitions() {
                assert!(m.has_transition(&t.state, &t.event), "{t}");
            }
        }
    }

    #[test]
    fn round_trip() {
        let c = builtin_catalog().unwrap();
        let again = Catalog::from_yaml(&c.to_yaml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn validation_cites_row_and_field() {
        let text = BUILTIN_CATALOG.replacen("avoidability: 2", "avoidability: 7", 1);
        let err = Catalog::from_yaml(&text).unwrap_err();
        assert_eq!(
            err,
            CatalogError::Invalid {
                section: "hazards",
                row: 1,
                field: "avoidability",
                message: "rating 7 outside 1..3".into()
            }
        );
        assert!(err.to_string().starts_with("hazards[1].avoidability"));

        let text = BUILTIN_CATALOG.replace("{state: S4, event: timeout_error}", "{state: S4, event: nap}");
        let err = Catalog::from_yaml(&text).unwrap_err();
        assert!(matches!(
            err,
            CatalogError::Invalid {
                section: "trace_links",
                row: 3,
                ..
            }
        ));

        let err = Catalog::from_yaml("hazards: [").unwrap_err();
        assert!(matches!(err, CatalogError::DataCorrupt(_)));
    }

    fn uca_subset() -> impl Strategy<Value = BTreeSet<UcaId>> {
        proptest::sample::subsequence(UcaId::ALL.to_vec(), 0..=4).prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn integrate_is_monotone(a in uca_subset(), b in uca_subset()) {
            let c = builtin_catalog().unwrap();
            let ctx = tjunction();
            let small = c.integrate(&ctx, &a).unwrap();
            let union: BTreeSet<_> = a.union(&b).copied().collect();
            let big = c.integrate(&ctx, &union).unwrap();
            prop_assert!(small.hazards.is_subset(&big.hazards));
            prop_assert!(small.losses.is_subset(&big.losses));
            prop_assert!(small.hazards.is_empty() || !small.losses.is_empty());
        }
    }
}
