//! Deterministic finite-state machines with marked states.
//!
//! A [`Machine`] is immutable once built. Strings of events are executed with
//! [`Machine::run`], which extends the single-step transition function to
//! strings (`δ(s, ε) = s`, `δ(s, σe) = δ(δ(s, σ), e)`) and stops at the first
//! undefined step. [`CoverageLedger`] counts transition hits across runs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FsmError {
    #[error("transition undefined at ({state}, {event})")]
    UndefinedTransition { state: String, event: String },
    #[error("unknown id `{0}`")]
    InvalidId(String),
    #[error("nondeterministic transition at ({state}, {event})")]
    Nondeterministic { state: String, event: String },
    #[error("invalid machine: {0}")]
    InvalidMachine(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("ledger mismatch: {0}")]
    LedgerMismatch(String),
    #[error("invalid decision table: {0}")]
    InvalidTable(String),
}

/// A `(state, event)` pair naming one defined transition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TransitionRef {
    pub state: String,
    pub event: String,
}

impl TransitionRef {
    pub fn new(state: impl Into<String>, event: impl Into<String>) -> Self {
        Self {
            state: state.into(),
            event: event.into(),
        }
    }
}

impl fmt::Display for TransitionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.state, self.event)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Machine {
    name: String,
    states: Vec<String>,
    events: Vec<String>,
    transitions: BTreeMap<(usize, usize), usize>,
    initial: usize,
    marked: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceStatus {
    Completed,
    /// Index into the event string of the first step that was undefined.
    UndefinedTransition(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub visited: Vec<String>,
    pub consumed: Vec<String>,
    pub status: TraceStatus,
}

impl Trace {
    pub fn is_completed(&self) -> bool {
        self.status == TraceStatus::Completed
    }

    pub fn final_state(&self) -> &str {
        self.visited.last().expect("trace always holds its start state")
    }

    /// The transitions actually taken, in order.
    pub fn transitions(&self) -> impl Iterator<Item = TransitionRef> + '_ {
        self.visited
            .iter()
            .zip(&self.consumed)
            .map(|(s, e)| TransitionRef::new(s.clone(), e.clone()))
    }
}

impl Machine {
    pub fn builder(name: impl Into<String>) -> MachineBuilder {
        MachineBuilder::new(name)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }

    pub fn initial(&self) -> &str {
        &self.states[self.initial]
    }

    pub fn marked(&self) -> BTreeSet<&str> {
        self.marked.iter().map(|&i| self.states[i].as_str()).collect()
    }

    pub fn is_marked(&self, state: &str) -> bool {
        self.state_index(state)
            .map(|i| self.marked.contains(&i))
            .unwrap_or(false)
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn transitions(&self) -> impl Iterator<Item = (TransitionRef, &str)> + '_ {
        self.transitions.iter().map(|(&(s, e), &t)| {
            (
                TransitionRef::new(self.states[s].clone(), self.events[e].clone()),
                self.states[t].as_str(),
            )
        })
    }

    pub fn has_transition(&self, state: &str, event: &str) -> bool {
        match (self.state_index(state), self.event_index(event)) {
            (Some(s), Some(e)) => self.transitions.contains_key(&(s, e)),
            _ => false,
        }
    }

    /// Events enabled at `state`.
    pub fn enabled(&self, state: &str) -> Result<Vec<&str>, FsmError> {
        let s = self.require_state(state)?;
        Ok(self
            .transitions
            .keys()
            .filter(|(from, _)| *from == s)
            .map(|&(_, e)| self.events[e].as_str())
            .collect())
    }

    fn state_index(&self, state: &str) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }

    fn event_index(&self, event: &str) -> Option<usize> {
        self.events.iter().position(|e| e == event)
    }

    fn require_state(&self, state: &str) -> Result<usize, FsmError> {
        self.state_index(state)
            .ok_or_else(|| FsmError::InvalidId(state.to_string()))
    }

    fn require_event(&self, event: &str) -> Result<usize, FsmError> {
        self.event_index(event)
            .ok_or_else(|| FsmError::InvalidId(event.to_string()))
    }

    pub fn step(&self, state: &str, event: &str) -> Result<&str, FsmError> {
        let s = self.require_state(state)?;
        let e = self.require_event(event)?;
        self.transitions
            .get(&(s, e))
            .map(|&t| self.states[t].as_str())
            .ok_or_else(|| FsmError::UndefinedTransition {
                state: state.to_string(),
                event: event.to_string(),
            })
    }

    /// Like [`Machine::step`], recording a hit in `ledger` when the step is defined.
    pub fn step_recorded(&self, ledger: &mut CoverageLedger, state: &str, event: &str) -> Result<&str, FsmError> {
        let next = self.step(state, event)?;
        ledger.hit(&TransitionRef::new(state, event))?;
        Ok(next)
    }

    pub fn run<S: AsRef<str>>(&self, from: &str, events: &[S]) -> Result<Trace, FsmError> {
        self.require_state(from)?;
        let mut visited = vec![from.to_string()];
        let mut consumed = Vec::new();
        for (i, event) in events.iter().enumerate() {
            let current = visited.last().expect("non-empty");
            match self.step(current, event.as_ref()) {
                Ok(next) => {
                    let next = next.to_string();
                    consumed.push(event.as_ref().to_string());
                    visited.push(next);
                }
                Err(_) => {
                    return Ok(Trace {
                        visited,
                        consumed,
                        status: TraceStatus::UndefinedTransition(i),
                    })
                }
            }
        }
        Ok(Trace {
            visited,
            consumed,
            status: TraceStatus::Completed,
        })
    }

    /// Runs from the initial state.
    pub fn run_from_initial<S: AsRef<str>>(&self, events: &[S]) -> Trace {
        self.run(self.initial(), events).expect("initial state is always valid")
    }

    pub fn reachable(&self, from: &str) -> Result<BTreeSet<String>, FsmError> {
        let start = self.require_state(from)?;
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            for (&(src, _), &dst) in &self.transitions {
                if src == s && seen.insert(dst) {
                    queue.push_back(dst);
                }
            }
        }
        Ok(seen.into_iter().map(|i| self.states[i].clone()).collect())
    }

    /// Plain-text transition table, one `state event -> state` line per transition.
    pub fn to_table(&self) -> String {
        let mut out = format!("# machine {}\n", self.name);
        out.push_str(&format!("states {}\n", self.states.join(" ")));
        out.push_str(&format!("events {}\n", self.events.join(" ")));
        out.push_str(&format!("initial {}\n", self.initial()));
        let marked: Vec<_> = self.marked().into_iter().collect();
        if !marked.is_empty() {
            out.push_str(&format!("marked {}\n", marked.join(" ")));
        }
        for (t, dst) in self.transitions() {
            out.push_str(&format!("{} {} -> {}\n", t.state, t.event, dst));
        }
        out
    }

    /// Parses the format written by [`Machine::to_table`]. `states`, `events`
    /// and `marked` lines are optional; `initial` defaults to the first state.
    pub fn from_table(text: &str) -> Result<Machine, FsmError> {
        let mut name = String::from("machine");
        let mut builder: Option<MachineBuilder> = None;
        let mut initial: Option<String> = None;
        let mut marked: Vec<String> = Vec::new();
        let mut pending: Vec<(usize, String, String, String)> = Vec::new();
        let mut states: Vec<String> = Vec::new();
        let mut events: Vec<String> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(n) = comment.trim().strip_prefix("machine ") {
                    name = n.trim().to_string();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens[0] {
                "states" => states.extend(tokens[1..].iter().map(|s| s.to_string())),
                "events" => events.extend(tokens[1..].iter().map(|s| s.to_string())),
                "initial" => {
                    if tokens.len() != 2 {
                        return Err(FsmError::Parse {
                            line: line_no,
                            message: "expected `initial <state>`".into(),
                        });
                    }
                    initial = Some(tokens[1].to_string());
                }
                "marked" => marked.extend(tokens[1..].iter().map(|s| s.to_string())),
                _ => {
                    if tokens.len() != 4 || tokens[2] != "->" {
                        return Err(FsmError::Parse {
                            line: line_no,
                            message: format!("expected `state event -> state`, got `{line}`"),
                        });
                    }
                    pending.push((
                        line_no,
                        tokens[0].to_string(),
                        tokens[1].to_string(),
                        tokens[3].to_string(),
                    ));
                }
            }
        }

        let b = builder.get_or_insert_with(|| MachineBuilder::new(name));
        for s in &states {
            b.state(s);
        }
        for e in &events {
            b.event(e);
        }
        for (line, src, ev, dst) in pending {
            b.transition(&src, &ev, &dst);
            if let Some(err) = b.error.take() {
                return Err(FsmError::Parse {
                    line,
                    message: err.to_string(),
                });
            }
        }
        let mut b = builder.expect("builder initialised");
        if let Some(init) = initial {
            b.initial(&init);
        }
        for m in &marked {
            b.mark(m);
        }
        b.build()
    }
}

#[derive(Debug, Clone)]
pub struct MachineBuilder {
    name: String,
    states: Vec<String>,
    events: Vec<String>,
    transitions: BTreeMap<(usize, usize), usize>,
    initial: Option<String>,
    marked: Vec<String>,
    error: Option<FsmError>,
}

impl MachineBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            states: Vec::new(),
            events: Vec::new(),
            transitions: BTreeMap::new(),
            initial: None,
            marked: Vec::new(),
            error: None,
        }
    }

    fn intern(list: &mut Vec<String>, id: &str) -> usize {
        match list.iter().position(|s| s == id) {
            Some(i) => i,
            None => {
                list.push(id.to_string());
                list.len() - 1
            }
        }
    }

    pub fn state(&mut self, id: &str) -> &mut Self {
        Self::intern(&mut self.states, id);
        self
    }

    pub fn event(&mut self, id: &str) -> &mut Self {
        Self::intern(&mut self.events, id);
        self
    }

    pub fn transition(&mut self, from: &str, event: &str, to: &str) -> &mut Self {
        let s = Self::intern(&mut self.states, from);
        let e = Self::intern(&mut self.events, event);
        let t = Self::intern(&mut self.states, to);
        match self.transitions.get(&(s, e)) {
            Some(&existing) if existing != t => {
                self.error.get_or_insert(FsmError::Nondeterministic {
                    state: from.to_string(),
                    event: event.to_string(),
                });
            }
            _ => {
                self.transitions.insert((s, e), t);
            }
        }
        self
    }

    pub fn initial(&mut self, id: &str) -> &mut Self {
        self.initial = Some(id.to_string());
        self
    }

    pub fn mark(&mut self, id: &str) -> &mut Self {
        self.marked.push(id.to_string());
        self
    }

    pub fn build(&self) -> Result<Machine, FsmError> {
        if let Some(err) = &self.error {
            return Err(err.clone());
        }
        if self.states.is_empty() {
            return Err(FsmError::InvalidMachine("no states".into()));
        }
        let initial = match &self.initial {
            Some(id) => self
                .states
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| FsmError::InvalidMachine(format!("initial `{id}` is not a state")))?,
            None => 0,
        };
        let mut marked = BTreeSet::new();
        for m in &self.marked {
            let i = self
                .states
                .iter()
                .position(|s| s == m)
                .ok_or_else(|| FsmError::InvalidMachine(format!("marked `{m}` is not a state")))?;
            marked.insert(i);
        }
        Ok(Machine {
            name: self.name.clone(),
            states: self.states.clone(),
            events: self.events.clone(),
            transitions: self.transitions.clone(),
            initial,
            marked,
        })
    }
}

/// Per-transition hit counters for one machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageLedger {
    machine: String,
    hits: BTreeMap<TransitionRef, u64>,
}

impl CoverageLedger {
    pub fn new(machine: &Machine) -> Self {
        Self {
            machine: machine.name().to_string(),
            hits: machine.transitions().map(|(t, _)| (t, 0)).collect(),
        }
    }

    pub fn machine(&self) -> &str {
        &self.machine
    }

    pub fn hit(&mut self, transition: &TransitionRef) -> Result<(), FsmError> {
        match self.hits.get_mut(transition) {
            Some(count) => {
                *count += 1;
                Ok(())
            }
            None => Err(FsmError::InvalidId(transition.to_string())),
        }
    }

    /// Adds every transition taken by `trace`.
    pub fn record(&mut self, trace: &Trace) -> Result<(), FsmError> {
        for t in trace.transitions() {
            self.hit(&t)?;
        }
        Ok(())
    }

    pub fn hits(&self, transition: &TransitionRef) -> Option<u64> {
        self.hits.get(transition).copied()
    }

    pub fn counters(&self) -> &BTreeMap<TransitionRef, u64> {
        &self.hits
    }

    pub fn uncovered(&self) -> Vec<&TransitionRef> {
        self.hits.iter().filter(|(_, &c)| c == 0).map(|(t, _)| t).collect()
    }

    /// Fraction of defined transitions hit at least once.
    pub fn coverage(&self) -> f64 {
        if self.hits.is_empty() {
            return 0.0;
        }
        let covered = self.hits.values().filter(|&&c| c > 0).count();
        covered as f64 / self.hits.len() as f64
    }

    pub fn merge(&mut self, other: &CoverageLedger) -> Result<(), FsmError> {
        if self.machine != other.machine || self.hits.len() != other.hits.len() {
            return Err(FsmError::LedgerMismatch(format!(
                "`{}` vs `{}`",
                self.machine, other.machine
            )));
        }
        for (t, c) in &other.hits {
            match self.hits.get_mut(t) {
                Some(mine) => *mine += c,
                None => return Err(FsmError::LedgerMismatch(t.to_string())),
            }
        }
        Ok(())
    }
}

pub fn coverage(ledger: &CoverageLedger) -> f64 {
    ledger.coverage()
}

// ---------------------------------------------------------------------------
// EMRM machine

pub mod emrm {
    pub const S1: &str = "S1";
    pub const S2: &str = "S2";
    pub const S3: &str = "S3";
    pub const S4: &str = "S4";
    pub const S5: &str = "S5";
    pub const S6: &str = "S6";

    pub const HAZARD_DETECTED: &str = "hazard_detected";
    pub const NO_RISK: &str = "no_risk";
    pub const HIGH_RISK: &str = "high_risk";
    pub const EXECUTE_MANEUVER: &str = "execute_maneuver";
    pub const EMRM_DONE: &str = "EMRM_done";
    pub const TIMEOUT_ERROR: &str = "timeout_error";
    pub const POST_INCIDENT_RESPONSE: &str = "post_incident_response";
    pub const SAFE: &str = "safe";

    /// Detection, escalation, maneuver and recovery back to normal driving.
    pub const SUCCESS_STRING: [&str; 4] = [HAZARD_DETECTED, HIGH_RISK, EXECUTE_MANEUVER, EMRM_DONE];
    /// Maneuver times out, incident response, then resume.
    pub const FAILURE_STRING: [&str; 6] = [
        HAZARD_DETECTED,
        HIGH_RISK,
        EXECUTE_MANEUVER,
        TIMEOUT_ERROR,
        POST_INCIDENT_RESPONSE,
        SAFE,
    ];
    /// Hazard judged harmless.
    pub const NO_RISK_STRING: [&str; 2] = [HAZARD_DETECTED, NO_RISK];
}

pub fn build_emrm_machine() -> Machine {
    use emrm::*;
    let mut b = Machine::builder("emrm");
    for s in [S1, S2, S3, S4, S5, S6] {
        b.state(s);
    }
    for e in [
        HAZARD_DETECTED,
        NO_RISK,
        HIGH_RISK,
        EXECUTE_MANEUVER,
        EMRM_DONE,
        TIMEOUT_ERROR,
        POST_INCIDENT_RESPONSE,
        SAFE,
    ] {
        b.event(e);
    }
    b.transition(S1, HAZARD_DETECTED, S2)
        .transition(S2, NO_RISK, S1)
        .transition(S2, HIGH_RISK, S3)
        .transition(S3, EXECUTE_MANEUVER, S4)
        .transition(S4, EMRM_DONE, S1)
        .transition(S4, TIMEOUT_ERROR, S5)
        .transition(S5, POST_INCIDENT_RESPONSE, S6)
        .transition(S6, SAFE, S1)
        .initial(S1)
        .mark(S6);
    b.build().expect("EMRM machine is well-formed")
}

// ---------------------------------------------------------------------------
// Loss-evaluation machine

macro_rules! layer_enum {
    ($name:ident { $($variant:ident),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn id(self) -> &'static str {
                match self { $($name::$variant => stringify!($variant)),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.id())
            }
        }
    };
}

layer_enum!(Severity { Se1, Se2, Se3 });
layer_enum!(Exposure { E0, E1 });
layer_enum!(Controllability { C0, C1, C2, C3 });
layer_enum!(Maneuverability { Mi1, Mi2, Mi3 });
layer_enum!(Recommendation {
    Dodge,
    DriftToAvoid,
    DriftToAccident,
    EmergencyStop
});

pub const WIDE_PASSAGE: &str = "wide_passage";
pub const NARROW_PASSAGE: &str = "narrow_passage";

/// One row of the strategy decision table. Empty lists match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossEvalRule {
    #[serde(default)]
    pub severity: Vec<Severity>,
    #[serde(default)]
    pub controllability: Vec<Controllability>,
    #[serde(default)]
    pub maneuverability: Vec<Maneuverability>,
    #[serde(default)]
    pub wide_passage: Option<bool>,
    pub recommend: Recommendation,
}

impl LossEvalRule {
    fn matches(&self, se: Severity, c: Controllability, mi: Maneuverability, wide: bool) -> bool {
        (self.severity.is_empty() || self.severity.contains(&se))
            && (self.controllability.is_empty() || self.controllability.contains(&c))
            && (self.maneuverability.is_empty() || self.maneuverability.contains(&mi))
            && self.wide_passage.is_none_or(|w| w == wide)
    }
}

/// First-match decision table; unmatched inputs fall back to `fallback`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossEvalTable {
    pub rules: Vec<LossEvalRule>,
    pub fallback: Recommendation,
}

const DEFAULT_LOSS_EVAL_TABLE: &str = include_str!("../data/loss_eval_table.yaml");

impl Default for LossEvalTable {
    fn default() -> Self {
        Self::from_yaml(DEFAULT_LOSS_EVAL_TABLE).expect("bundled decision table is valid")
    }
}

impl LossEvalTable {
    pub fn from_yaml(text: &str) -> Result<Self, FsmError> {
        serde_yaml::from_str(text).map_err(|e| FsmError::InvalidTable(e.to_string()))
    }

    pub fn recommend(
        &self,
        se: Severity,
        _exposure: Exposure,
        c: Controllability,
        mi: Maneuverability,
        wide_passage: bool,
    ) -> Recommendation {
        self.rules
            .iter()
            .find(|r| r.matches(se, c, mi, wide_passage))
            .map(|r| r.recommend)
            .unwrap_or(self.fallback)
    }

    /// Layered machine consuming `Se, E, C, Mi` and, only where the table
    /// depends on it, a trailing `wide_passage` / `narrow_passage` event.
    pub fn build_machine(&self) -> Machine {
        let mut b = Machine::builder("loss-eval");
        let start = "start";
        b.state(start).initial(start);
        for e in Severity::ALL
            .iter()
            .map(|x| x.id())
            .chain(Exposure::ALL.iter().map(|x| x.id()))
            .chain(Controllability::ALL.iter().map(|x| x.id()))
            .chain(Maneuverability::ALL.iter().map(|x| x.id()))
            .chain([WIDE_PASSAGE, NARROW_PASSAGE])
        {
            b.event(e);
        }
        for r in Recommendation::ALL {
            b.state(r.id()).mark(r.id());
        }
        for &se in Severity::ALL {
            let s1 = se.id().to_string();
            b.transition(start, se.id(), &s1);
            for &ex in Exposure::ALL {
                let s2 = format!("{s1}.{ex}");
                b.transition(&s1, ex.id(), &s2);
                for &c in Controllability::ALL {
                    let s3 = format!("{s2}.{c}");
                    b.transition(&s2, c.id(), &s3);
                    for &mi in Maneuverability::ALL {
                        let wide = self.recommend(se, ex, c, mi, true);
                        let narrow = self.recommend(se, ex, c, mi, false);
                        if wide == narrow {
                            b.transition(&s3, mi.id(), wide.id());
                        } else {
                            let s4 = format!("{s3}.{mi}");
                            b.transition(&s3, mi.id(), &s4);
                            b.transition(&s4, WIDE_PASSAGE, wide.id());
                            b.transition(&s4, NARROW_PASSAGE, narrow.id());
                        }
                    }
                }
            }
        }
        b.build().expect("loss-evaluation machine is well-formed")
    }
}

pub fn build_loss_eval_machine() -> Machine {
    LossEvalTable::default().build_machine()
}

#[cfg(test)]
mod tests {
    use super::emrm::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_examples() {
        let m = build_emrm_machine();
        assert_eq!(m.step(S1, HAZARD_DETECTED).unwrap(), S2);
        assert_eq!(m.step(S4, EMRM_DONE).unwrap(), S1);
        assert!(matches!(
            m.step(S3, HAZARD_DETECTED),
            Err(FsmError::UndefinedTransition { .. })
        ));
        assert!(matches!(m.step("S9", HAZARD_DETECTED), Err(FsmError::InvalidId(_))));
        assert!(matches!(m.step(S1, "launch"), Err(FsmError::InvalidId(_))));
    }

    #[test]
    fn run_examples() {
        let m = build_emrm_machine();
        let empty: [&str; 0] = [];
        let t = m.run(S1, &empty).unwrap();
        assert_eq!(t.visited, vec![S1.to_string()]);
        assert!(t.is_completed());

        let t = m.run(S1, &SUCCESS_STRING).unwrap();
        assert!(t.is_completed());
        assert_eq!(t.final_state(), S1);
        assert_eq!(t.visited.len(), t.consumed.len() + 1);

        let t = m.run(S1, &[HAZARD_DETECTED, EMRM_DONE]).unwrap();
        assert_eq!(t.status, TraceStatus::UndefinedTransition(1));
        assert_eq!(t.final_state(), S2);
    }

    #[test]
    fn emrm_machine_shape() {
        let m = build_emrm_machine();
        assert_eq!(m.states().len(), 6);
        assert_eq!(m.events().len(), 8);
        assert_eq!(m.transition_count(), 8);
        assert_eq!(m.marked(), BTreeSet::from([S6]));
        assert_eq!(m.initial(), S1);
    }

    #[test]
    fn reachability() {
        let m = build_emrm_machine();
        let all: BTreeSet<String> = m.states().iter().cloned().collect();
        assert_eq!(m.reachable(S1).unwrap(), all);
        assert!(m.reachable(S6).unwrap().contains(S1));

        let mut b = Machine::builder("lonely");
        b.state("s");
        let lonely = b.build().unwrap();
        assert_eq!(lonely.reachable("s").unwrap(), BTreeSet::from(["s".to_string()]));
        assert!(lonely.reachable("x").is_err());
    }

    #[test]
    fn s6_only_through_s5() {
        let m = build_emrm_machine();
        let into_s6: Vec<_> = m.transitions().filter(|(_, dst)| *dst == S6).collect();
        assert_eq!(into_s6.len(), 1);
        assert_eq!(into_s6[0].0.state, S5);
    }

    #[test]
    fn ledger_coverage_examples() {
        let m = build_emrm_machine();
        let mut ledger = CoverageLedger::new(&m);
        assert_eq!(coverage(&ledger), 0.0);

        m.step_recorded(&mut ledger, S1, HAZARD_DETECTED).unwrap();
        assert!((ledger.coverage() - 1.0 / 8.0).abs() < 1e-12);

        let mut ledger = CoverageLedger::new(&m);
        for s in [&SUCCESS_STRING[..], &FAILURE_STRING[..], &NO_RISK_STRING[..]] {
            ledger.record(&m.run(S1, s).unwrap()).unwrap();
        }
        assert_eq!(ledger.coverage(), 1.0);
    }

    #[test]
    fn ledger_merge() {
        let m = build_emrm_machine();
        let mut a = CoverageLedger::new(&m);
        let mut b = CoverageLedger::new(&m);
        a.record(&m.run(S1, &SUCCESS_STRING).unwrap()).unwrap();
        b.record(&m.run(S1, &NO_RISK_STRING).unwrap()).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.hits(&TransitionRef::new(S1, HAZARD_DETECTED)), Some(2));
        let other = CoverageLedger::new(&build_loss_eval_machine());
        assert!(a.merge(&other).is_err());
    }

    #[test]
    fn table_round_trip() {
        let m = build_emrm_machine();
        let parsed = Machine::from_table(&m.to_table()).unwrap();
        assert_eq!(parsed, m);
        let lm = build_loss_eval_machine();
        assert_eq!(Machine::from_table(&lm.to_table()).unwrap(), lm);
    }

    #[test]
    fn table_parse_errors() {
        let err = Machine::from_table("a go b\n").unwrap_err();
        assert!(matches!(err, FsmError::Parse { line: 1, .. }));
        let err = Machine::from_table("a go -> b\na go -> c\n").unwrap_err();
        assert!(matches!(err, FsmError::Parse { line: 2, .. }));
        let err = Machine::from_table("a go -> b\ninitial z\n").unwrap_err();
        assert!(matches!(err, FsmError::InvalidMachine(_)));
    }

    #[test]
    fn loss_eval_examples() {
        let m = build_loss_eval_machine();
        let t = m.run_from_initial(&["Se3", "E0", "C2", "Mi3"]);
        assert!(t.is_completed());
        assert_eq!(t.final_state(), "DriftToAccident");
        let t = m.run_from_initial(&["Se1", "E1", "C0", "Mi1"]);
        assert_eq!(t.final_state(), "EmergencyStop");
        assert!(m.is_marked("EmergencyStop"));

        let t = m.run_from_initial(&["C0"]);
        assert_eq!(t.status, TraceStatus::UndefinedTransition(0));
        let t = m.run_from_initial(&["Se2", "Se2"]);
        assert_eq!(t.status, TraceStatus::UndefinedTransition(1));
    }

    #[test]
    fn loss_eval_passage_layer_only_where_needed() {
        let m = build_loss_eval_machine();
        let t = m.run_from_initial(&["Se2", "E0", "C0", "Mi3", WIDE_PASSAGE]);
        assert_eq!(t.final_state(), "Dodge");
        let t = m.run_from_initial(&["Se2", "E0", "C0", "Mi3", NARROW_PASSAGE]);
        assert_eq!(t.final_state(), "DriftToAvoid");
        let t = m.run_from_initial(&["Se3", "E1", "C1", "Mi2"]);
        assert_eq!(t.final_state(), "DriftToAvoid");
    }

    #[test]
    fn every_full_input_reaches_a_recommendation() {
        let table = LossEvalTable::default();
        let m = table.build_machine();
        for &se in Severity::ALL {
            for &ex in Exposure::ALL {
                for &c in Controllability::ALL {
                    for &mi in Maneuverability::ALL {
                        for wide in [true, false] {
                            let passage = if wide { WIDE_PASSAGE } else { NARROW_PASSAGE };
                            let mut events = vec![se.id(), ex.id(), c.id(), mi.id()];
                            let t = m.run_from_initial(&events);
                            let state = if m.is_marked(t.final_state()) {
                                t.final_state().to_string()
                            } else {
                                events.push(passage);
                                m.run_from_initial(&events).final_state().to_string()
                            };
                            assert_eq!(state, table.recommend(se, ex, c, mi, wide).id());
                        }
                    }
                }
            }
        }
    }

    fn event_string() -> impl Strategy<Value = Vec<&'static str>> {
        let events = vec![
            HAZARD_DETECTED,
            NO_RISK,
            HIGH_RISK,
            EXECUTE_MANEUVER,
            EMRM_DONE,
            TIMEOUT_ERROR,
            POST_INCIDENT_RESPONSE,
            SAFE,
        ];
        proptest::collection::vec(proptest::sample::select(events), 0..12)
    }

    proptest! {
        #[test]
        fn prefix_closure(events in event_string(), start in 0usize..6) {
            let m = build_emrm_machine();
            let from = m.states()[start].clone();
            let full = m.run(&from, &events).unwrap();
            if full.is_completed() {
                for k in 0..=events.len() {
                    prop_assert!(m.run(&from, &events[..k]).unwrap().is_completed());
                }
            }
        }

        #[test]
        fn coverage_is_monotone(strings in proptest::collection::vec(event_string(), 1..6)) {
            let m = build_emrm_machine();
            let mut ledger = CoverageLedger::new(&m);
            let mut last = ledger.coverage();
            for s in &strings {
                let trace = m.run(S1, s).unwrap();
                ledger.record(&trace).unwrap();
                let now = ledger.coverage();
                prop_assert!(now >= last);
                last = now;
            }
        }
    }

    #[test]
    fn determinism_and_empty_identity() {
        let m = build_emrm_machine();
        for s in m.states() {
            let empty: [&str; 0] = [];
            assert_eq!(m.run(s, &empty).unwrap().final_state(), s);
            for e in m.events() {
                let first = m.step(s, e).ok();
                assert_eq!(first, m.step(s, e).ok());
            }
        }
    }
}
