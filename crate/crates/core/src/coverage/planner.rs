//! Coverage-first greedy construction of a scenario set and the C1–C4 checker.
//!
//! C1: every tracked cell holds at least `n_c` points.
//! C2: every admissible bin boundary (and categorical mode) is hit exactly.
//! C3: every admissible level combination of every `t` influential factors appears.
//! C4: every malfunction region holds at least `n_m` points tagged with it.
//!
//! "Admissible" means realisable by some point the relevance predicate accepts.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::covering_array::{extend_covering_array, uncovered_tuples};
use super::domain::{AbstractionMap, Cell, FactorDomain, Value};
use super::stats::{hoeffding_min_samples, importance_proposal, wilson_half_width};
use super::CoverageError;
use crate::fsm::TransitionRef;

const LATTICE_LIMIT: usize = 250_000;
const PROBE_BUDGET: f64 = 343.0;
const SAMPLE_TRIES: usize = 64;
const WILSON_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSpec {
    /// `None` tracks every admissible cell of the lattice.
    #[serde(default)]
    pub tracked_cells: Option<Vec<Cell>>,
    pub n_c: usize,
    pub strength: usize,
    /// Influential factor names (Q_f); empty means all factors.
    #[serde(default)]
    pub influential: Vec<String>,
    #[serde(default)]
    pub n_m: usize,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default)]
    pub max_points: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl CoverageSpec {
    pub fn validate(&self) -> Result<(), CoverageError> {
        if self.n_c < 1 {
            return Err(CoverageError::Domain("n_c must be ≥ 1".into()));
        }
        if !(2..=3).contains(&self.strength) {
            return Err(CoverageError::Domain(format!(
                "strength {} not in {{2, 3}}",
                self.strength
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CoverageError::Domain(format!("ε = {} outside (0, 1)", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CoverageError::Domain(format!("δ = {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }
}

/// Cells in which a malfunction `id` is injected: a box of allowed levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalfunctionRegion {
    pub id: String,
    /// Factor name → allowed level indices. Factors not listed are unrestricted.
    #[serde(default)]
    pub allowed: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub transitions: Vec<TransitionRef>,
}

impl MalfunctionRegion {
    fn contains(&self, map: &AbstractionMap, cell: &Cell) -> bool {
        self.allowed
            .iter()
            .all(|(name, levels)| map.factor_index(name).is_some_and(|j| levels.contains(&cell.0[j])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub cell: Cell,
    pub weight: f64,
}

/// Exposure prior over cells; unlisted cells get `default_weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposurePrior {
    #[serde(default = "one")]
    pub default_weight: f64,
    #[serde(default)]
    pub entries: Vec<PriorEntry>,
}

fn one() -> f64 {
    1.0
}

impl Default for ExposurePrior {
    fn default() -> Self {
        Self {
            default_weight: 1.0,
            entries: Vec::new(),
        }
    }
}

impl ExposurePrior {
    pub fn weight(&self, cell: &Cell) -> f64 {
        self.entries
            .iter()
            .find(|e| &e.cell == cell)
            .map(|e| e.weight)
            .unwrap_or(self.default_weight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SeededBoundary,
    CoveringArray,
    Malfunction,
    TopUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub values: Vec<Value>,
    pub cell: Cell,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malfunction: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transitions: Vec<TransitionRef>,
    pub prior: f64,
    pub proposal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub factors: Vec<String>,
    pub points: Vec<TestPoint>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count_in(&self, cell: &Cell) -> usize {
        self.points.iter().filter(|p| &p.cell == cell).count()
    }
}

/// Serializable planning request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanInput {
    pub factors: Vec<FactorDomain>,
    pub spec: CoverageSpec,
    #[serde(default)]
    pub malfunctions: Vec<MalfunctionRegion>,
    #[serde(default)]
    pub prior: ExposurePrior,
}

pub enum OutcomeOracle<'a> {
    /// Coverage constraints only, no statistical top-up.
    Skip,
    /// Planning-only mode: every tracked cell is filled to `max(n_c, hoeffding(ε, δ))`.
    Stub,
    /// Runs each point; stops a cell once its Wilson half-width is ≤ ε,
    /// capped at the Hoeffding count.
    Live(&'a dyn Fn(&TestPoint) -> bool),
}

type Relevance<'a> = Box<dyn Fn(&[Value]) -> bool + Send + Sync + 'a>;

/// Planning problem with the admissible part of the lattice precomputed.
pub struct Problem<'a> {
    map: AbstractionMap,
    spec: CoverageSpec,
    malfunctions: Vec<MalfunctionRegion>,
    prior: ExposurePrior,
    relevance: Relevance<'a>,
    /// Admissible cell → one relevant point inside it.
    admissible: BTreeMap<Cell, Vec<Value>>,
    influential: Vec<usize>,
}

impl<'a> Problem<'a> {
    pub fn new(input: PlanInput) -> Result<Self, CoverageError> {
        Self::with_relevance(input, |_| true)
    }

    pub fn with_relevance(
        input: PlanInput,
        relevance: impl Fn(&[Value]) -> bool + Send + Sync + 'a,
    ) -> Result<Self, CoverageError> {
        input.spec.validate()?;
        let map = AbstractionMap::new(input.factors)?;
        if map.cell_count() > LATTICE_LIMIT {
            return Err(CoverageError::Domain(format!(
                "lattice has {} cells, limit is {LATTICE_LIMIT}",
                map.cell_count()
            )));
        }
        let influential = if input.spec.influential.is_empty() {
            (0..map.domains().len()).collect()
        } else {
            input
                .spec
                .influential
                .iter()
                .map(|n| {
                    map.factor_index(n)
                        .ok_or_else(|| CoverageError::Domain(format!("unknown influential factor `{n}`")))
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        let levels = map.levels();
        if let Some(cells) = &input.spec.tracked_cells {
            for c in cells {
                if c.0.len() != levels.len() || c.0.iter().zip(&levels).any(|(l, n)| l >= n) {
                    return Err(CoverageError::Domain(format!("tracked cell {c} outside the lattice")));
                }
            }
        }
        for m in &input.malfunctions {
            for (name, allowed) in &m.allowed {
                let j = map
                    .factor_index(name)
                    .ok_or_else(|| CoverageError::Domain(format!("malfunction {}: unknown factor `{name}`", m.id)))?;
                if allowed.iter().any(|&l| l >= levels[j]) {
                    return Err(CoverageError::Domain(format!(
                        "malfunction {}: level out of range for `{name}`",
                        m.id
                    )));
                }
            }
        }
        let mut problem = Self {
            map,
            spec: input.spec,
            malfunctions: input.malfunctions,
            prior: input.prior,
            relevance: Box::new(relevance),
            admissible: BTreeMap::new(),
            influential,
        };
        let cells: Vec<Cell> = problem.map.cells().collect();
        for cell in cells {
            if let Some(p) = problem.probe_cell(&cell, None) {
                problem.admissible.insert(cell, p);
            }
        }
        Ok(problem)
    }

    pub fn map(&self) -> &AbstractionMap {
        &self.map
    }

    pub fn spec(&self) -> &CoverageSpec {
        &self.spec
    }

    pub fn malfunctions(&self) -> &[MalfunctionRegion] {
        &self.malfunctions
    }

    pub fn is_relevant(&self, point: &[Value]) -> bool {
        (self.relevance)(point)
    }

    pub fn is_admissible(&self, cell: &Cell) -> bool {
        self.admissible.contains_key(cell)
    }

    pub fn admissible_cells(&self) -> impl Iterator<Item = &Cell> {
        self.admissible.keys()
    }

    pub fn tracked_cells(&self) -> Vec<Cell> {
        match &self.spec.tracked_cells {
            Some(c) => c.clone(),
            None => self.admissible.keys().cloned().collect(),
        }
    }

    fn effective_strength(&self) -> usize {
        self.spec.strength.min(self.influential.len())
    }

    /// Deterministic probe grid inside `cell`; `fixed` pins one factor's value.
    fn probe_cell(&self, cell: &Cell, fixed: Option<(usize, f64)>) -> Option<Vec<Value>> {
        let domains = self.map.domains();
        let free: Vec<usize> = (0..domains.len())
            .filter(|&j| domains[j].is_continuous() && fixed.is_none_or(|(f, _)| f != j))
            .collect();
        let m = if free.is_empty() {
            1
        } else {
            (PROBE_BUDGET.powf(1.0 / free.len() as f64).floor() as usize).clamp(1, 7)
        };
        let build = |fracs: &[f64]| -> Vec<Value> {
            let mut k = 0;
            domains
                .iter()
                .enumerate()
                .map(|(j, d)| match fixed {
                    Some((f, x)) if f == j => Value::Real(x),
                    _ if free.contains(&j) => {
                        let v = d.value_in(cell.0[j], fracs[k]);
                        k += 1;
                        v
                    }
                    _ => d.value_in(cell.0[j], 0.5),
                })
                .collect()
        };
        let centre = build(&vec![0.5; free.len()]);
        if self.map.cell_of(&centre).ok().as_ref() == Some(cell) && self.is_relevant(&centre) {
            return Some(centre);
        }
        let total = m.pow(free.len() as u32);
        for mut code in 0..total {
            let mut fracs = vec![0.0; free.len()];
            for f in fracs.iter_mut() {
                *f = ((code % m) as f64 + 0.5) / m as f64;
                code /= m;
            }
            let p = build(&fracs);
            if self.map.cell_of(&p).ok().as_ref() == Some(cell) && self.is_relevant(&p) {
                return Some(p);
            }
        }
        None
    }

    fn sample_in_cell(&self, cell: &Cell, rng: &mut ChaCha8Rng) -> Vec<Value> {
        for _ in 0..SAMPLE_TRIES {
            let p: Vec<Value> = self
                .map
                .domains()
                .iter()
                .zip(&cell.0)
                .map(|(d, &l)| d.value_in(l, rng.gen::<f64>()))
                .collect();
            if self.map.cell_of(&p).ok().as_ref() == Some(cell) && self.is_relevant(&p) {
                return p;
            }
        }
        self.admissible[cell].clone()
    }

    /// A relevant point with factor `j` pinned to `x`, preferring the other
    /// factors at their domain midpoints.
    fn boundary_point(&self, j: usize, x: f64) -> Option<Vec<Value>> {
        let mut p: Vec<Value> = self.map.domains().iter().map(|d| d.midpoint()).collect();
        p[j] = Value::Real(x);
        if self.is_relevant(&p) {
            return Some(p);
        }
        let level = self.map.domains()[j].level_of(&Value::Real(x)).ok()?;
        self.admissible
            .keys()
            .filter(|c| c.0[j] == level)
            .find_map(|c| self.probe_cell(c, Some((j, x))))
            .or_else(|| {
                self.map
                    .cells()
                    .filter(|c| c.0[j] == level && !self.admissible.contains_key(c))
                    .find_map(|c| self.probe_cell(&c, Some((j, x))))
            })
    }

    fn mode_point(&self, j: usize, level: usize) -> Option<Vec<Value>> {
        let mut p: Vec<Value> = self.map.domains().iter().map(|d| d.midpoint()).collect();
        p[j] = self.map.domains()[j].value_in(level, 0.5);
        if self.is_relevant(&p) {
            return Some(p);
        }
        self.admissible
            .iter()
            .find(|(c, _)| c.0[j] == level)
            .map(|(_, p)| p.clone())
    }

    fn tuple_admissible(&self, tuple: &[(usize, usize)]) -> bool {
        self.admissible.keys().any(|c| tuple.iter().all(|&(j, l)| c.0[j] == l))
    }

    fn projection(&self, cell: &Cell) -> Vec<usize> {
        self.influential.iter().map(|&j| cell.0[j]).collect()
    }

    fn influential_levels(&self) -> Vec<usize> {
        let levels = self.map.levels();
        self.influential.iter().map(|&j| levels[j]).collect()
    }

    /// (relative prior π, proposal q) per tracked cell.
    fn weights(&self, tracked: &[Cell]) -> Result<BTreeMap<Cell, (f64, f64)>, CoverageError> {
        let raw: Vec<f64> = tracked.iter().map(|c| self.prior.weight(c)).collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(CoverageError::DegeneratePrior);
        }
        let q = importance_proposal(&raw)?;
        Ok(tracked
            .iter()
            .zip(raw.iter().zip(q))
            .map(|(c, (&p, q))| (c.clone(), (p / total, q)))
            .collect())
    }
}

/// One point per continuous bin boundary per factor (other factors at their
/// midpoints) plus one per categorical mode. Identical points are merged.
pub fn seed_boundaries(domains: &[FactorDomain]) -> Result<Vec<TestPoint>, CoverageError> {
    let map = AbstractionMap::new(domains.to_vec())?;
    let mut out: Vec<TestPoint> = Vec::new();
    for (j, d) in domains.iter().enumerate() {
        let values: Vec<Value> = if d.is_continuous() {
            d.boundaries().into_iter().map(Value::Real).collect()
        } else {
            (0..d.levels()).map(|l| d.value_in(l, 0.5)).collect()
        };
        for v in values {
            let mut p: Vec<Value> = domains.iter().map(|d| d.midpoint()).collect();
            p[j] = v;
            if out.iter().any(|o| o.values == p) {
                continue;
            }
            let cell = map.cell_of(&p)?;
            out.push(TestPoint {
                values: p,
                cell,
                provenance: Provenance::SeededBoundary,
                malfunction: None,
                transitions: Vec::new(),
                prior: 0.0,
                proposal: 1.0,
                outcome: None,
            });
        }
    }
    Ok(out)
}

struct Builder<'p, 'a> {
    problem: &'p Problem<'a>,
    weights: BTreeMap<Cell, (f64, f64)>,
    points: Vec<TestPoint>,
    counts: BTreeMap<Cell, usize>,
}

impl Builder<'_, '_> {
    fn push(&mut self, values: Vec<Value>, provenance: Provenance, malfunction: Option<&MalfunctionRegion>) {
        let cell = self
            .problem
            .map
            .cell_of(&values)
            .expect("planner points lie in the domain");
        if provenance == Provenance::SeededBoundary && self.points.iter().any(|p| p.values == values) {
            return;
        }
        let (prior, proposal) = match self.weights.get(&cell) {
            Some(&(p, q)) if q > 0.0 => (p, q),
            Some(&(p, _)) => (p, 1.0),
            None => (0.0, 1.0),
        };
        *self.counts.entry(cell.clone()).or_default() += 1;
        self.points.push(TestPoint {
            values,
            cell,
            provenance,
            malfunction: malfunction.map(|m| m.id.clone()),
            transitions: malfunction.map(|m| m.transitions.clone()).unwrap_or_default(),
            prior,
            proposal,
            outcome: None,
        });
    }

    fn count(&self, cell: &Cell) -> usize {
        self.counts.get(cell).copied().unwrap_or(0)
    }

    /// Admissible cell matching `tuple`, preferring tracked cells with fewest points.
    fn pick_cell(&self, tuple: &[(usize, usize)]) -> Option<Cell> {
        self.problem
            .admissible
            .keys()
            .filter(|c| tuple.iter().all(|&(j, l)| c.0[j] == l))
            .min_by_key(|c| (!self.weights.contains_key(*c), self.count(c)))
            .cloned()
    }
}

pub fn plan(problem: &Problem<'_>, oracle: OutcomeOracle<'_>) -> Result<TestSet, CoverageError> {
    let spec = &problem.spec;
    let tracked = problem.tracked_cells();
    for c in &tracked {
        if !problem.is_admissible(c) {
            return Err(CoverageError::Infeasible(c.to_string()));
        }
    }
    let weights = if tracked.is_empty() {
        BTreeMap::new()
    } else {
        problem.weights(&tracked)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = Builder {
        problem,
        weights,
        points: Vec::new(),
        counts: BTreeMap::new(),
    };
    let domains = problem.map.domains();

    // 1. boundary seeds
    for (j, d) in domains.iter().enumerate() {
        if d.is_continuous() {
            for x in d.boundaries() {
                if let Some(p) = problem.boundary_point(j, x) {
                    b.push(p, Provenance::SeededBoundary, None);
                }
            }
        } else {
            for l in 0..d.levels() {
                if let Some(p) = problem.mode_point(j, l) {
                    b.push(p, Provenance::SeededBoundary, None);
                }
            }
        }
    }

    // 2. covering-array core over the influential factors
    let t = problem.effective_strength();
    if t > 0 {
        let levels = problem.influential_levels();
        let existing: Vec<Vec<usize>> = b.points.iter().map(|p| problem.projection(&p.cell)).collect();
        let rows = extend_covering_array(&levels, t, spec.seed, &existing)?;
        for row in rows {
            let tuple: Vec<(usize, usize)> = problem.influential.iter().copied().zip(row).collect();
            if let Some(c) = b.pick_cell(&tuple) {
                let p = problem.admissible[&c].clone();
                b.push(p, Provenance::CoveringArray, None);
            }
        }
        // rows that hit inadmissible combinations may leave admissible tuples open
        let rows: Vec<Vec<usize>> = b.points.iter().map(|p| problem.projection(&p.cell)).collect();
        for tuple in uncovered_tuples(&levels, t, &rows) {
            let tuple: Vec<(usize, usize)> = tuple.into_iter().map(|(k, l)| (problem.influential[k], l)).collect();
            if let Some(c) = b.pick_cell(&tuple) {
                let p = problem.admissible[&c].clone();
                b.push(p, Provenance::CoveringArray, None);
            }
        }
    }

    // 3. malfunction allocation
    for m in &problem.malfunctions {
        if spec.n_m == 0 {
            break;
        }
        let mut cells: Vec<&Cell> = problem
            .admissible
            .keys()
            .filter(|c| m.contains(&problem.map, c))
            .collect();
        if cells.is_empty() {
            return Err(CoverageError::Infeasible(format!("malfunction region {}", m.id)));
        }
        cells.sort_by_key(|c| (!b.weights.contains_key(*c), b.count(c)));
        for k in 0..spec.n_m {
            let c = cells[k % cells.len()];
            let p = if k < cells.len() {
                problem.admissible[c].clone()
            } else {
                problem.sample_in_cell(c, &mut rng)
            };
            b.push(p, Provenance::Malfunction, Some(m));
        }
    }

    // C1 floor
    for c in &tracked {
        while b.count(c) < spec.n_c {
            let p = if b.count(c) == 0 {
                problem.admissible[c].clone()
            } else {
                problem.sample_in_cell(c, &mut rng)
            };
            b.push(p, Provenance::TopUp, None);
        }
    }

    if let Some(budget) = spec.max_points {
        if b.points.len() > budget {
            return Err(CoverageError::BudgetExceeded {
                budget,
                needed: b.points.len(),
            });
        }
    }
    let budget = spec.max_points.unwrap_or(usize::MAX);

    // 4–5. risk-weighted top-up and stopping rule
    let cap = hoeffding_min_samples(spec.epsilon, spec.delta)? as usize;
    match oracle {
        OutcomeOracle::Skip => {}
        OutcomeOracle::Stub => {
            let target = cap.max(spec.n_c);
            let mut open: Vec<Cell> = tracked.iter().filter(|c| b.count(c) < target).cloned().collect();
            while !open.is_empty() && b.points.len() < budget {
                let c = draw(&open, &b.weights, &mut rng);
                let p = problem.sample_in_cell(&c, &mut rng);
                b.push(p, Provenance::TopUp, None);
                if b.count(&c) >= target {
                    open.retain(|o| o != &c);
                }
            }
        }
        OutcomeOracle::Live(run) => {
            let mut tallies: BTreeMap<Cell, (u64, u64)> = BTreeMap::new();
            for p in b.points.iter_mut() {
                let y = run(p);
                p.outcome = Some(y);
                let e = tallies.entry(p.cell.clone()).or_default();
                e.0 += u64::from(y);
                e.1 += 1;
            }
            let unsettled = |c: &Cell, tallies: &BTreeMap<Cell, (u64, u64)>| {
                let (s, n) = tallies.get(c).copied().unwrap_or((0, 0));
                (n as usize) < cap
                    && (n == 0 || wilson_half_width(s, n, WILSON_CONFIDENCE).map_or(true, |h| h > spec.epsilon))
            };
            let mut open: Vec<Cell> = tracked.iter().filter(|c| unsettled(c, &tallies)).cloned().collect();
            while !open.is_empty() && b.points.len() < budget {
                let c = draw(&open, &b.weights, &mut rng);
                let p = problem.sample_in_cell(&c, &mut rng);
                b.push(p, Provenance::TopUp, None);
                let last = b.points.last_mut().expect("just pushed");
                let y = run(last);
                last.outcome = Some(y);
                let e = tallies.entry(c.clone()).or_default();
                e.0 += u64::from(y);
                e.1 += 1;
                if !unsettled(&c, &tallies) {
                    open.retain(|o| o != &c);
                }
            }
        }
    }

    Ok(TestSet {
        factors: domains.iter().map(|d| d.name.clone()).collect(),
        points: b.points,
    })
}

/// Draws a cell with probability ∝ q; falls back to the first open cell when
/// every open cell has zero proposal mass.
fn draw(open: &[Cell], weights: &BTreeMap<Cell, (f64, f64)>, rng: &mut ChaCha8Rng) -> Cell {
    let q: Vec<f64> = open.iter().map(|c| weights.get(c).map_or(0.0, |w| w.1)).collect();
    let total: f64 = q.iter().sum();
    if total <= 0.0 {
        return open[0].clone();
    }
    let mut u = rng.gen::<f64>() * total;
    for (c, w) in open.iter().zip(&q) {
        if u < *w {
            return c.clone();
        }
        u -= w;
    }
    open.iter()
        .zip(&q)
        .rev()
        .find(|(_, w)| **w > 0.0)
        .map(|(c, _)| c.clone())
        .expect("positive total")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub satisfied: bool,
    pub violations: Vec<String>,
}

impl ConstraintReport {
    fn from(violations: Vec<String>) -> Self {
        Self {
            satisfied: violations.is_empty(),
            violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Points outside the domain or rejected by the relevance predicate.
    pub invalid_points: Vec<String>,
    pub c1: ConstraintReport,
    pub c2: ConstraintReport,
    pub c3: ConstraintReport,
    pub c4: ConstraintReport,
}

impl CoverageReport {
    pub fn all_satisfied(&self) -> bool {
        self.invalid_points.is_empty()
            && self.c1.satisfied
            && self.c2.satisfied
            && self.c3.satisfied
            && self.c4.satisfied
    }

    pub fn violation_count(&self) -> usize {
        self.invalid_points.len()
            + self.c1.violations.len()
            + self.c2.violations.len()
            + self.c3.violations.len()
            + self.c4.violations.len()
    }
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

pub fn check_coverage(testset: &TestSet, problem: &Problem<'_>) -> CoverageReport {
    let spec = &problem.spec;
    let map = &problem.map;
    let domains = map.domains();

    let mut invalid = Vec::new();
    let mut cells = Vec::with_capacity(testset.points.len());
    for (i, p) in testset.points.iter().enumerate() {
        match map.cell_of(&p.values) {
            Ok(c) => {
                if !problem.is_relevant(&p.values) {
                    invalid.push(format!("point {i} fails the relevance predicate"));
                }
                cells.push(Some(c));
            }
            Err(e) => {
                invalid.push(format!("point {i}: {e}"));
                cells.push(None);
            }
        }
    }
    let mut counts: BTreeMap<&Cell, usize> = BTreeMap::new();
    for c in cells.iter().flatten() {
        *counts.entry(c).or_default() += 1;
    }

    let c1 = problem
        .tracked_cells()
        .iter()
        .filter_map(|c| {
            let n = counts.get(c).copied().unwrap_or(0);
            (n < spec.n_c).then(|| format!("cell {c} has {n} < {} points", spec.n_c))
        })
        .collect();

    let mut c2 = Vec::new();
    for (j, d) in domains.iter().enumerate() {
        if d.is_continuous() {
            for x in d.boundaries() {
                let hit = testset
                    .points
                    .iter()
                    .any(|p| p.values.get(j).and_then(Value::as_real).is_some_and(|v| same(v, x)));
                if !hit && problem.boundary_point(j, x).is_some() {
                    c2.push(format!("{} boundary {x} not tested", d.name));
                }
            }
        } else {
            for l in 0..d.levels() {
                let hit = cells.iter().flatten().any(|c| c.0[j] == l);
                if !hit && problem.admissible.keys().any(|c| c.0[j] == l) {
                    c2.push(format!("{} mode {} not tested", d.name, d.value_in(l, 0.5)));
                }
            }
        }
    }

    let mut c3 = Vec::new();
    let t = problem.effective_strength();
    if t > 0 {
        let rows: Vec<Vec<usize>> = cells.iter().flatten().map(|c| problem.projection(c)).collect();
        for tuple in uncovered_tuples(&problem.influential_levels(), t, &rows) {
            let tuple: Vec<(usize, usize)> = tuple.into_iter().map(|(k, l)| (problem.influential[k], l)).collect();
            if problem.tuple_admissible(&tuple) {
                let desc: Vec<String> = tuple.iter().map(|&(j, l)| format!("{}={l}", domains[j].name)).collect();
                c3.push(format!("combination ({}) not covered", desc.join(", ")));
            }
        }
    }

    let mut c4 = Vec::new();
    if spec.n_m > 0 {
        for m in &problem.malfunctions {
            let n = testset
                .points
                .iter()
                .zip(&cells)
                .filter(|(p, c)| {
                    p.malfunction.as_deref() == Some(m.id.as_str()) && c.as_ref().is_some_and(|c| m.contains(map, c))
                })
                .count();
            if n < spec.n_m {
                c4.push(format!("malfunction {} has {n} < {} tests", m.id, spec.n_m));
            }
        }
    }

    CoverageReport {
        invalid_points: invalid,
        c1: ConstraintReport::from(c1),
        c2: ConstraintReport::from(c2),
        c3: ConstraintReport::from(c3),
        c4: ConstraintReport::from(c4),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(n_c: usize, strength: usize) -> CoverageSpec {
        CoverageSpec {
            tracked_cells: None,
            n_c,
            strength,
            influential: Vec::new(),
            n_m: 0,
            epsilon: 0.5,
            delta: 0.05,
            max_points: None,
            seed: 1,
        }
    }

    fn input(factors: Vec<FactorDomain>, spec: CoverageSpec) -> PlanInput {
        PlanInput {
            factors,
            spec,
            malfunctions: Vec::new(),
            prior: ExposurePrior::default(),
        }
    }

    #[test]
    fn binary_factorial() {
        let p = Problem::new(input(
            vec![
                FactorDomain::categorical("a", &["x", "y"]),
                FactorDomain::categorical("b", &["u", "v"]),
            ],
            spec(1, 2),
        ))
        .unwrap();
        let set = plan(&p, OutcomeOracle::Skip).unwrap();
        assert_eq!(set.len(), 4);
        assert!(check_coverage(&set, &p).all_satisfied());
    }

    // Exhaustive minimality oracle over subsets of a candidate pool that
    // contains every useful boundary/interior combination.
    #[test]
    fn tiny_instance_within_twice_minimum() {
        let factors = vec![
            FactorDomain::uniform("x", 0.0, 1.0, 2),
            FactorDomain::uniform("y", 0.0, 1.0, 2),
        ];
        let p = Problem::new(input(factors, spec(1, 2))).unwrap();
        let set = plan(&p, OutcomeOracle::Skip).unwrap();
        assert!(check_coverage(&set, &p).all_satisfied());

        let coords = [0.0, 0.25, 0.5, 0.75, 1.0];
        let pool: Vec<Vec<Value>> = coords
            .iter()
            .flat_map(|&x| coords.iter().map(move |&y| vec![Value::Real(x), Value::Real(y)]))
            .collect();
        let mut best = usize::MAX;
        for mask in 1u32..(1 << pool.len()) {
            let size = mask.count_ones() as usize;
            if size >= best || size > 6 {
                continue;
            }
            let points = pool
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, v)| TestPoint {
                    values: v.clone(),
                    cell: p.map().cell_of(v).unwrap(),
                    provenance: Provenance::TopUp,
                    malfunction: None,
                    transitions: Vec::new(),
                    prior: 1.0,
                    proposal: 1.0,
                    outcome: None,
                })
                .collect();
            let candidate = TestSet {
                factors: set.factors.clone(),
                points,
            };
            if check_coverage(&candidate, &p).all_satisfied() {
                best = size;
            }
        }
        assert_eq!(best, 4);
        assert!(set.len() <= 2 * best, "{} points", set.len());
    }

    #[test]
    fn stub_oracle_fills_hoeffding_target() {
        let p = Problem::new(input(
            vec![
                FactorDomain::uniform("x", 0.0, 1.0, 2),
                FactorDomain::categorical("m", &["dry", "wet"]),
            ],
            spec(1, 2),
        ))
        .unwrap();
        let set = plan(&p, OutcomeOracle::Stub).unwrap();
        for c in p.tracked_cells() {
            assert!(set.count_in(&c) >= 8);
        }
        assert!(check_coverage(&set, &p).all_satisfied());
    }

    #[test]
    fn live_oracle_stops_by_half_width() {
        let mut s = spec(1, 2);
        s.epsilon = 0.2;
        let p = Problem::new(input(
            vec![
                FactorDomain::uniform("x", 0.0, 1.0, 2),
                FactorDomain::uniform("y", 0.0, 1.0, 2),
            ],
            s,
        ))
        .unwrap();
        let always = |_: &TestPoint| true;
        let set = plan(&p, OutcomeOracle::Live(&always)).unwrap();
        let cap = hoeffding_min_samples(0.2, 0.05).unwrap() as usize;
        for c in p.tracked_cells() {
            let n = set.count_in(&c);
            assert!(n < cap, "all-success cells settle before the cap");
            assert!(wilson_half_width(n as u64, n as u64, 0.95).unwrap() <= 0.2);
        }
        assert!(set.points.iter().all(|p| p.outcome == Some(true)));
    }

    #[test]
    fn check_reports_missing_cell_and_malfunction() {
        let mut inp = input(
            vec![
                FactorDomain::uniform("x", 0.0, 1.0, 3),
                FactorDomain::categorical("m", &["a", "b"]),
            ],
            spec(1, 2),
        );
        inp.spec.n_m = 1;
        inp.malfunctions.push(MalfunctionRegion {
            id: "UCA3".into(),
            allowed: BTreeMap::from([("x".to_string(), vec![0])]),
            transitions: vec![TransitionRef::new("S3", "execute_maneuver")],
        });
        let p = Problem::new(inp).unwrap();
        let set = plan(&p, OutcomeOracle::Skip).unwrap();
        assert!(check_coverage(&set, &p).all_satisfied());
        let tagged: Vec<_> = set.points.iter().filter(|q| q.malfunction.is_some()).collect();
        assert_eq!(tagged[0].transitions[0].event, "execute_maneuver");

        let victim = Cell(vec![1, 0]);
        let mut broken = set.clone();
        broken.points.retain(|q| q.cell != victim);
        let report = check_coverage(&broken, &p);
        assert!(report.c1.violations.iter().any(|v| v.contains("[1,0]")));

        let mut broken = set.clone();
        broken.points.retain(|q| q.malfunction.is_none());
        assert!(!check_coverage(&broken, &p).c4.satisfied);
    }

    #[test]
    fn full_factorial_satisfies_c1_to_c3() {
        let p = Problem::new(input(
            vec![
                FactorDomain::categorical("a", &["x", "y", "z"]),
                FactorDomain::categorical("b", &["u", "v"]),
            ],
            spec(1, 2),
        ))
        .unwrap();
        let points = p
            .map()
            .cells()
            .map(|c| TestPoint {
                values: p.map().representative(&c),
                cell: c,
                provenance: Provenance::TopUp,
                malfunction: None,
                transitions: Vec::new(),
                prior: 1.0,
                proposal: 1.0,
                outcome: None,
            })
            .collect();
        let set = TestSet {
            factors: vec!["a".into(), "b".into()],
            points,
        };
        assert!(check_coverage(&set, &p).all_satisfied());
    }

    #[test]
    fn seeds() {
        let s = seed_boundaries(&[FactorDomain::uniform("v", 30.0, 72.0, 7)]).unwrap();
        let vs: Vec<f64> = s.iter().filter_map(|p| p.values[0].as_real()).collect();
        assert!(vs.contains(&30.0) && vs.contains(&72.0));
        let s = seed_boundaries(&[FactorDomain::categorical("road", &["dry", "wet", "snow", "ice"])]).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(seed_boundaries(&[]), Err(CoverageError::EmptyDomain));
    }

    #[test]
    fn infeasible_tracked_cell() {
        let mut s = spec(1, 2);
        s.tracked_cells = Some(vec![Cell(vec![1, 1])]);
        let p = Problem::with_relevance(
            input(
                vec![
                    FactorDomain::uniform("x", 0.0, 1.0, 2),
                    FactorDomain::uniform("y", 0.0, 1.0, 2),
                ],
                s,
            ),
            |v: &[Value]| v[0].as_real().unwrap() + v[1].as_real().unwrap() < 0.9,
        )
        .unwrap();
        assert!(matches!(
            plan(&p, OutcomeOracle::Skip),
            Err(CoverageError::Infeasible(_))
        ));
    }

    #[test]
    fn deterministic() {
        let mk = || {
            Problem::new(input(
                vec![
                    FactorDomain::uniform("x", 0.0, 1.0, 3),
                    FactorDomain::uniform("y", 0.0, 2.0, 2),
                ],
                spec(2, 2),
            ))
            .unwrap()
        };
        assert_eq!(
            plan(&mk(), OutcomeOracle::Stub).unwrap(),
            plan(&mk(), OutcomeOracle::Stub).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn plan_is_sound(
            bins in proptest::collection::vec(1usize..4, 2..4),
            n_c in 1usize..3,
            strength in 2usize..4,
            n_m in 0usize..3,
            cut in 0.6f64..2.0,
            seed in any::<u64>(),
        ) {
            let factors: Vec<FactorDomain> = bins
                .iter()
                .enumerate()
                .map(|(i, &b)| FactorDomain::uniform(&format!("f{i}"), 0.0, 1.0, b))
                .collect();
            let mut s = spec(n_c, strength);
            s.seed = seed;
            s.n_m = n_m;
            let mut inp = input(factors, s);
            inp.malfunctions.push(MalfunctionRegion {
                id: "m".into(),
                allowed: BTreeMap::from([("f0".to_string(), vec![0])]),
                transitions: Vec::new(),
            });
            let p = Problem::with_relevance(inp, move |v: &[Value]| {
                v.iter().filter_map(Value::as_real).sum::<f64>() <= cut
            }).unwrap();
            let set = plan(&p, OutcomeOracle::Skip).unwrap();
            let report = check_coverage(&set, &p);
            prop_assert!(report.all_satisfied(), "{:?}", report);
        }
    }
}
