//! Parameter-grid sweeps: one scene per cell, every strategy plus the dual-tree
//! planner on feasible cells, checkpointed so an interrupted run can resume.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use emrm_core::hazard::LossLevel;
use emrm_sim::rrt::{plan_dual, Mitigability, PlannerConfig, RrtError, Terminal};
use emrm_sim::vehicle::{
    no_action_loss, simulate_with, stop_boundary_ttc, Scene, SimError, SimOptions, SimOutcome, Strategy, VehicleParams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene_io::SceneError;

/// Cells simulated between checkpoint writes.
const CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("simulation failed in {cell}: {source}")]
    Sim { cell: String, source: SimError },
    #[error("planner failed in {cell}: {source}")]
    Planner { cell: String, source: RrtError },
    #[error("interrupted after {completed} of {total} cells")]
    Interrupted {
        completed: usize,
        total: usize,
        checkpoint: Option<PathBuf>,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    SpeedKmh,
    TtcS,
    Mu,
    PassageM,
    TruckSpeedKmh,
}

impl Param {
    pub const ALL: [Param; 5] = [
        Param::SpeedKmh,
        Param::TtcS,
        Param::Mu,
        Param::PassageM,
        Param::TruckSpeedKmh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::SpeedKmh => "speed_kmh",
            Param::TtcS => "ttc_s",
            Param::Mu => "mu",
            Param::PassageM => "passage_m",
            Param::TruckSpeedKmh => "truck_speed_kmh",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Param::SpeedKmh => "ego speed (km/h)",
            Param::TtcS => "TTC (s)",
            Param::Mu => "friction μ",
            Param::PassageM => "passage width (m)",
            Param::TruckSpeedKmh => "truck speed (km/h)",
        }
    }

    /// Allowed sweep range.
    pub fn range(self) -> (f64, f64) {
        match self {
            Param::SpeedKmh => (30.0, 72.0),
            Param::TtcS => (0.25, 2.95),
            Param::Mu => (0.1, 1.0),
            Param::PassageM => (1.0, 3.0),
            Param::TruckSpeedKmh => (10.0, 10.0),
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: Param,
    pub min: f64,
    pub max: f64,
    pub levels: usize,
}

impl Axis {
    pub fn new(param: Param, min: f64, max: f64, levels: usize) -> Self {
        Self {
            param,
            min,
            max,
            levels,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.levels == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.levels - 1) as f64;
        (0..self.levels).map(|i| round6(self.min + step * i as f64)).collect()
    }

    pub fn step(&self) -> f64 {
        if self.levels > 1 {
            (self.max - self.min) / (self.levels - 1) as f64
        } else {
            0.0
        }
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Panel {
    pub name: String,
    pub x: Axis,
    pub y: Axis,
    /// Values for parameters not on an axis; the scene template supplies the rest.
    #[serde(default)]
    pub fixed: BTreeMap<Param, f64>,
}

impl Panel {
    pub fn cell_count(&self) -> usize {
        self.x.levels * self.y.levels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSettings {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub max_iterations: usize,
    pub step: f64,
    pub goal_bias: f64,
    #[serde(default = "one")]
    pub restarts: usize,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl Default for PlannerSettings {
    fn default() -> Self {
        let d = PlannerConfig::default();
        Self {
            enabled: true,
            max_iterations: d.max_iterations,
            step: d.step,
            goal_bias: d.goal_bias,
            restarts: d.restarts,
        }
    }
}

impl PlannerSettings {
    pub fn config(&self, seed: u64) -> PlannerConfig {
        PlannerConfig {
            max_iterations: self.max_iterations,
            step: self.step,
            goal_bias: self.goal_bias,
            seed,
            goal: None,
            restarts: self.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub seed: u64,
    pub strategies: Vec<Strategy>,
    pub baseline: Strategy,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub planner: PlannerSettings,
    /// Scene template path, relative to the spec file; the bundled scene when absent.
    #[serde(default)]
    pub scene: Option<PathBuf>,
    pub panels: Vec<Panel>,
}

fn default_dt() -> f64 {
    0.01
}

impl SweepSpec {
    /// The four standard panels: coarse and fine speed × TTC at μ = 1, speed ×
    /// friction at TTC 1 s, TTC × friction at 50 km/h.
    pub fn standard() -> Self {
        Self {
            seed: 0,
            strategies: Strategy::ALL.to_vec(),
            baseline: Strategy::EmergencyStop,
            dt: default_dt(),
            vehicle: VehicleParams::default(),
            planner: PlannerSettings::default(),
            scene: None,
            panels: vec![
                Panel {
                    name: "a".into(),
                    x: Axis::new(Param::SpeedKmh, 30.0, 72.0, 5),
                    y: Axis::new(Param::TtcS, 0.25, 2.95, 6),
                    fixed: BTreeMap::from([(Param::Mu, 1.0)]),
                },
                Panel {
                    name: "b".into(),
                    x: Axis::new(Param::SpeedKmh, 30.0, 72.0, 43),
                    y: Axis::new(Param::TtcS, 0.25, 2.95, 46),
                    fixed: BTreeMap::from([(Param::Mu, 1.0)]),
                },
                Panel {
                    name: "c".into(),
                    x: Axis::new(Param::SpeedKmh, 30.0, 72.0, 43),
                    y: Axis::new(Param::Mu, 0.1, 1.0, 10),
                    fixed: BTreeMap::from([(Param::TtcS, 1.0)]),
                },
                Panel {
                    name: "d".into(),
                    x: Axis::new(Param::TtcS, 0.25, 2.95, 26),
                    y: Axis::new(Param::Mu, 0.1, 1.0, 10),
                    fixed: BTreeMap::from([(Param::SpeedKmh, 50.0)]),
                },
            ],
        }
    }

    pub fn from_yaml(text: &str) -> Result<Self, SweepError> {
        let spec: SweepSpec = serde_yaml::from_str(text).map_err(|e| SweepError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = fs::read_to_string(path).map_err(|source| SweepError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec = Self::from_yaml(&text)?;
        if let (Some(scene), Some(dir)) = (&spec.scene, path.parent()) {
            if scene.is_relative() {
                spec.scene = Some(dir.join(scene));
            }
        }
        Ok(spec)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("spec serializes")
    }

    pub fn panel(&self, name: &str) -> Option<&Panel> {
        self.panels.iter().find(|p| p.name == name)
    }

    /// Keeps only the named panel.
    pub fn only_panel(mut self, name: &str) -> Result<Self, SweepError> {
        self.panels.retain(|p| p.name == name);
        if self.panels.is_empty() {
            return Err(SweepError::InvalidSpec(format!("no panel named `{name}`")));
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: String| Err(SweepError::InvalidSpec(m));
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if !self.strategies.contains(&self.baseline) {
            return bad(format!("baseline {} is not in the strategy list", self.baseline));
        }
        let unique: BTreeSet<_> = self.strategies.iter().collect();
        if unique.len() != self.strategies.len() {
            return bad("strategies must be distinct".into());
        }
        if !(self.dt > 0.0 && self.dt <= 0.05) {
            return bad(format!("dt {} outside (0, 0.05]", self.dt));
        }
        self.vehicle
            .validate()
            .map_err(|e| SweepError::InvalidSpec(e.to_string()))?;
        if self.planner.enabled {
            self.planner
                .config(0)
                .validate()
                .map_err(|e| SweepError::InvalidSpec(e.to_string()))?;
        }
        let mut names = BTreeSet::new();
        for p in &self.panels {
            if !names.insert(&p.name) {
                return bad(format!("duplicate panel `{}`", p.name));
            }
            if p.x.param == p.y.param {
                return bad(format!("panel {}: both axes sweep {}", p.name, p.x.param));
            }
            for axis in [&p.x, &p.y] {
                let (lo, hi) = axis.param.range();
                if axis.levels == 0 || axis.min > axis.max || axis.min < lo - 1e-9 || axis.max > hi + 1e-9 {
                    return bad(format!(
                        "panel {}: {} grid [{}, {}] × {} outside [{lo}, {hi}]",
                        p.name, axis.param, axis.min, axis.max, axis.levels
                    ));
                }
                if p.fixed.contains_key(&axis.param) {
                    return bad(format!("panel {}: {} is both swept and fixed", p.name, axis.param));
                }
            }
            for (param, &v) in &p.fixed {
                let (lo, hi) = param.range();
                if v < lo - 1e-9 || v > hi + 1e-9 {
                    return bad(format!("panel {}: fixed {param} = {v} outside [{lo}, {hi}]", p.name));
                }
            }
        }
        Ok(())
    }
}

/// Per-strategy outcome without the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRecord {
    pub strategy: Strategy,
    pub collided: bool,
    pub residual_kmh: f64,
    /// `None` when the ego never closed on the truck face.
    pub min_ttc_s: Option<f64>,
    pub peak_lateral: f64,
    pub loss: LossLevel,
    #[serde(default)]
    pub overlap: Option<f64>,
    #[serde(default)]
    pub incidence_deg: Option<f64>,
}

impl From<&SimOutcome> for StrategyRecord {
    fn from(o: &SimOutcome) -> Self {
        Self {
            strategy: o.strategy,
            collided: o.collided,
            residual_kmh: o.residual_kmh,
            min_ttc_s: o.min_ttc_s.is_finite().then_some(o.min_ttc_s),
            peak_lateral: o.peak_lateral,
            loss: o.loss,
            overlap: o.contact.map(|c| c.overlap),
            incidence_deg: o.contact.map(|c| c.incidence_deg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub label: Mitigability,
    pub avoidance: bool,
    /// "stop", "contact" or "none".
    pub failsafe: String,
    pub contact_kmh: Option<f64>,
    pub goal_nodes: usize,
    pub failsafe_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub panel: String,
    pub cell_x: usize,
    pub cell_y: usize,
    pub speed_kmh: f64,
    pub ttc_s: f64,
    pub mu: f64,
    pub passage_m: f64,
    pub truck_speed_kmh: f64,
    pub feasible: bool,
    pub outcomes: Vec<StrategyRecord>,
    pub class: Mitigability,
    pub no_action_loss: LossLevel,
    #[serde(default)]
    pub plan: Option<PlanSummary>,
}

impl CellResult {
    pub fn key(&self) -> (String, usize, usize) {
        (self.panel.clone(), self.cell_x, self.cell_y)
    }

    pub fn label(&self) -> String {
        format!("{}[{},{}]", self.panel, self.cell_x, self.cell_y)
    }

    pub fn outcome(&self, s: Strategy) -> Option<&StrategyRecord> {
        self.outcomes.iter().find(|o| o.strategy == s)
    }

    /// The EMRM pick for the cell: lowest loss, then lowest residual speed.
    pub fn best(&self) -> Option<&StrategyRecord> {
        self.outcomes
            .iter()
            .min_by(|a, b| a.loss.cmp(&b.loss).then(a.residual_kmh.total_cmp(&b.residual_kmh)))
    }

    pub fn stop_boundary_ttc(&self, g: f64) -> f64 {
        self.speed_kmh / 3.6 / (2.0 * self.mu * g)
    }
}

/// A cell is infeasible when the initial gap cannot hold a truck-width standoff
/// plus the ego length, when the ego would start inside the junction apron, or
/// when it would start before the modelled approach road.
pub fn is_feasible(scene: &Scene, params: &VehicleParams) -> bool {
    let gap = scene.gap();
    gap >= scene.truck.width + params.length
        && gap >= scene.road.junction_clearance
        && gap <= scene.road.approach_length
}

/// G iff a full stop fits before the truck; otherwise Y if any strategy avoids
/// contact, O if the best strategy lowers the loss below doing nothing, else R.
pub fn classify_cell(outcomes: &[StrategyRecord], ttc: f64, stop_boundary: f64, no_action: LossLevel) -> Mitigability {
    if ttc >= stop_boundary {
        Mitigability::FullyAvoidable
    } else if outcomes.iter().any(|o| !o.collided) {
        Mitigability::AggressiveAvoidanceRequired
    } else if outcomes.iter().map(|o| o.loss).min().is_some_and(|l| l < no_action) {
        Mitigability::Mitigatable
    } else {
        Mitigability::NotMitigatable
    }
}

/// Stable FNV-1a over the cell identity, used as the planner seed.
pub fn cell_seed(scene_id: &str, panel: &str, cell_x: usize, cell_y: usize, global: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(scene_id.as_bytes());
    feed(&[0]);
    feed(panel.as_bytes());
    feed(&[0]);
    feed(&(cell_x as u64).to_le_bytes());
    feed(&(cell_y as u64).to_le_bytes());
    feed(&global.to_le_bytes());
    h
}

#[derive(Debug, Clone)]
pub struct CellSpec {
    pub panel: String,
    pub cell_x: usize,
    pub cell_y: usize,
    pub values: BTreeMap<Param, f64>,
}

impl CellSpec {
    pub fn scene(&self, template: &Scene) -> Scene {
        let mut s = template.clone();
        for (&p, &v) in &self.values {
            match p {
                Param::SpeedKmh => s.ego.speed_kmh = v,
                Param::TtcS => s.ttc = v,
                Param::PassageM => s.passage_width = v,
                Param::TruckSpeedKmh => s.truck.speed_kmh = v,
                Param::Mu => {}
            }
        }
        s
    }

    pub fn params(&self, base: &VehicleParams) -> VehicleParams {
        match self.values.get(&Param::Mu) {
            Some(&mu) => base.with_mu(mu),
            None => *base,
        }
    }
}

/// All cells of the spec in panel, then x, then y order.
pub fn enumerate_cells(spec: &SweepSpec) -> Vec<CellSpec> {
    let mut out = Vec::new();
    for p in &spec.panels {
        let xs = p.x.values();
        let ys = p.y.values();
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                let mut values = p.fixed.clone();
                values.insert(p.x.param, x);
                values.insert(p.y.param, y);
                out.push(CellSpec {
                    panel: p.name.clone(),
                    cell_x: i,
                    cell_y: j,
                    values,
                });
            }
        }
    }
    out
}

pub fn run_cell(spec: &SweepSpec, template: &Scene, cell: &CellSpec) -> Result<CellResult, SweepError> {
    let scene = cell.scene(template);
    let params = cell.params(&spec.vehicle);
    let label = format!("{}[{},{}]", cell.panel, cell.cell_x, cell.cell_y);
    let feasible = is_feasible(&scene, &params);
    let mut result = CellResult {
        panel: cell.panel.clone(),
        cell_x: cell.cell_x,
        cell_y: cell.cell_y,
        speed_kmh: scene.ego.speed_kmh,
        ttc_s: scene.ttc,
        mu: params.mu,
        passage_m: scene.passage_width,
        truck_speed_kmh: scene.truck.speed_kmh,
        feasible,
        outcomes: Vec::new(),
        class: Mitigability::Infeasible,
        no_action_loss: no_action_loss(&scene),
        plan: None,
    };
    if !feasible {
        return Ok(result);
    }
    let opts = SimOptions {
        dt: spec.dt,
        record: false,
        ..SimOptions::default()
    };
    for &st in &spec.strategies {
        let o = simulate_with(&scene, st, &params, &opts).map_err(|source| SweepError::Sim {
            cell: label.clone(),
            source,
        })?;
        result.outcomes.push(StrategyRecord::from(&o));
    }
    let boundary = stop_boundary_ttc(scene.speed(), params.mu, params.g).map_err(|source| SweepError::Sim {
        cell: label.clone(),
        source,
    })?;
    result.class = classify_cell(&result.outcomes, scene.ttc, boundary, result.no_action_loss);
    if spec.planner.enabled {
        let seed = cell_seed(&scene.id, &cell.panel, cell.cell_x, cell.cell_y, spec.seed);
        let plan = plan_dual(&scene, &params, &spec.planner.config(seed)).map_err(|source| SweepError::Planner {
            cell: label.clone(),
            source,
        })?;
        let (failsafe, contact_kmh) = match plan.failsafe.terminal {
            Some(Terminal::Stop) => ("stop", None),
            Some(Terminal::Contact { speed, .. }) => ("contact", Some(speed * 3.6)),
            _ => ("none", None),
        };
        result.plan = Some(PlanSummary {
            label: plan.label,
            avoidance: plan.avoidance.is_some(),
            failsafe: failsafe.into(),
            contact_kmh,
            goal_nodes: plan.goal_tree.nodes.len(),
            failsafe_nodes: plan.failsafe_tree.nodes.len(),
        });
    }
    Ok(result)
}

#[derive(Debug, Default)]
pub struct RunOptions<'a> {
    /// Worker threads; all cores when `None`.
    pub jobs: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub cancel: Option<&'a AtomicBool>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    /// Serialized spec and scene the cells were computed for.
    fingerprint: String,
    cells: Vec<CellResult>,
}

fn fingerprint(spec: &SweepSpec, template: &Scene) -> String {
    serde_json::to_string(&(spec, template)).expect("spec serializes")
}

fn load_checkpoint(path: &Path, fp: &str) -> Result<Vec<CellResult>, SweepError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| SweepError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if cp.fingerprint != fp {
        return Err(SweepError::Checkpoint {
            path: path.to_path_buf(),
            message: "written for a different spec or scene".into(),
        });
    }
    Ok(cp.cells)
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SweepError> {
    let io = |source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn save_checkpoint(path: &Path, fp: &str, cells: &[CellResult]) -> Result<(), SweepError> {
    let cp = Checkpoint {
        fingerprint: fp.to_string(),
        cells: cells.to_vec(),
    };
    write_atomic(path, serde_json::to_string(&cp).expect("cells serialize").as_bytes())
}

/// Runs every cell of `spec`. Results come back in cell order regardless of
/// thread count. With a checkpoint path, finished cells are saved after each
/// chunk and reused on the next call with the same spec.
pub fn run_sweep(spec: &SweepSpec, template: &Scene, opts: &RunOptions<'_>) -> Result<Vec<CellResult>, SweepError> {
    spec.validate()?;
    template
        .validate()
        .map_err(|e| SweepError::InvalidSpec(format!("scene template: {e}")))?;
    let cells = enumerate_cells(spec);
    let fp = fingerprint(spec, template);
    let mut done: BTreeMap<(String, usize, usize), CellResult> = BTreeMap::new();
    if let Some(path) = &opts.checkpoint {
        for c in load_checkpoint(path, &fp)? {
            done.insert(c.key(), c);
        }
    }
    let pending: Vec<&CellSpec> = cells
        .iter()
        .filter(|c| !done.contains_key(&(c.panel.clone(), c.cell_x, c.cell_y)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| SweepError::InvalidSpec(format!("thread pool: {e}")))?;
    for chunk in pending.chunks(CHUNK) {
        if opts.cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            let ordered = order(&cells, &done);
            if let Some(path) = &opts.checkpoint {
                save_checkpoint(path, &fp, &ordered)?;
            }
            return Err(SweepError::Interrupted {
                completed: done.len(),
                total: cells.len(),
                checkpoint: opts.checkpoint.clone(),
            });
        }
        let results: Vec<Result<CellResult, SweepError>> =
            pool.install(|| chunk.par_iter().map(|c| run_cell(spec, template, c)).collect());
        for r in results {
            let r = r?;
            done.insert(r.key(), r);
        }
        if let Some(path) = &opts.checkpoint {
            save_checkpoint(path, &fp, &order(&cells, &done))?;
        }
    }
    Ok(order(&cells, &done))
}

fn order(cells: &[CellSpec], done: &BTreeMap<(String, usize, usize), CellResult>) -> Vec<CellResult> {
    cells
        .iter()
        .filter_map(|c| done.get(&(c.panel.clone(), c.cell_x, c.cell_y)).cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::bundled_scene;

    #[test]
    fn bundled_standard_spec_matches_code() {
        let file = SweepSpec::from_yaml(include_str!("../data/sweep_standard.yaml")).unwrap();
        assert_eq!(file, SweepSpec::standard());
    }

    fn small_spec() -> SweepSpec {
        let mut spec = SweepSpec::standard().only_panel("a").unwrap();
        spec.planner.max_iterations = 100;
        spec
    }

    #[test]
    fn axis_values() {
        assert_eq!(Axis::new(Param::TtcS, 0.25, 2.95, 46).values().len(), 46);
        let v = Axis::new(Param::SpeedKmh, 30.0, 72.0, 43).values();
        assert_eq!((v[0], v[1], v[42]), (30.0, 31.0, 72.0));
        assert_eq!(Axis::new(Param::Mu, 0.5, 0.5, 1).values(), vec![0.5]);
    }

    #[test]
    fn standard_panels_total() {
        let spec = SweepSpec::standard();
        spec.validate().unwrap();
        let sizes: Vec<_> = spec.panels.iter().map(Panel::cell_count).collect();
        assert_eq!(sizes, vec![30, 1978, 430, 260]);
    }

    #[test]
    fn spec_validation() {
        let mut s = SweepSpec::standard();
        s.panels[0].x.max = 90.0;
        assert!(s.validate().is_err());
        let mut s = SweepSpec::standard();
        s.strategies = vec![Strategy::Dodge];
        assert!(s.validate().is_err());
        let mut s = SweepSpec::standard();
        s.panels[1].name = "a".into();
        assert!(s.validate().is_err());
        let s = SweepSpec::standard();
        let back = SweepSpec::from_yaml(&s.to_yaml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn classify_examples() {
        let rec = |collided: bool, loss: LossLevel| StrategyRecord {
            strategy: Strategy::EmergencyStop,
            collided,
            residual_kmh: 0.0,
            min_ttc_s: None,
            peak_lateral: 0.0,
            loss,
            overlap: None,
            incidence_deg: None,
        };
        // 30 km/h at TTC 2 s is far above the 0.42 s boundary
        assert_eq!(
            classify_cell(&[], 2.0, 0.42, LossLevel::L6),
            Mitigability::FullyAvoidable
        );
        assert_eq!(
            classify_cell(
                &[rec(true, LossLevel::L7), rec(false, LossLevel::L0)],
                0.5,
                0.7,
                LossLevel::L7
            ),
            Mitigability::AggressiveAvoidanceRequired
        );
        assert_eq!(
            classify_cell(
                &[rec(true, LossLevel::L7), rec(true, LossLevel::L6)],
                0.5,
                0.7,
                LossLevel::L7
            ),
            Mitigability::Mitigatable
        );
        assert_eq!(
            classify_cell(&[rec(true, LossLevel::L7)], 0.5, 0.7, LossLevel::L7),
            Mitigability::NotMitigatable
        );
    }

    #[test]
    fn feasibility_predicate() {
        let p = VehicleParams::default();
        let s = bundled_scene();
        assert!(!is_feasible(&s.with(30.0, 0.5), &p));
        assert!(is_feasible(&s.with(30.0, 1.0), &p));
        assert!(!is_feasible(&s.with(72.0, 2.0), &p));
    }

    #[test]
    fn coarse_panel_runs_and_classes_partition() {
        let spec = small_spec();
        let grid = run_sweep(&spec, &bundled_scene(), &RunOptions::default()).unwrap();
        assert_eq!(grid.len(), 30);
        let feasible = grid.iter().filter(|c| c.feasible).count();
        assert!(feasible <= 30 && feasible > 0);
        for c in &grid {
            assert_eq!(c.feasible, c.class != Mitigability::Infeasible);
            assert_eq!(c.feasible, c.outcomes.len() == spec.strategies.len());
            if matches!(
                c.class,
                Mitigability::FullyAvoidable | Mitigability::AggressiveAvoidanceRequired
            ) {
                assert_eq!(c.best().unwrap().residual_kmh, 0.0);
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let spec = small_spec();
        let a = run_sweep(
            &spec,
            &bundled_scene(),
            &RunOptions {
                jobs: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let b = run_sweep(
            &spec,
            &bundled_scene(),
            &RunOptions {
                jobs: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn interrupt_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let cp = dir.path().join("checkpoint.json");
        let mut spec = SweepSpec::standard().only_panel("c").unwrap();
        spec.planner.enabled = false;
        let cancel = AtomicBool::new(true);
        let err = run_sweep(
            &spec,
            &bundled_scene(),
            &RunOptions {
                checkpoint: Some(cp.clone()),
                cancel: Some(&cancel),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SweepError::Interrupted {
                completed: 0,
                total: 430,
                ..
            }
        ));
        assert!(cp.exists());

        // finish one chunk by hand, then resume from the checkpoint
        let cells = enumerate_cells(&spec);
        let first: Vec<_> = cells[..10]
            .iter()
            .map(|c| run_cell(&spec, &bundled_scene(), c).unwrap())
            .collect();
        save_checkpoint(&cp, &fingerprint(&spec, &bundled_scene()), &first).unwrap();
        let resumed = run_sweep(
            &spec,
            &bundled_scene(),
            &RunOptions {
                checkpoint: Some(cp.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let fresh = run_sweep(&spec, &bundled_scene(), &RunOptions::default()).unwrap();
        assert_eq!(resumed, fresh);

        let mut other = spec.clone();
        other.seed = 9;
        let err = run_sweep(
            &other,
            &bundled_scene(),
            &RunOptions {
                checkpoint: Some(cp),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, SweepError::Checkpoint { .. }));
    }

    #[test]
    fn cell_seed_is_stable() {
        assert_eq!(cell_seed("s", "b", 1, 2, 0), cell_seed("s", "b", 1, 2, 0));
        assert_ne!(cell_seed("s", "b", 1, 2, 0), cell_seed("s", "b", 2, 1, 0));
        assert_ne!(cell_seed("s", "b", 1, 2, 0), cell_seed("s", "b", 1, 2, 1));
    }
}
