//! Dual-tree kinodynamic RRT over the T-junction scene.
//!
//! Both trees grow from the ego's initial state. The goal tree looks for a
//! collision-free path past the truck. The fail-safe tree uses braking-heavy
//! extensions and keeps branches that end either at rest or in contact with the
//! truck, so the best stop or least energetic impact can be read off it.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{
    advance, collision_loss, contact_at, make_contact, no_action_loss, stop_boundary_ttc, ContactTarget, Control,
    Scene, SimError, TrajectoryPoint, VehicleParams, VehicleState,
};
use emrm_core::hazard::LossLevel;

const HEADING_WEIGHT: f64 = 2.0;
const SUBSTEPS: usize = 6;
const SAMPLE_HEADING: f64 = 0.6;
/// Traction-limited acceleration available to the goal tree (m/s²).
const MAX_ACCEL: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RrtError {
    #[error("invalid scene: {0}")]
    InvalidScene(#[from] SimError),
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("no contact-terminal branch in the fail-safe tree")]
    NoContactBranch,
}

/// Axis-aligned box of ego centre positions counted as "past the junction".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub x_min: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GoalRegion {
    pub fn for_scene(scene: &Scene, params: &VehicleParams) -> Self {
        let hw = params.width / 2.0;
        Self {
            x_min: scene.clear_x(params),
            y_min: scene.kerb_y() + hw,
            y_max: scene.barrier_y() - hw,
        }
    }

    pub fn contains(&self, s: &VehicleState) -> bool {
        s.x >= self.x_min && s.y >= self.y_min && s.y <= self.y_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Iterations per tree.
    pub max_iterations: usize,
    /// Control duration of one edge (s).
    pub step: f64,
    pub goal_bias: f64,
    pub seed: u64,
    /// Derived from the scene when absent.
    #[serde(default)]
    pub goal: Option<GoalRegion>,
    /// Independent goal-tree attempts before giving up on avoidance.
    #[serde(default = "one")]
    pub restarts: usize,
}

fn one() -> usize {
    1
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            step: 0.15,
            goal_bias: 0.1,
            seed: 0,
            goal: None,
            restarts: 1,
        }
    }
}

impl PlannerConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), RrtError> {
        if self.max_iterations == 0 {
            return Err(RrtError::InvalidConfig("max_iterations must be ≥ 1".into()));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(RrtError::InvalidConfig(format!("step {} outside (0, 1]", self.step)));
        }
        if self.restarts == 0 {
            return Err(RrtError::InvalidConfig("restarts must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.goal_bias) {
            return Err(RrtError::InvalidConfig(format!(
                "goal bias {} outside [0, 1)",
                self.goal_bias
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TreeTag {
    Goal,
    FailSafe,
}

impl fmt::Display for TreeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreeTag::Goal => "goal",
            TreeTag::FailSafe => "failsafe",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Terminal {
    Stop,
    /// Energy-equivalent impact speed (m/s) and incidence angle to the surface (deg).
    Contact {
        speed: f64,
        angle_deg: f64,
    },
    Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub state: VehicleState,
    pub parent: Option<usize>,
    pub t: f64,
    /// Control applied on the edge from the parent.
    pub control: Control,
    pub terminal: Option<Terminal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub tag: TreeTag,
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn new(tag: TreeTag, root: VehicleState) -> Self {
        Self {
            tag,
            nodes: vec![Node {
                state: root,
                parent: None,
                t: 0.0,
                control: Control::default(),
                terminal: None,
            }],
        }
    }

    /// Root-to-node path.
    pub fn branch(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![idx];
        while let Some(p) = self.nodes[idx].parent {
            out.push(p);
            idx = p;
        }
        out.reverse();
        out
    }

    pub fn path(&self, idx: usize) -> Path {
        Path {
            points: self
                .branch(idx)
                .into_iter()
                .map(|i| TrajectoryPoint {
                    t: self.nodes[i].t,
                    state: self.nodes[i].state,
                })
                .collect(),
            terminal: self.nodes[idx].terminal,
        }
    }

    /// Closest non-terminal node for which `admissible` holds; ties go to the
    /// lower index.
    fn nearest(&self, sample: &VehicleState, admissible: impl Fn(&Node) -> bool) -> Option<usize> {
        let metric = |s: &VehicleState| {
            let dpsi = wrap_angle(s.psi - sample.psi);
            let (dx, dy) = (s.x - sample.x, s.y - sample.y);
            (dx * dx + dy * dy).sqrt() + HEADING_WEIGHT * dpsi.abs()
        };
        // cheap metric first; the admissibility test runs in metric order only
        let mut heap: BinaryHeap<Reverse<Ranked>> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.terminal.is_none())
            .map(|(i, n)| Reverse(Ranked(metric(&n.state), i)))
            .collect();
        while let Some(Reverse(Ranked(_, i))) = heap.pop() {
            if admissible(&self.nodes[i]) {
                return Some(i);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub points: Vec<TrajectoryPoint>,
    pub terminal: Option<Terminal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    FrictionExceeded,
    Collision,
    OffRoad,
    /// Every node in the tree is terminal.
    Exhausted,
}

/// Mitigability classes; `Infeasible` marks cells that are never simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mitigability {
    FullyAvoidable,
    AggressiveAvoidanceRequired,
    Mitigatable,
    NotMitigatable,
    Infeasible,
}

impl Mitigability {
    pub const ALL: [Mitigability; 5] = [
        Mitigability::FullyAvoidable,
        Mitigability::AggressiveAvoidanceRequired,
        Mitigability::Mitigatable,
        Mitigability::NotMitigatable,
        Mitigability::Infeasible,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Mitigability::FullyAvoidable => "G",
            Mitigability::AggressiveAvoidanceRequired => "Y",
            Mitigability::Mitigatable => "O",
            Mitigability::NotMitigatable => "R",
            Mitigability::Infeasible => "Gray",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }
}

impl fmt::Display for Mitigability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub avoidance: Option<Path>,
    pub failsafe: Path,
    pub goal_tree: Tree,
    pub failsafe_tree: Tree,
    pub label: Mitigability,
}

/// One row of the node dump used for trajectory rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub tree: TreeTag,
    pub id: usize,
    pub parent: Option<usize>,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
}

impl PlanResult {
    pub fn node_records(&self) -> Vec<NodeRecord> {
        [&self.goal_tree, &self.failsafe_tree]
            .into_iter()
            .flat_map(|tree| {
                tree.nodes.iter().enumerate().map(move |(id, n)| NodeRecord {
                    tree: tree.tag,
                    id,
                    parent: n.parent,
                    t: n.t,
                    x: n.state.x,
                    y: n.state.y,
                    psi: n.state.psi,
                    v: n.state.v,
                })
            })
            .collect()
    }
}

/// Metric value with node index as tie-break, totally ordered.
#[derive(PartialEq)]
struct Ranked(f64, usize);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Steering toward `sample`: pure-pursuit lateral demand, speed tracking for
/// the goal tree, strongest braking the friction circle leaves for the
/// fail-safe tree.
fn steer(
    tag: TreeTag,
    from: &VehicleState,
    sample: &VehicleState,
    step: f64,
    p: &VehicleParams,
) -> Result<Control, Rejection> {
    let mu_g = p.friction_limit();
    let (dx, dy) = (sample.x - from.x, sample.y - from.y);
    let dist = dx.hypot(dy).max(1e-6);
    let alpha = wrap_angle(dy.atan2(dx) - from.course());
    let a_lat = if from.v > 0.0 {
        2.0 * from.v * from.v * alpha.sin() / dist
    } else {
        0.0
    };
    if a_lat.abs() > mu_g + 1e-9 || a_lat.abs() > p.steering_limit(from.v) + 1e-9 {
        return Err(Rejection::FrictionExceeded);
    }
    let remaining = (mu_g * mu_g - a_lat * a_lat).max(0.0).sqrt();
    let a_long = match tag {
        TreeTag::Goal => ((sample.v - from.v) / step).clamp(-remaining, remaining.min(MAX_ACCEL)),
        TreeTag::FailSafe => -remaining,
    };
    Ok(Control {
        a_long,
        a_lat,
        slip_cmd: 0.0,
        sliding: false,
    })
}

/// Grows `tree` one edge toward `sample`.
pub fn extend(
    tree: &mut Tree,
    sample: &VehicleState,
    scene: &Scene,
    params: &VehicleParams,
    step: f64,
    goal: &GoalRegion,
) -> Result<usize, Rejection> {
    // nearest node that can steer toward the sample within the friction limit
    let tag = tree.tag;
    let feasible = |n: &Node| steer(tag, &n.state, sample, step, params).is_ok();
    let Some(parent) = tree.nearest(sample, feasible) else {
        return Err(if tree.nodes.iter().any(|n| n.terminal.is_none()) {
            Rejection::FrictionExceeded
        } else {
            Rejection::Exhausted
        });
    };
    let control = steer(tag, &tree.nodes[parent].state, sample, step, params)?;
    extend_with(tree, parent, control, scene, params, step, goal)
}

fn extend_with(
    tree: &mut Tree,
    parent: usize,
    control: Control,
    scene: &Scene,
    params: &VehicleParams,
    step: f64,
    goal: &GoalRegion,
) -> Result<usize, Rejection> {
    let from = tree.nodes[parent];
    let h = step / SUBSTEPS as f64;
    let mut s = from.state;
    let mut t = from.t;
    let mut terminal = None;
    for _ in 0..SUBSTEPS {
        let next = advance(&s, &control, h);
        match contact_at(&next, scene, params) {
            Some(ContactTarget::Barrier) => return Err(Rejection::OffRoad),
            Some(ContactTarget::Truck) if tree.tag == TreeTag::Goal => return Err(Rejection::Collision),
            Some(ContactTarget::Truck) => {
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..30 {
                    let mid = 0.5 * (lo + hi);
                    if contact_at(&advance(&s, &control, h * mid), scene, params).is_some() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let at = advance(&s, &control, h * hi);
                let c = make_contact(ContactTarget::Truck, t + h * hi, &at, scene, params);
                s = at;
                t = c.t;
                terminal = Some(Terminal::Contact {
                    speed: c.effective_ms,
                    angle_deg: c.incidence_deg,
                });
                break;
            }
            None => {}
        }
        s = next;
        t += h;
        if s.v <= 0.0 {
            terminal = Some(Terminal::Stop);
            break;
        }
        if tree.tag == TreeTag::Goal && goal.contains(&s) {
            terminal = Some(Terminal::Goal);
            break;
        }
    }
    tree.nodes.push(Node {
        state: s,
        parent: Some(parent),
        t,
        control,
        terminal,
    });
    Ok(tree.nodes.len() - 1)
}

/// Contact-terminal branch with the smallest ½v², glancing contacts first on ties.
pub fn min_momentum_contact(tree: &Tree) -> Result<Path, RrtError> {
    tree.nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| match n.terminal {
            Some(Terminal::Contact { speed, angle_deg }) => Some((i, 0.5 * speed * speed, angle_deg)),
            _ => None,
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)))
        .map(|(i, _, _)| tree.path(i))
        .ok_or(RrtError::NoContactBranch)
}

fn sample_state(rng: &mut ChaCha8Rng, lo: (f64, f64), hi: (f64, f64), v: (f64, f64)) -> VehicleState {
    VehicleState {
        x: rng.gen_range(lo.0..=hi.0),
        y: rng.gen_range(lo.1..=hi.1),
        psi: rng.gen_range(-SAMPLE_HEADING..=SAMPLE_HEADING),
        v: rng.gen_range(v.0..=v.1),
        slip: 0.0,
        sliding: false,
    }
}

pub fn plan_dual(scene: &Scene, params: &VehicleParams, config: &PlannerConfig) -> Result<PlanResult, RrtError> {
    scene.validate()?;
    params.validate()?;
    config.validate()?;
    let root = scene.initial_state(params);
    let goal = config.goal.unwrap_or_else(|| GoalRegion::for_scene(scene, params));
    let lo = (root.x, goal.y_min);
    let hi = (goal.x_min + 5.0, goal.y_max);

    let mut goal_tree = Tree::new(TreeTag::Goal, root);
    let mut reached = None;
    for attempt in 0..config.restarts as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + 2 * attempt);
        goal_tree = Tree::new(TreeTag::Goal, root);
        for _ in 0..config.max_iterations {
            let sample = if rng.gen_bool(config.goal_bias) {
                VehicleState {
                    x: goal.x_min + 2.0,
                    y: scene.passage_centre().clamp(goal.y_min, goal.y_max),
                    psi: 0.0,
                    v: root.v,
                    slip: 0.0,
                    sliding: false,
                }
            } else {
                sample_state(&mut rng, lo, hi, (0.5 * root.v, root.v))
            };
            if let Ok(i) = extend(&mut goal_tree, &sample, scene, params, config.step, &goal) {
                if goal_tree.nodes[i].terminal == Some(Terminal::Goal) {
                    reached = Some(i);
                    break;
                }
            }
        }
        if reached.is_some() {
            break;
        }
    }

    // fail-safe tree, seeded with a straight full-brake rollout
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut fs_tree = Tree::new(TreeTag::FailSafe, root);
    let brake = Control {
        a_long: -params.friction_limit(),
        ..Control::default()
    };
    let mut tip = 0;
    while fs_tree.nodes[tip].terminal.is_none() {
        match extend_with(&mut fs_tree, tip, brake, scene, params, config.step, &goal) {
            Ok(i) => tip = i,
            Err(_) => break,
        }
    }
    let stoppable = scene.ttc >= stop_boundary_ttc(scene.speed(), params.mu, params.g)?;
    let v_slow = 0.3 * root.v;
    for _ in 0..config.max_iterations {
        let sample = sample_state(&mut rng, lo, hi, (0.0, v_slow));
        let _ = extend(&mut fs_tree, &sample, scene, params, config.step, &goal);
    }

    let stop = fs_tree.nodes.iter().position(|n| n.terminal == Some(Terminal::Stop));
    let failsafe = match stop {
        Some(i) => fs_tree.path(i),
        None => match min_momentum_contact(&fs_tree) {
            Ok(p) => p,
            // every branch left the road or is still moving: fall back to the braking rollout
            Err(_) => fs_tree.path(tip),
        },
    };
    let avoidance = reached.map(|i| goal_tree.path(i));
    let label = if stop.is_some() && stoppable {
        Mitigability::FullyAvoidable
    } else if avoidance.is_some() || stop.is_some() {
        Mitigability::AggressiveAvoidanceRequired
    } else {
        let loss = match failsafe.terminal {
            Some(Terminal::Contact { speed, .. }) => collision_loss(speed * 3.6),
            _ => LossLevel::L7,
        };
        if loss < no_action_loss(scene) {
            Mitigability::Mitigatable
        } else {
            Mitigability::NotMitigatable
        }
    };
    Ok(PlanResult {
        avoidance,
        failsafe,
        goal_tree,
        failsafe_tree: fs_tree,
        label,
    })
}
