//! T-junction scene, friction-limited vehicle dynamics and the four maneuver
//! strategies.
//!
//! Frame: the ego drives along +x with its front bumper at x = 0 at t = 0 and
//! its lane centred on y = 0. The truck is an axis-aligned box whose near face
//! sits at x = gap = v·TTC; it reaches from far below the lane up to
//! `truck.edge_offset`. The free passage runs from the truck edge up to a road
//! barrier `passage_width` higher.
//!
//! Motion uses a point-mass bicycle abstraction: the controller commands a
//! longitudinal and a lateral acceleration, the course angle turns at
//! `a_lat / v`, and the body heading is the course plus a slip angle that drift
//! modes command directly.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use emrm_core::hazard::LossLevel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KMH_PER_MS: f64 = 3.6;
/// Slip angle relaxation time constant (s).
const SLIP_TAU: f64 = 0.25;
/// Lateral demand above this fraction of μg puts a drift mode into sliding.
const GRIP_FRACTION: f64 = 0.6;
/// Longitudinal grip left while sliding.
const SLIDING_GRIP: f64 = 0.7;
const KP_LATERAL: f64 = 9.0;
const KD_LATERAL: f64 = 5.0;
/// Largest course angle the lateral controllers will command (rad).
const MAX_COURSE: f64 = 0.3;
/// Slip angle per unit of normalised lateral demand in DriftToAvoid.
const DRIFT_SLIP_GAIN: f64 = 0.15;
const CONTACT_BISECTIONS: usize = 30;

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / KMH_PER_MS
}

pub fn ms_to_kmh(ms: f64) -> f64 {
    ms * KMH_PER_MS
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("negative gap {0} m")]
    NegativeGap(f64),
    #[error("unstable integration at t = {t:.3} s: {detail}")]
    UnstableIntegration { t: f64, detail: String },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid impact table: {0}")]
    InvalidTable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub width: f64,
    pub length: f64,
    pub max_steer: f64,
    pub g: f64,
    pub mu: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.8,
            width: 1.9,
            length: 4.8,
            max_steer: 0.55,
            g: 9.81,
            mu: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("wheelbase", self.wheelbase),
            ("width", self.width),
            ("length", self.length),
            ("max_steer", self.max_steer),
            ("g", self.g),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.mu > 0.0 && self.mu <= 1.2) {
            return Err(SimError::Domain(format!("μ = {} outside (0, 1.2]", self.mu)));
        }
        Ok(())
    }

    pub fn friction_limit(&self) -> f64 {
        self.mu * self.g
    }

    /// Lateral acceleration reachable at full steering lock.
    pub fn steering_limit(&self, v: f64) -> f64 {
        v * v * self.max_steer.tan() / self.wheelbase
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Body heading (rad).
    pub psi: f64,
    pub v: f64,
    /// Body heading minus course angle (rad).
    #[serde(default)]
    pub slip: f64,
    #[serde(default)]
    pub sliding: bool,
}

impl VehicleState {
    pub fn course(&self) -> f64 {
        self.psi - self.slip
    }

    pub fn vx(&self) -> f64 {
        self.v * self.course().cos()
    }

    pub fn vy(&self) -> f64 {
        self.v * self.course().sin()
    }

    pub fn corners(&self, params: &VehicleParams) -> [(f64, f64); 4] {
        let (s, c) = self.psi.sin_cos();
        let hl = params.length / 2.0;
        let hw = params.width / 2.0;
        [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(a, b)| (self.x + a * c - b * s, self.y + a * s + b * c))
    }

    fn extent(&self, params: &VehicleParams) -> (f64, f64, f64, f64) {
        let cs = self.corners(params);
        let xs = cs.map(|c| c.0);
        let ys = cs.map(|c| c.1);
        (
            xs.iter().copied().fold(f64::INFINITY, f64::min),
            xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ys.iter().copied().fold(f64::INFINITY, f64::min),
            ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Road {
    pub lane_width: f64,
    /// Length of the junction apron in front of the truck face (m).
    pub junction_clearance: f64,
    /// Usable approach road before the junction (m).
    pub approach_length: f64,
}

impl Default for Road {
    fn default() -> Self {
        Self {
            lane_width: 3.5,
            junction_clearance: 2.0,
            approach_length: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truck {
    /// Extent along the ego's direction of travel (m).
    pub width: f64,
    /// Lateral position of the truck edge nearest the passage (m).
    pub edge_offset: f64,
    /// How far the truck reaches below its edge (m).
    pub depth: f64,
    pub speed_kmh: f64,
}

impl Default for Truck {
    fn default() -> Self {
        Self {
            width: 2.5,
            edge_offset: 1.0,
            depth: 20.0,
            speed_kmh: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoInit {
    pub speed_kmh: f64,
    #[serde(default)]
    pub lateral_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub id: String,
    pub road: Road,
    pub truck: Truck,
    pub passage_width: f64,
    pub ego: EgoInit,
    pub ttc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Scene {
    /// The bundled T-junction layout at the given speed and TTC.
    pub fn tjunction(speed_kmh: f64, ttc: f64) -> Self {
        Self {
            id: "emrm_scene_1".into(),
            road: Road::default(),
            truck: Truck::default(),
            passage_width: 3.0,
            ego: EgoInit {
                speed_kmh,
                lateral_offset: 0.0,
            },
            ttc,
        }
    }

    pub fn with(&self, speed_kmh: f64, ttc: f64) -> Self {
        let mut s = self.clone();
        s.ego.speed_kmh = speed_kmh;
        s.ttc = ttc;
        s
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScene(m));
        if !(self.passage_width >= 0.0) {
            return bad(format!("passage_width: {} < 0", self.passage_width));
        }
        if !(self.ttc > 0.0 && self.ttc.is_finite()) {
            return bad(format!("ttc: {} must be positive", self.ttc));
        }
        if !(self.ego.speed_kmh > 0.0 && self.ego.speed_kmh.is_finite()) {
            return bad(format!("ego.speed_kmh: {} must be positive", self.ego.speed_kmh));
        }
        if !(self.road.lane_width > 0.0) {
            return bad("road.lane_width: must be positive".into());
        }
        if !(self.truck.width > 0.0 && self.truck.depth > 0.0) {
            return bad("truck.width: width and depth must be positive".into());
        }
        if self.truck.speed_kmh < 0.0 {
            return bad("truck.speed_kmh: must be non-negative".into());
        }
        let lane_lo = self.ego.lateral_offset - self.road.lane_width / 2.0;
        if self.truck.edge_offset <= lane_lo || self.truck.edge_offset - self.truck.depth >= lane_lo {
            return bad("truck.edge_offset: truck does not block the ego lane".into());
        }
        Ok(())
    }

    pub fn speed(&self) -> f64 {
        kmh_to_ms(self.ego.speed_kmh)
    }

    /// Initial distance from the ego front bumper to the truck face.
    pub fn gap(&self) -> f64 {
        self.speed() * self.ttc
    }

    pub fn truck_face_x(&self) -> f64 {
        self.gap()
    }

    pub fn barrier_y(&self) -> f64 {
        self.truck.edge_offset + self.passage_width
    }

    pub fn kerb_y(&self) -> f64 {
        self.ego.lateral_offset - self.road.lane_width / 2.0
    }

    pub fn passage_centre(&self) -> f64 {
        self.truck.edge_offset + self.passage_width / 2.0
    }

    fn truck_box(&self) -> Aabb {
        let face = self.truck_face_x();
        Aabb {
            x0: face,
            x1: face + self.truck.width,
            y0: self.truck.edge_offset - self.truck.depth,
            y1: self.truck.edge_offset,
        }
    }

    pub fn initial_state(&self, params: &VehicleParams) -> VehicleState {
        VehicleState {
            x: -params.length / 2.0,
            y: self.ego.lateral_offset,
            psi: 0.0,
            v: self.speed(),
            slip: 0.0,
            sliding: false,
        }
    }

    /// x the ego centre must pass to be clear of the truck.
    pub fn clear_x(&self, params: &VehicleParams) -> f64 {
        self.truck_face_x() + self.truck.width + params.length / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactTarget {
    Truck,
    Barrier,
}

/// What the ego footprint touches in `state`, if anything.
pub fn contact_at(state: &VehicleState, scene: &Scene, params: &VehicleParams) -> Option<ContactTarget> {
    if obb_hits_aabb(state, params, scene.truck_box()) {
        return Some(ContactTarget::Truck);
    }
    let (_, _, ylo, yhi) = state.extent(params);
    if yhi > scene.barrier_y() || ylo < scene.kerb_y() {
        return Some(ContactTarget::Barrier);
    }
    None
}

fn obb_hits_aabb(state: &VehicleState, params: &VehicleParams, b: Aabb) -> bool {
    let corners = state.corners(params);
    let box_corners = [(b.x0, b.y0), (b.x1, b.y0), (b.x1, b.y1), (b.x0, b.y1)];
    let (s, c) = state.psi.sin_cos();
    let axes = [(1.0, 0.0), (0.0, 1.0), (c, s), (-s, c)];
    axes.iter().all(|&(ax, ay)| {
        let project = |pts: &[(f64, f64)]| {
            pts.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
                    let p = x * ax + y * ay;
                    (lo.min(p), hi.max(p))
                })
        };
        let (a0, a1) = project(&corners);
        let (b0, b1) = project(&box_corners);
        a1 > b0 && b1 > a0
    })
}

pub fn stop_boundary_ttc(v: f64, mu: f64, g: f64) -> Result<f64, SimError> {
    if !(mu > 0.0) || !(g > 0.0) {
        return Err(SimError::Domain(format!("need μ > 0 and g > 0, got μ = {mu}, g = {g}")));
    }
    if !(v >= 0.0) {
        return Err(SimError::Domain(format!("speed {v} < 0")));
    }
    Ok(v / (2.0 * mu * g))
}

pub fn time_to_collision(gap: f64, closing_speed: f64) -> Result<Option<f64>, SimError> {
    if gap < 0.0 {
        return Err(SimError::NegativeGap(gap));
    }
    Ok((closing_speed > 0.0).then(|| gap / closing_speed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    EmergencyStop,
    Dodge,
    DriftToAvoid,
    DriftToAccident,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::EmergencyStop,
        Strategy::Dodge,
        Strategy::DriftToAvoid,
        Strategy::DriftToAccident,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::EmergencyStop => "EmergencyStop",
            Strategy::Dodge => "Dodge",
            Strategy::DriftToAvoid => "DriftToAvoid",
            Strategy::DriftToAccident => "DriftToAccident",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().to_ascii_lowercase() == key)
            .or(match key.as_str() {
                "es" | "stop" | "brake" => Some(Strategy::EmergencyStop),
                _ => None,
            })
            .ok_or_else(|| SimError::Domain(format!("unknown strategy `{s}`")))
    }
}

/// Commanded accelerations: `a_long` is signed (negative brakes), `a_lat` is
/// perpendicular to the velocity (positive turns left, towards +y).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub a_long: f64,
    pub a_lat: f64,
    pub slip_cmd: f64,
    pub sliding: bool,
}

impl Control {
    pub fn magnitude(&self) -> f64 {
        self.a_long.hypot(self.a_lat)
    }
}

/// Advances `s` by `dt` under constant `ctrl`. Braking that reaches zero speed
/// inside the step stops exactly there.
pub fn advance(s: &VehicleState, ctrl: &Control, dt: f64) -> VehicleState {
    let a = ctrl.a_long;
    let (tau, v1) = if a < 0.0 && s.v + a * dt <= 0.0 {
        (s.v / -a, 0.0)
    } else {
        (dt, (s.v + a * dt).max(0.0))
    };
    let dist = s.v * tau + 0.5 * a * tau * tau;
    let v_mid = 0.5 * (s.v + v1);
    let dchi = if v_mid > 1e-9 { ctrl.a_lat / v_mid * tau } else { 0.0 };
    let chi0 = s.course();
    let chi_mid = chi0 + 0.5 * dchi;
    let slip = ctrl.slip_cmd + (s.slip - ctrl.slip_cmd) * (-dt / SLIP_TAU).exp();
    VehicleState {
        x: s.x + dist * chi_mid.cos(),
        y: s.y + dist * chi_mid.sin(),
        psi: chi0 + dchi + slip,
        v: v1,
        slip,
        sliding: ctrl.sliding || slip.abs() > 1e-3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub target: ContactTarget,
    pub t: f64,
    pub speed_ms: f64,
    /// Speed component along the contacted surface's normal.
    pub normal_speed_ms: f64,
    /// Share of the ego's lateral extent overlapping the truck (1 for barriers).
    pub overlap: f64,
    /// Angle between the velocity and the contacted surface (deg); 90 is head-on.
    pub incidence_deg: f64,
    /// Energy-equivalent impact speed.
    pub effective_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: VehicleState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub strategy: Strategy,
    pub collided: bool,
    pub residual_kmh: f64,
    pub min_ttc_s: f64,
    pub peak_lateral: f64,
    pub loss: LossLevel,
    pub contact: Option<Contact>,
    pub stopped: bool,
    pub duration: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub horizon: f64,
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 12.0,
            record: true,
        }
    }
}

/// Lane-change controller towards the passage centre with a lateral cap.
/// Friction left over after steering goes to braking.
#[derive(Debug, Clone, Copy)]
struct LateralController {
    cap_fraction: f64,
    /// Drift modes slide above `GRIP_FRACTION` and lose longitudinal grip.
    drift: bool,
    /// Fixed slip command; `None` ties slip to lateral demand.
    slip: Option<f64>,
}

impl LateralController {
    fn control(&self, s: &VehicleState, scene: &Scene, p: &VehicleParams) -> Control {
        let mu_g = p.friction_limit();
        let chi = s.course();
        // lateral speed reference, capped so the body never swings wider than
        // the passage can take
        let vy_max = s.v * MAX_COURSE.sin();
        let vy_ref = (KP_LATERAL / KD_LATERAL * (scene.passage_centre() - s.y)).clamp(-vy_max, vy_max);
        let ay = KD_LATERAL * (vy_ref - s.vy());
        let cap = (self.cap_fraction * mu_g).min(p.steering_limit(s.v));
        let a_lat = (ay / chi.cos().max(0.2)).clamp(-cap, cap);
        let sliding = self.drift && (a_lat.abs() > GRIP_FRACTION * mu_g + 1e-12 || self.slip.is_some_and(|b| b != 0.0));
        let remaining = (mu_g * mu_g - a_lat * a_lat).max(0.0).sqrt();
        let brake = if sliding {
            remaining.min(SLIDING_GRIP * mu_g)
        } else {
            remaining
        };
        let slip_cmd = match self.slip {
            Some(b) => b,
            None if sliding => DRIFT_SLIP_GAIN * a_lat / mu_g,
            None => 0.0,
        };
        Control {
            a_long: -brake,
            a_lat,
            slip_cmd,
            sliding,
        }
    }
}

const DODGE: LateralController = LateralController {
    cap_fraction: 0.6,
    drift: false,
    slip: None,
};
const DRIFT_AVOID: LateralController = LateralController {
    cap_fraction: 1.0,
    drift: true,
    slip: None,
};
const BRAKE_ONLY: LateralController = LateralController {
    cap_fraction: 0.0,
    drift: false,
    slip: None,
};

/// Candidate controllers DriftToAccident chooses from. The first is plain
/// braking, so the choice is never worse than an emergency stop.
fn accident_candidates() -> Vec<LateralController> {
    let mut out = vec![BRAKE_ONLY];
    for slip in [0.0, 0.3, 0.6] {
        for k in 0..9 {
            let theta = (k as f64 * 10.0).to_radians();
            if k == 0 && slip == 0.0 {
                continue;
            }
            out.push(LateralController {
                cap_fraction: theta.sin(),
                drift: true,
                slip: Some(slip),
            });
        }
    }
    out
}

struct Rollout {
    contact: Option<Contact>,
    min_ttc: f64,
    peak_lateral: f64,
    stopped: bool,
    duration: f64,
    trajectory: Vec<TrajectoryPoint>,
}

pub(crate) fn make_contact(
    target: ContactTarget,
    t: f64,
    s: &VehicleState,
    scene: &Scene,
    p: &VehicleParams,
) -> Contact {
    let chi = s.course();
    match target {
        ContactTarget::Truck => {
            let (_, _, ylo, yhi) = s.extent(p);
            let b = scene.truck_box();
            let overlap = ((yhi.min(b.y1) - ylo.max(b.y0)) / (yhi - ylo)).clamp(0.0, 1.0);
            let (nx, ny) = truck_contact_normal(s, p, b);
            let normal = (s.vx() * nx + s.vy() * ny).abs();
            Contact {
                target,
                t,
                speed_ms: s.v,
                normal_speed_ms: normal,
                overlap,
                incidence_deg: if s.v > 0.0 {
                    (normal / s.v).clamp(0.0, 1.0).asin().to_degrees()
                } else {
                    90.0
                },
                effective_ms: normal,
            }
        }
        ContactTarget::Barrier => {
            // leaving the road is scored at full speed: a scrape along the
            // barrier still ends the maneuver uncontrolled
            Contact {
                target,
                t,
                speed_ms: s.v,
                normal_speed_ms: s.vy().abs(),
                overlap: 1.0,
                incidence_deg: chi.abs().to_degrees().min(90.0),
                effective_ms: s.v,
            }
        }
    }
}

/// Unit normal of the surface taking the hit: a truck face when an ego corner
/// enters the truck, an ego side when a truck corner enters the ego.
fn truck_contact_normal(s: &VehicleState, p: &VehicleParams, b: Aabb) -> (f64, f64) {
    let inside = |(x, y): (f64, f64)| x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1;
    if let Some(&(x, y)) = s.corners(p).iter().find(|&&c| inside(c)) {
        let faces = [
            (x - b.x0, (1.0, 0.0)),
            (b.x1 - x, (1.0, 0.0)),
            (b.y1 - y, (0.0, 1.0)),
            (y - b.y0, (0.0, 1.0)),
        ];
        return faces.iter().min_by(|a, b| a.0.total_cmp(&b.0)).expect("four faces").1;
    }
    let (sn, cs) = s.psi.sin_cos();
    let (hl, hw) = (p.length / 2.0, p.width / 2.0);
    let to_body = |(x, y): (f64, f64)| {
        let (dx, dy) = (x - s.x, y - s.y);
        (dx * cs + dy * sn, -dx * sn + dy * cs)
    };
    let body = [(b.x0, b.y0), (b.x1, b.y0), (b.x1, b.y1), (b.x0, b.y1)]
        .map(to_body)
        .into_iter()
        .min_by(|u, v| {
            let depth = |(a, c): (f64, f64)| (a.abs() - hl).max(c.abs() - hw);
            depth(*u).total_cmp(&depth(*v))
        })
        .expect("four corners");
    // side of the ego the corner is closest to
    if hl - body.0.abs() < hw - body.1.abs() {
        (cs, sn)
    } else {
        (-sn, cs)
    }
}

fn ttc_now(s: &VehicleState, scene: &Scene, p: &VehicleParams) -> Option<f64> {
    let (_, xhi, ylo, yhi) = s.extent(p);
    let b = scene.truck_box();
    let lateral = yhi > b.y0 && ylo < b.y1;
    let gap = b.x0 - xhi;
    if !lateral || gap < 0.0 {
        return None;
    }
    time_to_collision(gap, s.vx()).ok().flatten()
}

fn rollout(
    scene: &Scene,
    p: &VehicleParams,
    opts: &SimOptions,
    ctl: &dyn Fn(&VehicleState) -> Control,
) -> Result<Rollout, SimError> {
    let mut s = scene.initial_state(p);
    let mut t = 0.0;
    let mut min_ttc = ttc_now(&s, scene, p).unwrap_or(f64::INFINITY);
    let mut peak_lateral: f64 = 0.0;
    let mut trajectory = Vec::new();
    if opts.record {
        trajectory.push(TrajectoryPoint { t, state: s });
    }
    let clear_x = scene.clear_x(p);
    let v0 = s.v;
    while t < opts.horizon {
        let c = ctl(&s);
        peak_lateral = peak_lateral.max(c.a_lat.abs());
        let next = advance(&s, &c, opts.dt);
        let finite = [next.x, next.y, next.psi, next.v, next.slip]
            .iter()
            .all(|v| v.is_finite());
        if !finite || next.v > v0 + 1e-6 || (next.course() - s.course()).abs() > PI / 4.0 {
            return Err(SimError::UnstableIntegration {
                t,
                detail: format!("state {next:?} after dt = {}", opts.dt),
            });
        }
        if let Some(target) = contact_at(&next, scene, p) {
            // locate the first touching instant inside the step
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..CONTACT_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                if contact_at(&advance(&s, &c, opts.dt * mid), scene, p).is_some() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let at = advance(&s, &c, opts.dt * hi);
            let target = contact_at(&at, scene, p).unwrap_or(target);
            let tc = t + opts.dt * hi;
            if opts.record {
                trajectory.push(TrajectoryPoint { t: tc, state: at });
            }
            return Ok(Rollout {
                contact: Some(make_contact(target, tc, &at, scene, p)),
                min_ttc: 0.0,
                peak_lateral,
                stopped: false,
                duration: tc,
                trajectory,
            });
        }
        s = next;
        t += opts.dt;
        if let Some(ttc) = ttc_now(&s, scene, p) {
            min_ttc = min_ttc.min(ttc);
        }
        if opts.record {
            trajectory.push(TrajectoryPoint { t, state: s });
        }
        if s.v <= 0.0 || s.x >= clear_x {
            break;
        }
    }
    Ok(Rollout {
        contact: None,
        min_ttc,
        peak_lateral,
        stopped: s.v <= 0.0,
        duration: t,
        trajectory,
    })
}

fn outcome(strategy: Strategy, r: Rollout) -> SimOutcome {
    let residual_kmh = r.contact.map_or(0.0, |c| ms_to_kmh(c.effective_ms));
    let collided = r.contact.is_some();
    let loss = if collided {
        collision_loss(residual_kmh)
    } else {
        LossLevel::L0
    };
    SimOutcome {
        strategy,
        collided,
        residual_kmh,
        min_ttc_s: r.min_ttc,
        peak_lateral: r.peak_lateral,
        loss,
        contact: r.contact,
        stopped: r.stopped,
        duration: r.duration,
        trajectory: r.trajectory,
    }
}

/// Loss of a contact at `kmh` against a fixed obstacle. Any contact counts as
/// at least the lowest nonzero bin, so L0 always means "no collision".
pub fn collision_loss(kmh: f64) -> LossLevel {
    let table = ImpactTable::builtin();
    let level = table.level(kmh, ImpactTarget::Truck);
    if level == LossLevel::L0 {
        table.truck[0].level
    } else {
        level
    }
}

/// Loss if the ego hits the truck at its initial speed.
pub fn no_action_loss(scene: &Scene) -> LossLevel {
    collision_loss(scene.ego.speed_kmh)
}

pub fn simulate(scene: &Scene, strategy: Strategy, params: &VehicleParams, dt: f64) -> Result<SimOutcome, SimError> {
    simulate_with(
        scene,
        strategy,
        params,
        &SimOptions {
            dt,
            ..SimOptions::default()
        },
    )
}

pub fn simulate_with(
    scene: &Scene,
    strategy: Strategy,
    params: &VehicleParams,
    opts: &SimOptions,
) -> Result<SimOutcome, SimError> {
    if !(opts.dt > 0.0 && opts.dt <= 0.05) {
        return Err(SimError::Domain(format!("dt = {} outside (0, 0.05]", opts.dt)));
    }
    params.validate()?;
    scene.validate()?;
    let run = |c: LateralController, opts: &SimOptions| {
        rollout(scene, params, opts, &|s: &VehicleState| c.control(s, scene, params))
    };
    let r = match strategy {
        Strategy::EmergencyStop => run(BRAKE_ONLY, opts)?,
        Strategy::Dodge => run(DODGE, opts)?,
        Strategy::DriftToAvoid => run(DRIFT_AVOID, opts)?,
        Strategy::DriftToAccident => {
            let stoppable = scene.ttc >= stop_boundary_ttc(scene.speed(), params.mu, params.g)?;
            if stoppable {
                run(BRAKE_ONLY, opts)?
            } else {
                let quiet = SimOptions { record: false, ..*opts };
                let mut best: Option<(f64, LateralController)> = None;
                for c in accident_candidates() {
                    let r = run(c, &quiet)?;
                    let cost = r.contact.map_or(0.0, |c| c.effective_ms);
                    if best.is_none_or(|(b, _)| cost < b - 1e-12) {
                        best = Some((cost, c));
                    }
                }
                run(best.expect("candidates").1, opts)?
            }
        }
    };
    Ok(outcome(strategy, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImpactTarget {
    Truck,
    Vehicle,
    Vru,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactBin {
    pub from_kmh: f64,
    pub level: LossLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactTable {
    pub truck: Vec<ImpactBin>,
    pub vehicle: Vec<ImpactBin>,
    pub vru: Vec<ImpactBin>,
}

const BUILTIN_IMPACT_TABLE: &str = include_str!("../data/impact_loss.yaml");

impl ImpactTable {
    pub fn builtin() -> &'static ImpactTable {
        static TABLE: OnceLock<ImpactTable> = OnceLock::new();
        TABLE.get_or_init(|| Self::from_yaml(BUILTIN_IMPACT_TABLE).expect("bundled impact table is valid"))
    }

    pub fn from_yaml(text: &str) -> Result<Self, SimError> {
        let t: ImpactTable = serde_yaml::from_str(text).map_err(|e| SimError::InvalidTable(e.to_string()))?;
        for (name, bins) in [("truck", &t.truck), ("vehicle", &t.vehicle), ("vru", &t.vru)] {
            if bins.is_empty() {
                return Err(SimError::InvalidTable(format!("{name}: no bins")));
            }
            for w in bins.windows(2) {
                if !(w[1].from_kmh > w[0].from_kmh) || w[1].level < w[0].level {
                    return Err(SimError::InvalidTable(format!("{name}: bins must increase")));
                }
            }
            if !(bins[0].from_kmh > 0.0) || bins.iter().any(|b| b.level == LossLevel::L0) {
                return Err(SimError::InvalidTable(format!(
                    "{name}: bins must start above 0 km/h with nonzero levels"
                )));
            }
        }
        Ok(t)
    }

    pub fn bins(&self, target: ImpactTarget) -> &[ImpactBin] {
        match target {
            ImpactTarget::Truck => &self.truck,
            ImpactTarget::Vehicle => &self.vehicle,
            ImpactTarget::Vru => &self.vru,
        }
    }

    pub fn level(&self, kmh: f64, target: ImpactTarget) -> LossLevel {
        self.bins(target)
            .iter()
            .rev()
            .find(|b| kmh >= b.from_kmh)
            .map_or(LossLevel::L0, |b| b.level)
    }
}

pub fn impact_loss_level(kmh: f64, target: ImpactTarget) -> LossLevel {
    ImpactTable::builtin().level(kmh, target)
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use proptest::prelude::*;

    fn p() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn stop_boundary_examples() {
        assert!((stop_boundary_ttc(13.89, 1.0, 9.81).unwrap() - 0.708).abs() < 1e-3);
        assert_eq!(stop_boundary_ttc(0.0, 1.0, 9.81).unwrap(), 0.0);
        assert!(stop_boundary_ttc(10.0, 0.0, 9.81).is_err());
    }

    #[test]
    fn ttc_examples() {
        assert!((time_to_collision(27.78, 13.89).unwrap().unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(time_to_collision(10.0, -1.0).unwrap(), None);
        assert_eq!(time_to_collision(0.0, 5.0).unwrap(), Some(0.0));
        assert!(matches!(time_to_collision(-1.0, 5.0), Err(SimError::NegativeGap(_))));
    }

    #[test]
    fn impact_table_examples() {
        assert_eq!(impact_loss_level(0.0, ImpactTarget::Truck), LossLevel::L0);
        assert_eq!(impact_loss_level(60.0, ImpactTarget::Truck), LossLevel::L7);
        assert_eq!(impact_loss_level(15.0, ImpactTarget::Truck), LossLevel::L4);
        assert_eq!(impact_loss_level(30.0, ImpactTarget::Truck), LossLevel::L6);
    }

    #[test]
    fn emergency_stop_examples() {
        let o = simulate(&Scene::tjunction(30.0, 2.9), Strategy::EmergencyStop, &p(), 0.01).unwrap();
        assert!(!o.collided && o.stopped);
        assert_eq!(o.residual_kmh, 0.0);
        assert_eq!(o.loss, LossLevel::L0);

        let o = simulate(&Scene::tjunction(72.0, 0.25), Strategy::EmergencyStop, &p(), 0.01).unwrap();
        assert!(o.collided);
        // closed form for constant deceleration over the 5 m gap
        let oracle = (20.0f64 * 20.0 - 2.0 * 9.81 * 5.0).sqrt();
        assert!((kmh_to_ms(o.residual_kmh) - oracle).abs() < 0.05, "{}", o.residual_kmh);
        assert!((kmh_to_ms(o.residual_kmh) - 17.5).abs() < 0.3);
    }

    #[test]
    fn dodge_wide_passage_high_ttc() {
        let mut s = Scene::tjunction(40.0, 1.6);
        s.passage_width = 2.0 * p().width;
        let o = simulate(&s, Strategy::Dodge, &p(), 0.01).unwrap();
        assert!(!o.collided);
    }

    #[test]
    fn steering_beats_braking_below_the_boundary() {
        // 60 km/h, TTC 0.8 s: 13.3 m gap, stopping needs 14.2 m
        let s = Scene::tjunction(60.0, 0.8);
        assert!(simulate(&s, Strategy::EmergencyStop, &p(), 0.01).unwrap().collided);
        assert!(!simulate(&s, Strategy::DriftToAvoid, &p(), 0.01).unwrap().collided);
    }

    #[test]
    fn drift_to_accident_never_worse_than_braking() {
        for &(v, t) in &[(72.0, 0.4), (60.0, 0.5), (45.0, 0.6), (50.0, 0.35)] {
            let s = Scene::tjunction(v, t);
            let es = simulate(&s, Strategy::EmergencyStop, &p(), 0.01).unwrap();
            let da = simulate(&s, Strategy::DriftToAccident, &p(), 0.01).unwrap();
            assert!(da.residual_kmh <= es.residual_kmh + 1e-9);
        }
    }

    #[test]
    fn blocked_passage_defeats_steering() {
        let mut s = Scene::tjunction(40.0, 1.0);
        s.passage_width = 1.5;
        for st in [Strategy::Dodge, Strategy::DriftToAvoid] {
            let o = simulate(&s, st, &p(), 0.01).unwrap();
            assert!(o.collided || o.stopped);
        }
    }

    #[test]
    fn invalid_inputs() {
        let s = Scene::tjunction(50.0, 1.0);
        assert!(simulate(&s, Strategy::Dodge, &p(), 0.1).is_err());
        assert!(simulate(&s, Strategy::Dodge, &p().with_mu(0.0), 0.01).is_err());
        let mut bad = s.clone();
        bad.truck.edge_offset = -3.0;
        assert!(matches!(
            simulate(&bad, Strategy::Dodge, &p(), 0.01),
            Err(SimError::InvalidScene(_))
        ));
    }

    #[test]
    fn outcome_invariants() {
        for st in Strategy::ALL {
            for &(v, t) in &[(30.0, 0.5), (50.0, 0.7), (72.0, 0.6), (40.0, 1.2)] {
                let o = simulate(&Scene::tjunction(v, t), st, &p(), 0.01).unwrap();
                assert_eq!(o.collided, o.loss != LossLevel::L0);
                if !o.collided {
                    assert_eq!(o.residual_kmh, 0.0);
                }
            }
        }
    }

    #[test]
    fn friction_circle_holds() {
        for st in [Strategy::EmergencyStop, Strategy::Dodge, Strategy::DriftToAvoid] {
            for mu in [0.2, 0.6, 1.0] {
                let s = Scene::tjunction(55.0, 0.9);
                let params = p().with_mu(mu);
                let c = match st {
                    Strategy::EmergencyStop => BRAKE_ONLY,
                    Strategy::Dodge => DODGE,
                    _ => DRIFT_AVOID,
                };
                let o = simulate(&s, st, &params, 0.01).unwrap();
                for tp in &o.trajectory {
                    let ctrl = c.control(&tp.state, &s, &params);
                    assert!(ctrl.magnitude() <= params.friction_limit() + 1e-6);
                }
            }
        }
    }

    #[test]
    fn timestep_convergence() {
        for st in Strategy::ALL {
            for &(v, t) in &[(72.0, 0.4), (60.0, 0.6), (45.0, 0.5)] {
                let s = Scene::tjunction(v, t);
                let a = simulate(&s, st, &p(), 0.01).unwrap().residual_kmh;
                let b = simulate(&s, st, &p(), 0.005).unwrap().residual_kmh;
                assert!((a - b).abs() < 0.5, "{st} {v} {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn residual_monotone_in_ttc_and_mu() {
        let opts = SimOptions {
            record: false,
            ..SimOptions::default()
        };
        for st in [Strategy::EmergencyStop, Strategy::Dodge, Strategy::DriftToAvoid] {
            for v in [30.0, 44.0, 58.0, 72.0] {
                let mut prev = f64::INFINITY;
                for k in 0..40 {
                    let s = Scene::tjunction(v, 0.3 + 0.03 * k as f64);
                    let r = simulate_with(&s, st, &p(), &opts).unwrap().residual_kmh;
                    assert!(r <= prev + 1e-9, "{st} v={v} k={k}: {r} > {prev}");
                    prev = r;
                }
                let mut prev = f64::INFINITY;
                for k in 1..=11 {
                    let s = Scene::tjunction(v, 0.8);
                    let r = simulate_with(&s, st, &p().with_mu(0.1 * k as f64), &opts)
                        .unwrap()
                        .residual_kmh;
                    assert!(r <= prev + 1e-9, "{st} v={v} mu={}: {r} > {prev}", 0.1 * k as f64);
                    prev = r;
                }
            }
        }
    }

    #[test]
    fn braking_agrees_with_stop_boundary() {
        let opts = SimOptions {
            record: false,
            ..SimOptions::default()
        };
        for mu in [0.3, 0.7, 1.0] {
            for i in 0..15 {
                let v = 30.0 + 3.0 * i as f64;
                for j in 0..30 {
                    let ttc = 0.25 + 0.1 * j as f64;
                    let s = Scene::tjunction(v, ttc);
                    let o = simulate_with(&s, Strategy::EmergencyStop, &p().with_mu(mu), &opts).unwrap();
                    let tb = stop_boundary_ttc(s.speed(), mu, 9.81).unwrap();
                    if (ttc - tb).abs() > opts.dt {
                        assert_eq!(o.collided, ttc < tb, "v={v} ttc={ttc} mu={mu}");
                    }
                }
            }
        }
    }

    #[test]
    fn glancing_contact_scores_lower_than_frontal() {
        let s = Scene::tjunction(72.0, 0.4);
        let es = simulate(&s, Strategy::EmergencyStop, &p(), 0.01).unwrap();
        let c = es.contact.unwrap();
        assert!((c.incidence_deg - 90.0).abs() < 1e-6);
        let da = simulate(&s, Strategy::DriftToAccident, &p(), 0.01).unwrap();
        assert!(da.residual_kmh < es.residual_kmh);
    }

    proptest! {
        #[test]
        fn impact_level_monotone(a in 0.0f64..120.0, b in 0.0f64..120.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for t in [ImpactTarget::Truck, ImpactTarget::Vehicle, ImpactTarget::Vru] {
                prop_assert!(impact_loss_level(lo, t) <= impact_loss_level(hi, t));
            }
        }
    }
}
