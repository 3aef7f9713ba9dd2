//! `plan-coverage`: test-point planning over scene factors, optionally
//! scoring every point with the simulator.

use std::fs;
use std::path::{Path, PathBuf};

use emrm_core::coverage::{
    check_coverage, plan, CoverageError, CoverageReport, OutcomeOracle, PlanInput, Problem, TestPoint, TestSet, Value,
};
use emrm_sim::vehicle::{simulate_with, Scene, SimOptions, Strategy, VehicleParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sweep::{is_feasible, write_atomic, Param, SweepError};

/// Factor name for a categorical strategy choice. Without it, a point counts
/// as a success when any strategy avoids contact.
pub const STRATEGY_FACTOR: &str = "strategy";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error("unknown factor `{0}` (expected one of speed_kmh, ttc_s, mu, passage_m, truck_speed_kmh, strategy)")]
    UnknownFactor(String),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Write(#[from] SweepError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binding {
    Param(Param),
    Strategy,
}

fn bind(name: &str) -> Result<Binding, PlanError> {
    if name == STRATEGY_FACTOR {
        return Ok(Binding::Strategy);
    }
    Param::ALL
        .into_iter()
        .find(|p| p.name() == name)
        .map(Binding::Param)
        .ok_or_else(|| PlanError::UnknownFactor(name.to_string()))
}

/// Maps test-point values onto a scene template.
#[derive(Debug, Clone)]
pub struct PointMapper {
    bindings: Vec<Binding>,
    template: Scene,
    params: VehicleParams,
}

impl PointMapper {
    pub fn new(input: &PlanInput, template: Scene, params: VehicleParams) -> Result<Self, PlanError> {
        let bindings = input.factors.iter().map(|f| bind(&f.name)).collect::<Result<_, _>>()?;
        Ok(Self {
            bindings,
            template,
            params,
        })
    }

    /// Scene, vehicle parameters and strategy (if fixed by the point).
    pub fn instantiate(&self, values: &[Value]) -> (Scene, VehicleParams, Option<Strategy>) {
        let mut scene = self.template.clone();
        let mut params = self.params;
        let mut strategy = None;
        for (b, v) in self.bindings.iter().zip(values) {
            match (b, v) {
                (Binding::Param(p), Value::Real(x)) => match p {
                    Param::SpeedKmh => scene.ego.speed_kmh = *x,
                    Param::TtcS => scene.ttc = *x,
                    Param::Mu => params = params.with_mu(*x),
                    Param::PassageM => scene.passage_width = *x,
                    Param::TruckSpeedKmh => scene.truck.speed_kmh = *x,
                },
                (Binding::Strategy, Value::Mode(m)) => strategy = m.parse().ok(),
                _ => {}
            }
        }
        (scene, params, strategy)
    }

    pub fn relevant(&self, values: &[Value]) -> bool {
        let (scene, params, _) = self.instantiate(values);
        scene.validate().is_ok() && params.validate().is_ok() && is_feasible(&scene, &params)
    }

    /// True when the point's strategy (or any strategy) avoids contact.
    pub fn avoided(&self, point: &TestPoint) -> bool {
        let (scene, params, strategy) = self.instantiate(&point.values);
        let opts = SimOptions {
            record: false,
            ..SimOptions::default()
        };
        let run = |s: Strategy| simulate_with(&scene, s, &params, &opts).is_ok_and(|o| !o.collided);
        match strategy {
            Some(s) => run(s),
            None => Strategy::ALL.into_iter().any(run),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanOutput {
    pub testset: TestSet,
    pub coverage: CoverageReport,
    /// Share of points with a recorded success, when run live.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
}

pub fn load_plan_input(path: &Path) -> Result<PlanInput, PlanError> {
    let text = fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_yaml::from_str(&text).map_err(|e| PlanError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn plan_for_scene(
    input: PlanInput,
    template: Scene,
    params: VehicleParams,
    live: bool,
) -> Result<PlanOutput, PlanError> {
    let mapper = PointMapper::new(&input, template, params)?;
    let relevance = mapper.clone();
    let problem = Problem::with_relevance(input, move |v: &[Value]| relevance.relevant(v))?;
    let avoided = |p: &TestPoint| mapper.avoided(p);
    let oracle = if live {
        OutcomeOracle::Live(&avoided)
    } else {
        OutcomeOracle::Stub
    };
    let testset = plan(&problem, oracle)?;
    let coverage = check_coverage(&testset, &problem);
    let scored: Vec<bool> = testset.points.iter().filter_map(|p| p.outcome).collect();
    let success_rate = (!scored.is_empty()).then(|| scored.iter().filter(|&&b| b).count() as f64 / scored.len() as f64);
    Ok(PlanOutput {
        testset,
        coverage,
        success_rate,
    })
}

/// JSON when the path ends in `.json`, YAML otherwise.
pub fn save_plan(out: &PlanOutput, path: &Path) -> Result<(), PlanError> {
    let text = if path.extension().is_some_and(|e| e == "json") {
        serde_json::to_string_pretty(out).expect("plan serializes")
    } else {
        serde_yaml::to_string(out).expect("plan serializes")
    };
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::bundled_scene;

    const BUNDLED: &str = include_str!("../data/coverage_plan.yaml");

    #[test]
    fn bundled_plan_satisfies_constraints() {
        let input: PlanInput = serde_yaml::from_str(BUNDLED).unwrap();
        let out = plan_for_scene(input, bundled_scene(), VehicleParams::default(), false).unwrap();
        assert!(out.coverage.all_satisfied(), "{:?}", out.coverage);
        assert!(!out.testset.is_empty());
        assert_eq!(out.success_rate, None);
    }

    #[test]
    fn live_plan_scores_points() {
        let input: PlanInput = serde_yaml::from_str(BUNDLED).unwrap();
        let out = plan_for_scene(input, bundled_scene(), VehicleParams::default(), true).unwrap();
        assert!(out.coverage.all_satisfied(), "{:?}", out.coverage);
        let rate = out.success_rate.unwrap();
        assert!(rate > 0.0 && rate < 1.0, "{rate}");
    }

    #[test]
    fn relevance_drops_infeasible_points() {
        let input: PlanInput = serde_yaml::from_str(BUNDLED).unwrap();
        let m = PointMapper::new(&input, bundled_scene(), VehicleParams::default()).unwrap();
        let names: Vec<_> = input.factors.iter().map(|f| f.name.as_str()).collect();
        let point = |speed: f64, ttc: f64| -> Vec<Value> {
            names
                .iter()
                .map(|n| match *n {
                    "speed_kmh" => Value::Real(speed),
                    "ttc_s" => Value::Real(ttc),
                    "mu" => Value::Real(1.0),
                    _ => Value::Mode("Dodge".into()),
                })
                .collect()
        };
        assert!(m.relevant(&point(50.0, 1.0)));
        assert!(!m.relevant(&point(30.0, 0.3)));
        assert!(!m.relevant(&point(72.0, 2.5)));
    }

    #[test]
    fn unknown_factor_rejected() {
        let mut input: PlanInput = serde_yaml::from_str(BUNDLED).unwrap();
        input.factors[0].name = "lane_count".into();
        assert!(matches!(
            PointMapper::new(&input, bundled_scene(), VehicleParams::default()),
            Err(PlanError::UnknownFactor(_))
        ));
    }
}
