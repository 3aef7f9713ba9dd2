//! Scene files: YAML with strict field checking and line-numbered errors.

use std::fs;
use std::path::{Path, PathBuf};

use emrm_sim::vehicle::{EgoInit, Road, Scene, Truck};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BUNDLED_SCENE: &str = include_str!("../data/emrm_scene_1.yaml");

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error{} in `{field}`: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Schema {
        field: String,
        line: Option<usize>,
        message: String,
    },
    #[error("missing field `{0}`")]
    MissingField(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadFile {
    lane_width: Option<f64>,
    junction_clearance: Option<f64>,
    approach_length: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruckFile {
    width: Option<f64>,
    edge_offset: Option<f64>,
    depth: Option<f64>,
    speed_kmh: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EgoFile {
    speed_kmh: Option<f64>,
    lateral_offset: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    id: Option<String>,
    road: Option<RoadFile>,
    truck: Option<TruckFile>,
    passage_width: Option<f64>,
    ego: Option<EgoFile>,
    ttc: Option<f64>,
}

#[derive(Serialize)]
struct SceneOut<'a> {
    id: &'a str,
    road: &'a Road,
    truck: &'a Truck,
    passage_width: f64,
    ego: &'a EgoInit,
    ttc: f64,
}

/// Line of a dotted key such as `truck.speed_kmh`, searched below its parent.
fn line_of(text: &str, path: &str) -> Option<usize> {
    let mut from = 0;
    for key in path.split('.') {
        let needle = format!("{key}:");
        from += text
            .lines()
            .skip(from)
            .position(|l| l.trim_start().starts_with(&needle))?
            + 1;
    }
    Some(from)
}

fn schema_from_yaml(e: serde_yaml::Error) -> SceneError {
    let line = e.location().map(|l| l.line());
    let text = e.to_string();
    // serde_yaml prefixes the message with the dotted path when it has one
    let (field, message) = match text.split_once(": ") {
        Some((path, rest)) if !path.contains(' ') => (path.to_string(), rest.to_string()),
        _ => (".".to_string(), text),
    };
    SceneError::Schema { field, line, message }
}

fn required<T>(v: Option<T>, field: &str) -> Result<T, SceneError> {
    v.ok_or_else(|| SceneError::MissingField(field.to_string()))
}

pub fn parse_scene(text: &str) -> Result<Scene, SceneError> {
    let raw: SceneFile = serde_yaml::from_str(text).map_err(schema_from_yaml)?;
    let road_d = Road::default();
    let truck_d = Truck::default();
    let road = raw.road.map_or(road_d, |r| Road {
        lane_width: r.lane_width.unwrap_or(road_d.lane_width),
        junction_clearance: r.junction_clearance.unwrap_or(road_d.junction_clearance),
        approach_length: r.approach_length.unwrap_or(road_d.approach_length),
    });
    let truck = raw.truck.map_or(truck_d, |t| Truck {
        width: t.width.unwrap_or(truck_d.width),
        edge_offset: t.edge_offset.unwrap_or(truck_d.edge_offset),
        depth: t.depth.unwrap_or(truck_d.depth),
        speed_kmh: t.speed_kmh.unwrap_or(truck_d.speed_kmh),
    });
    let ego = required(raw.ego, "ego")?;
    let scene = Scene {
        id: required(raw.id, "id")?,
        road,
        truck,
        passage_width: required(raw.passage_width, "passage_width")?,
        ego: EgoInit {
            speed_kmh: required(ego.speed_kmh, "ego.speed_kmh")?,
            lateral_offset: ego.lateral_offset.unwrap_or(0.0),
        },
        ttc: required(raw.ttc, "ttc")?,
    };
    scene.validate().map_err(|e| {
        let text_err = match e {
            emrm_sim::vehicle::SimError::InvalidScene(m) => m,
            other => other.to_string(),
        };
        let (field, message) = text_err
            .split_once(": ")
            .map_or((".".to_string(), text_err.clone()), |(f, m)| {
                (f.to_string(), m.to_string())
            });
        SceneError::Schema {
            line: line_of(text, &field),
            field,
            message,
        }
    })?;
    Ok(scene)
}

pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scene(&text)
}

pub fn bundled_scene() -> Scene {
    parse_scene(BUNDLED_SCENE).expect("bundled scene is valid")
}

pub fn scene_to_yaml(scene: &Scene) -> String {
    serde_yaml::to_string(&SceneOut {
        id: &scene.id,
        road: &scene.road,
        truck: &scene.truck,
        passage_width: scene.passage_width,
        ego: &scene.ego,
        ttc: scene.ttc,
    })
    .expect("scene serializes")
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), SceneError> {
    fs::write(path, scene_to_yaml(scene)).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scene_has_slow_truck() {
        let s = bundled_scene();
        assert_eq!(s.id, "emrm_scene_1");
        assert_eq!(s.truck.speed_kmh, 10.0);
    }

    #[test]
    fn missing_passage_width() {
        let text = BUNDLED_SCENE.replace("passage_width: 3.0\n", "");
        assert!(matches!(parse_scene(&text), Err(SceneError::MissingField(f)) if f == "passage_width"));
    }

    #[test]
    fn defaults_fill_optional_blocks() {
        let s = parse_scene("id: x\npassage_width: 2.5\nego: {speed_kmh: 40}\nttc: 1.2\n").unwrap();
        assert_eq!(s.truck, Truck::default());
        assert_eq!(s.road, Road::default());
    }

    #[test]
    fn unknown_field_reports_line() {
        let text = BUNDLED_SCENE.replace("  speed_kmh: 10.0", "  speed_kmh: 10.0\n  colour: red");
        match parse_scene(&text) {
            Err(SceneError::Schema { line: Some(l), .. }) => assert_eq!(l, 13),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_type_reports_field_and_line() {
        let text = BUNDLED_SCENE.replace("ttc: 1.0", "ttc: soon");
        match parse_scene(&text) {
            Err(SceneError::Schema { field, line, .. }) => {
                assert_eq!(field, "ttc");
                assert_eq!(line, Some(17));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_point_at_their_line() {
        let text = BUNDLED_SCENE.replace("passage_width: 3.0", "passage_width: -1.0");
        match parse_scene(&text) {
            Err(SceneError::Schema { field, line, .. }) => {
                assert_eq!(field, "passage_width");
                assert_eq!(line, Some(13));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.yaml");
        let mut s = bundled_scene();
        s.truck.speed_kmh = 25.0;
        save_scene(&s, &path).unwrap();
        assert_eq!(load_scene(&path).unwrap(), s);
    }
}
