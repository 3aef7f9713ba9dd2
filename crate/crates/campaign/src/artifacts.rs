//! Files written by a sweep: CSVs are the record, SVGs and report.txt are views.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use emrm_sim::rrt::{plan_dual, Mitigability, RrtError, Terminal};
use emrm_sim::vehicle::{Scene, VehicleParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kpi::{CampaignReport, StrategyKpi};
use crate::svg;
use crate::sweep::{cell_seed, write_atomic, CellResult, PlannerSettings, SweepError, SweepSpec};

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("planner failed for {scenario}: {source}")]
    Planner { scenario: String, source: RrtError },
}

impl From<SweepError> for ArtifactError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Io { path, source } => ArtifactError::Io { path, source },
            other => ArtifactError::Parse {
                path: PathBuf::new(),
                message: other.to_string(),
            },
        }
    }
}

pub const RESULTS_HEADER: [&str; 13] = [
    "cell_x",
    "cell_y",
    "panel",
    "speed_kmh",
    "ttc_s",
    "mu",
    "passage_m",
    "strategy",
    "collided",
    "residual_kmh",
    "min_ttc_s",
    "loss_level",
    "class",
];

fn write_file(path: &Path, text: &str) -> Result<PathBuf, ArtifactError> {
    write_atomic(path, text.as_bytes())?;
    Ok(path.to_path_buf())
}

fn csv_bytes<F>(path: &Path, header: &[&str], fill: F) -> Result<Vec<u8>, ArtifactError>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<(), csv::Error>,
{
    let err = |source| ArtifactError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    fill(&mut w).map_err(err)?;
    w.into_inner().map_err(|e| ArtifactError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })
}

/// One row per feasible cell per strategy, cell order then strategy order.
pub fn results_csv(grid: &[CellResult], path: &Path) -> Result<Vec<u8>, ArtifactError> {
    csv_bytes(path, &RESULTS_HEADER, |w| {
        for c in grid.iter().filter(|c| c.feasible) {
            for o in &c.outcomes {
                w.write_record([
                    c.cell_x.to_string(),
                    c.cell_y.to_string(),
                    c.panel.clone(),
                    c.speed_kmh.to_string(),
                    c.ttc_s.to_string(),
                    c.mu.to_string(),
                    c.passage_m.to_string(),
                    o.strategy.name().to_string(),
                    o.collided.to_string(),
                    format!("{:.4}", o.residual_kmh),
                    o.min_ttc_s.map(|t| format!("{t:.4}")).unwrap_or_default(),
                    o.loss.to_string(),
                    c.class.code().to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

fn trace_csv(report: &CampaignReport, path: &Path) -> Result<Vec<u8>, ArtifactError> {
    csv_bytes(
        path,
        &[
            "panel",
            "cell_x",
            "cell_y",
            "test_point",
            "class",
            "uca",
            "machine",
            "state",
            "event",
            "kind",
        ],
        |w| {
            for t in &report.trace {
                w.write_record([
                    t.panel.clone(),
                    t.cell_x.to_string(),
                    t.cell_y.to_string(),
                    t.test_point.clone(),
                    t.class.code().to_string(),
                    t.uca.to_string(),
                    t.machine.clone(),
                    t.transition.state.clone(),
                    t.transition.event.clone(),
                    t.kind.to_string(),
                ])?;
            }
            Ok(())
        },
    )
}

fn planner_csv(grid: &[CellResult], path: &Path) -> Result<Vec<u8>, ArtifactError> {
    csv_bytes(
        path,
        &[
            "panel",
            "cell_x",
            "cell_y",
            "class",
            "planner_label",
            "avoidance",
            "failsafe",
            "contact_kmh",
            "goal_nodes",
            "failsafe_nodes",
        ],
        |w| {
            for c in grid {
                let Some(p) = &c.plan else { continue };
                w.write_record([
                    c.panel.clone(),
                    c.cell_x.to_string(),
                    c.cell_y.to_string(),
                    c.class.code().to_string(),
                    p.label.code().to_string(),
                    p.avoidance.to_string(),
                    p.failsafe.clone(),
                    p.contact_kmh.map(|v| format!("{v:.4}")).unwrap_or_default(),
                    p.goal_nodes.to_string(),
                    p.failsafe_nodes.to_string(),
                ])?;
            }
            Ok(())
        },
    )
}

fn kpi_row(out: &mut String, k: &StrategyKpi) {
    let residual = k
        .mean_residual_kmh
        .map(|r| format!("{r:.2}"))
        .unwrap_or_else(|| "-".into());
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>8.1} {:>14} {:>15.1} {:>11.2}",
        k.name, k.cells, k.car_pct, residual, k.mitigability_success_pct, k.mean_delta_loss
    );
}

pub fn report_text(report: &CampaignReport) -> String {
    let mut s = String::new();
    let r = &report.regions;
    let _ = writeln!(s, "EMRM campaign report");
    let _ = writeln!(s, "baseline: {}", report.baseline);
    let _ = writeln!(s, "cells: {} total, {} feasible", r.total, r.feasible);
    let _ = writeln!(s);
    let _ = writeln!(s, "KPIs over feasible cells (mean residual over collided cells only)");
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>8} {:>14} {:>15} {:>11}",
        "strategy", "cells", "CAR %", "residual km/h", "mitigability %", "mean ΔLoss"
    );
    for k in &report.strategies {
        kpi_row(&mut s, k);
    }
    kpi_row(&mut s, &report.emrm);
    let _ = writeln!(
        s,
        "dominance (EMRM loss ≤ baseline loss): {:.1} %",
        report.dominance_pct
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Mitigability regions (G/Y/O/R as % of feasible cells, gray as % of all)"
    );
    let _ = writeln!(
        s,
        "{:<8} {:>6} {:>9} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "panel", "cells", "feasible", "G %", "Y %", "O %", "R %", "gray %"
    );
    let mut region_row = |name: &str, f: &crate::kpi::RegionFractions| {
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>9} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1}",
            name,
            f.total,
            f.feasible,
            f.pct(Mitigability::FullyAvoidable),
            f.pct(Mitigability::AggressiveAvoidanceRequired),
            f.pct(Mitigability::Mitigatable),
            f.pct(Mitigability::NotMitigatable),
            f.pct(Mitigability::Infeasible)
        );
    };
    region_row("all", r);
    for (p, f) in &report.panel_regions {
        region_row(p, f);
    }
    let c = &report.coverage;
    let _ = writeln!(s);
    let _ = writeln!(s, "Coverage");
    let ok = c.hazard_rows.iter().filter(|h| h.status != "missing").count();
    let _ = writeln!(
        s,
        "hazard scenarios: {:.1} % ({ok}/{})",
        c.hazard_pct,
        c.hazard_rows.len()
    );
    for h in &c.hazard_rows {
        let _ = writeln!(s, "  {} {}: {}", h.row_id, h.hazard, h.status);
    }
    let hit = c.ucas_triggered.values().filter(|&&n| n > 0).count();
    let _ = writeln!(s, "UCAs: {:.1} % ({hit}/{})", c.uca_pct, c.ucas_triggered.len());
    for (u, n) in &c.ucas_triggered {
        let _ = writeln!(s, "  {u}: {n} cells");
    }
    let _ = writeln!(
        s,
        "parameter space: {:.1} % ({}/{} feasible cells simulated)",
        c.parameter_pct, c.simulated_cells, c.feasible_cells
    );
    let _ = writeln!(s, "EMRM FSM transitions: {:.1} %", c.fsm_transition_pct);
    for t in &c.fsm_uncovered {
        let _ = writeln!(s, "  not exercised: {} --{}-->", t.state, t.event);
    }
    let losses: Vec<String> = c.losses_triggered.iter().map(|l| l.to_string()).collect();
    let _ = writeln!(s, "losses reachable from triggered UCAs: {}", losses.join(", "));
    s
}

/// Written next to the results so `report` can rebuild the KPIs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellsFile {
    pub scene_id: String,
    pub spec: SweepSpec,
    pub cells: Vec<CellResult>,
}

pub fn read_cells(dir: &Path) -> Result<CellsFile, ArtifactError> {
    let path = dir.join("cells.json");
    let text = fs::read_to_string(&path).map_err(|source| ArtifactError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ArtifactError::Parse {
        path,
        message: e.to_string(),
    })
}

/// Writes results.csv, cells.json, trace.csv, planner.csv, report.txt and one
/// heatmap per panel. Returns the written paths.
pub fn emit_artifacts(
    report: &CampaignReport,
    grid: &[CellResult],
    spec: &SweepSpec,
    template: &Scene,
    outdir: &Path,
) -> Result<Vec<PathBuf>, ArtifactError> {
    fs::create_dir_all(outdir).map_err(|source| ArtifactError::Io {
        path: outdir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let p = outdir.join("results.csv");
    write_atomic(&p, &results_csv(grid, &p)?)?;
    written.push(p);

    let p = outdir.join("cells.json");
    let file = CellsFile {
        scene_id: template.id.clone(),
        spec: spec.clone(),
        cells: grid.to_vec(),
    };
    written.push(write_file(&p, &serde_json::to_string(&file).expect("cells serialize"))?);

    let p = outdir.join("trace.csv");
    write_atomic(&p, &trace_csv(report, &p)?)?;
    written.push(p);

    let p = outdir.join("planner.csv");
    write_atomic(&p, &planner_csv(grid, &p)?)?;
    written.push(p);

    written.push(write_file(&outdir.join("report.txt"), &report_text(report))?);

    for panel in &spec.panels {
        let cells: Vec<&CellResult> = grid.iter().filter(|c| c.panel == panel.name).collect();
        if cells.is_empty() {
            continue;
        }
        let body = svg::mitigability_heatmap(panel, &cells, template, &spec.vehicle);
        written.push(write_file(
            &outdir.join(format!("mitigability_{}.svg", panel.name)),
            &body,
        )?);
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub scene: Scene,
    pub mu: f64,
}

/// Twelve planner showcases: passage width, friction and speed rows.
pub fn canonical_scenarios(template: &Scene, params: &VehicleParams) -> Vec<Scenario> {
    let mk = |name: &str, v_ms: f64, ttc: f64, passage: f64, mu: f64| {
        let mut scene = template.with(v_ms * 3.6, ttc);
        scene.passage_width = passage;
        Scenario {
            name: name.to_string(),
            scene,
            mu,
        }
    };
    let w = params.width;
    let p = template.passage_width;
    vec![
        mk("passage_wide", 12.0, 1.5, 2.0 * w, 1.0),
        mk("passage_moderate", 12.0, 1.5, 1.5 * w, 1.0),
        mk("passage_tight", 12.0, 1.5, 1.1 * w, 1.0),
        mk("passage_blocked", 12.0, 1.5, 0.9 * w, 1.0),
        mk("friction_dry", 16.0, 1.0, p, 1.0),
        mk("friction_wet", 16.0, 1.0, p, 0.7),
        mk("friction_snow", 16.0, 1.0, p, 0.3),
        mk("friction_ice", 16.0, 1.0, p, 0.15),
        // speed row at a fixed 16 m gap
        mk("speed_16", 16.0, 1.0, p, 1.0),
        mk("speed_12", 12.0, 16.0 / 12.0, p, 1.0),
        mk("speed_8", 8.0, 2.0, p, 1.0),
        mk("speed_4", 4.0, 4.0, p, 1.0),
    ]
}

fn nodes_csv(plan: &emrm_sim::rrt::PlanResult, path: &Path) -> Result<Vec<u8>, ArtifactError> {
    csv_bytes(
        path,
        &["tree", "id", "parent", "t", "x", "y", "psi", "v", "terminal"],
        |w| {
            let trees = [&plan.goal_tree, &plan.failsafe_tree];
            for (r, n) in plan
                .node_records()
                .into_iter()
                .zip(trees.iter().flat_map(|t| t.nodes.iter()))
            {
                let terminal = match n.terminal {
                    Some(Terminal::Stop) => "stop".to_string(),
                    Some(Terminal::Goal) => "goal".to_string(),
                    Some(Terminal::Contact { speed, angle_deg }) => {
                        format!("contact {speed:.3} m/s {angle_deg:.1} deg")
                    }
                    None => String::new(),
                };
                w.write_record([
                    r.tree.to_string(),
                    r.id.to_string(),
                    r.parent.map(|p| p.to_string()).unwrap_or_default(),
                    format!("{:.3}", r.t),
                    format!("{:.4}", r.x),
                    format!("{:.4}", r.y),
                    format!("{:.5}", r.psi),
                    format!("{:.4}", r.v),
                    terminal,
                ])?;
            }
            Ok(())
        },
    )
}

/// Plans every canonical scenario and writes `trajectories_<name>.svg` plus a
/// node dump `trajectories_<name>.csv`.
pub fn emit_trajectories(
    template: &Scene,
    base: &VehicleParams,
    planner: &PlannerSettings,
    seed: u64,
    outdir: &Path,
) -> Result<Vec<PathBuf>, ArtifactError> {
    fs::create_dir_all(outdir).map_err(|source| ArtifactError::Io {
        path: outdir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for sc in canonical_scenarios(template, base) {
        let params = base.with_mu(sc.mu);
        let cfg = planner.config(cell_seed(&sc.scene.id, &sc.name, 0, 0, seed));
        let plan = plan_dual(&sc.scene, &params, &cfg).map_err(|source| ArtifactError::Planner {
            scenario: sc.name.clone(),
            source,
        })?;
        let title = format!(
            "{} ({:.0} m/s, TTC {} s, passage {:.2} m, μ {})",
            sc.name,
            sc.scene.speed(),
            sc.scene.ttc,
            sc.scene.passage_width,
            sc.mu
        );
        let p = outdir.join(format!("trajectories_{}.svg", sc.name));
        written.push(write_file(
            &p,
            &svg::trajectory_plot(&title, &sc.scene, &params, &plan),
        )?);
        let p = outdir.join(format!("trajectories_{}.csv", sc.name));
        write_atomic(&p, &nodes_csv(&plan, &p)?)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::bundled_scene;

    #[test]
    fn empty_grid_gives_header_only_csv() {
        let bytes = results_csv(&[], Path::new("results.csv")).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), RESULTS_HEADER.join(",") + "\n");
    }

    #[test]
    fn canonical_scenarios_are_valid() {
        let p = VehicleParams::default();
        let all = canonical_scenarios(&bundled_scene(), &p);
        assert_eq!(all.len(), 12);
        for s in &all {
            s.scene.validate().unwrap();
            p.with_mu(s.mu).validate().unwrap();
        }
    }
}
