//! Campaign KPIs, region fractions, coverage metrics and the cell → UCA → FSM
//! trace index.

use std::collections::{BTreeMap, BTreeSet};

use emrm_core::catalog::{Catalog, CatalogError, UcaId};
use emrm_core::fsm::{build_emrm_machine, emrm, CoverageLedger, FsmError, TransitionRef};
use emrm_core::hazard::{Context, LossLevel, WorldSnapshot};
use emrm_sim::rrt::Mitigability;
use emrm_sim::vehicle::Strategy;
use serde::Serialize;
use thiserror::Error;

use crate::sweep::{CellResult, StrategyRecord};

#[derive(Debug, Error)]
pub enum KpiError {
    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Fsm(#[from] FsmError),
}

pub const EMRM_LABEL: &str = "EMRM";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyKpi {
    /// Strategy name, or `EMRM` for the per-cell best of all strategies.
    pub name: String,
    pub cells: usize,
    pub avoided: usize,
    pub car_pct: f64,
    /// Over collided cells only; `None` when nothing collided.
    pub mean_residual_kmh: Option<f64>,
    pub mitigability_success_pct: f64,
    pub mean_delta_loss: f64,
}

fn delta_loss(no_action: LossLevel, loss: LossLevel) -> i32 {
    no_action.ordinal() as i32 - loss.ordinal() as i32
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

fn strategy_kpi(name: &str, picks: &[(&CellResult, &StrategyRecord)]) -> StrategyKpi {
    let cells = picks.len();
    let avoided = picks.iter().filter(|(_, r)| !r.collided).count();
    let residuals: Vec<f64> = picks
        .iter()
        .filter(|(_, r)| r.collided)
        .map(|(_, r)| r.residual_kmh)
        .collect();
    let improved = picks.iter().filter(|(c, r)| r.loss < c.no_action_loss).count();
    let delta: i64 = picks
        .iter()
        .map(|(c, r)| delta_loss(c.no_action_loss, r.loss) as i64)
        .sum();
    StrategyKpi {
        name: name.to_string(),
        cells,
        avoided,
        car_pct: pct(avoided, cells),
        mean_residual_kmh: (!residuals.is_empty()).then(|| residuals.iter().sum::<f64>() / residuals.len() as f64),
        mitigability_success_pct: pct(improved, cells),
        mean_delta_loss: if cells == 0 { 0.0 } else { delta as f64 / cells as f64 },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RegionFractions {
    pub total: usize,
    pub feasible: usize,
    pub counts: BTreeMap<String, usize>,
}

impl RegionFractions {
    pub fn of<'a>(cells: impl IntoIterator<Item = &'a CellResult>) -> Self {
        let mut r = RegionFractions::default();
        for m in Mitigability::ALL {
            r.counts.insert(m.code().to_string(), 0);
        }
        for c in cells {
            r.total += 1;
            if c.feasible {
                r.feasible += 1;
            }
            *r.counts.entry(c.class.code().to_string()).or_default() += 1;
        }
        r
    }

    pub fn count(&self, m: Mitigability) -> usize {
        self.counts.get(m.code()).copied().unwrap_or(0)
    }

    /// Share of feasible cells; Gray is reported against the total.
    pub fn pct(&self, m: Mitigability) -> f64 {
        if m == Mitigability::Infeasible {
            pct(self.count(m), self.total)
        } else {
            pct(self.count(m), self.feasible)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HazardCoverageRow {
    pub row_id: String,
    pub hazard: String,
    /// "exercised", "catalog-only" or "missing".
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageMetrics {
    pub hazard_rows: Vec<HazardCoverageRow>,
    pub hazard_pct: f64,
    pub ucas_triggered: BTreeMap<String, usize>,
    pub uca_pct: f64,
    pub feasible_cells: usize,
    pub simulated_cells: usize,
    pub parameter_pct: f64,
    pub fsm_transition_pct: f64,
    pub fsm_uncovered: Vec<TransitionRef>,
    pub losses_triggered: BTreeSet<LossLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub panel: String,
    pub cell_x: usize,
    pub cell_y: usize,
    /// Test point id, `panel[x,y]`.
    pub test_point: String,
    pub class: Mitigability,
    pub uca: UcaId,
    pub machine: String,
    pub transition: TransitionRef,
    /// "exercised" or "required_missing".
    pub kind: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignReport {
    pub baseline: String,
    pub strategies: Vec<StrategyKpi>,
    pub emrm: StrategyKpi,
    pub regions: RegionFractions,
    pub panel_regions: BTreeMap<String, RegionFractions>,
    /// Feasible cells where the EMRM loss is no worse than the baseline loss.
    pub dominance_pct: f64,
    pub coverage: CoverageMetrics,
    pub trace: Vec<TraceEntry>,
}

impl CampaignReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategyKpi> {
        if name == EMRM_LABEL {
            return Some(&self.emrm);
        }
        self.strategies.iter().find(|k| k.name == name)
    }
}

/// UCAs a cell gives evidence for: a required avoidance that braking alone
/// misses (Y), an aggressive maneuver where a stop suffices (G), a maneuver
/// started too late to avoid contact (O, R), and a steering maneuver that
/// ends with the ego still overlapping the truck face.
pub fn triggered_ucas(cell: &CellResult) -> BTreeSet<UcaId> {
    let mut out = BTreeSet::new();
    match cell.class {
        Mitigability::FullyAvoidable => {
            out.insert(UcaId::UCA2);
        }
        Mitigability::AggressiveAvoidanceRequired => {
            out.insert(UcaId::UCA1);
        }
        Mitigability::Mitigatable | Mitigability::NotMitigatable => {
            out.insert(UcaId::UCA3);
        }
        Mitigability::Infeasible => return out,
    }
    let partial = cell.outcomes.iter().any(|o| {
        o.strategy != Strategy::EmergencyStop && o.collided && o.overlap.is_some_and(|ov| ov > 0.0 && ov < 1.0)
    });
    if partial {
        out.insert(UcaId::UCA4);
    }
    out
}

/// FSM event string the cell's class drives through the EMRM machine.
pub fn class_events(class: Mitigability) -> &'static [&'static str] {
    match class {
        Mitigability::FullyAvoidable => &emrm::NO_RISK_STRING,
        Mitigability::AggressiveAvoidanceRequired => &emrm::SUCCESS_STRING,
        Mitigability::Mitigatable | Mitigability::NotMitigatable => &emrm::FAILURE_STRING,
        Mitigability::Infeasible => &[],
    }
}

fn check_complete(grid: &[CellResult], strategies: &[Strategy]) -> Result<(), KpiError> {
    for c in grid {
        if c.feasible == (c.class == Mitigability::Infeasible) {
            return Err(KpiError::IncompleteGrid(format!(
                "{} has class {} but feasible = {}",
                c.label(),
                c.class.code(),
                c.feasible
            )));
        }
        if c.feasible {
            for &s in strategies {
                if c.outcome(s).is_none() {
                    return Err(KpiError::IncompleteGrid(format!("{} has no {s} outcome", c.label())));
                }
            }
        }
    }
    Ok(())
}

pub fn compute_kpis(
    grid: &[CellResult],
    strategies: &[Strategy],
    baseline: Strategy,
    scene_id: &str,
    catalog: &Catalog,
) -> Result<CampaignReport, KpiError> {
    check_complete(grid, strategies)?;
    if !strategies.contains(&baseline) {
        return Err(KpiError::IncompleteGrid(format!(
            "baseline {baseline} not among the strategies"
        )));
    }
    let feasible: Vec<&CellResult> = grid.iter().filter(|c| c.feasible).collect();

    let kpis: Vec<StrategyKpi> = strategies
        .iter()
        .map(|&s| {
            let picks: Vec<_> = feasible.iter().map(|c| (*c, c.outcome(s).expect("checked"))).collect();
            strategy_kpi(s.name(), &picks)
        })
        .collect();
    let best: Vec<_> = feasible.iter().map(|c| (*c, c.best().expect("checked"))).collect();
    let emrm = strategy_kpi(EMRM_LABEL, &best);

    let dominated = feasible
        .iter()
        .filter(|c| c.best().expect("checked").loss <= c.outcome(baseline).expect("checked").loss)
        .count();

    let mut panel_regions = BTreeMap::new();
    let panels: BTreeSet<&str> = grid.iter().map(|c| c.panel.as_str()).collect();
    for p in panels {
        panel_regions.insert(p.to_string(), RegionFractions::of(grid.iter().filter(|c| c.panel == p)));
    }

    let machine = build_emrm_machine();
    let mut ledger = CoverageLedger::new(&machine);
    let mut ucas_triggered: BTreeMap<String, usize> = UcaId::ALL.iter().map(|u| (u.to_string(), 0)).collect();
    let mut all_ucas = BTreeSet::new();
    let mut trace = Vec::new();
    for c in &feasible {
        let events = class_events(c.class);
        let run = machine.run(emrm::S1, events)?;
        ledger.record(&run)?;
        let ucas = triggered_ucas(c);
        for &u in &ucas {
            *ucas_triggered.entry(u.to_string()).or_default() += 1;
            let link = catalog.trace(u)?;
            let kinds = link
                .exercised
                .iter()
                .map(|t| (t, "exercised"))
                .chain(link.required_missing.iter().map(|t| (t, "required_missing")));
            for (t, kind) in kinds {
                trace.push(TraceEntry {
                    panel: c.panel.clone(),
                    cell_x: c.cell_x,
                    cell_y: c.cell_y,
                    test_point: c.label(),
                    class: c.class,
                    uca: u,
                    machine: link.machine.clone(),
                    transition: t.clone(),
                    kind,
                });
            }
        }
        all_ucas.extend(ucas);
    }

    let context = Context::at(WorldSnapshot::new(scene_id));
    let integration = if all_ucas.is_empty() {
        None
    } else {
        Some(catalog.integrate(&context, &all_ucas)?)
    };
    let exercised: BTreeSet<String> = integration.as_ref().map(|i| i.hazards.clone()).unwrap_or_default();
    let hazard_rows: Vec<HazardCoverageRow> = catalog
        .hazards
        .iter()
        .map(|h| HazardCoverageRow {
            row_id: h.row_id.clone(),
            hazard: h.hazard.clone(),
            status: if h.simulated && exercised.contains(&h.hazard) {
                "exercised"
            } else if h.catalog_only() {
                "catalog-only"
            } else {
                "missing"
            }
            .to_string(),
        })
        .collect();
    let hazards_ok = hazard_rows.iter().filter(|r| r.status != "missing").count();
    let ucas_hit = ucas_triggered.values().filter(|&&n| n > 0).count();

    let coverage = CoverageMetrics {
        hazard_pct: pct(hazards_ok, hazard_rows.len()),
        hazard_rows,
        uca_pct: pct(ucas_hit, UcaId::ALL.len()),
        ucas_triggered,
        feasible_cells: feasible.len(),
        simulated_cells: feasible.iter().filter(|c| !c.outcomes.is_empty()).count(),
        parameter_pct: if feasible.is_empty() {
            0.0
        } else {
            pct(
                feasible.iter().filter(|c| !c.outcomes.is_empty()).count(),
                feasible.len(),
            )
        },
        fsm_transition_pct: 100.0 * ledger.coverage(),
        fsm_uncovered: ledger.uncovered().into_iter().cloned().collect(),
        losses_triggered: integration.map(|i| i.losses).unwrap_or_default(),
    };

    Ok(CampaignReport {
        baseline: baseline.name().to_string(),
        strategies: kpis,
        emrm,
        regions: RegionFractions::of(grid),
        panel_regions,
        dominance_pct: pct(dominated, feasible.len()),
        coverage,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Campaign-level gates used by `report --check`.
pub fn threshold_checks(r: &CampaignReport) -> Vec<Check> {
    let c = &r.coverage;
    let base_car = r.strategy(&r.baseline).map(|k| k.car_pct).unwrap_or(0.0);
    vec![
        Check {
            name: "parameter-space coverage",
            pass: c.parameter_pct == 100.0,
            detail: format!("{:.1} %", c.parameter_pct),
        },
        Check {
            name: "hazard coverage",
            pass: c.hazard_pct == 100.0,
            detail: format!("{:.1} %", c.hazard_pct),
        },
        Check {
            name: "UCA coverage",
            pass: c.uca_pct == 100.0,
            detail: format!("{:.1} %", c.uca_pct),
        },
        Check {
            name: "EMRM dominance",
            pass: r.dominance_pct == 100.0,
            detail: format!("{:.1} % of cells", r.dominance_pct),
        },
        Check {
            name: "EMRM CAR ≥ baseline CAR",
            pass: r.emrm.car_pct >= base_car,
            detail: format!("{:.1} % vs {:.1} %", r.emrm.car_pct, base_car),
        },
    ]
}
