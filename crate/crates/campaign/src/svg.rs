//! Hand-written SVG views of sweep and planner output.

use std::fmt::Write as _;

use emrm_sim::rrt::{Mitigability, PlanResult, TreeTag};
use emrm_sim::vehicle::{Scene, VehicleParams};

use crate::sweep::{CellResult, Panel, Param};

pub fn class_color(m: Mitigability) -> &'static str {
    match m {
        Mitigability::FullyAvoidable => "#2ca02c",
        Mitigability::AggressiveAvoidanceRequired => "#f2c500",
        Mitigability::Mitigatable => "#ff7f0e",
        Mitigability::NotMitigatable => "#d62728",
        Mitigability::Infeasible => "#b0b0b0",
    }
}

/// Piecewise-linear viridis approximation, `t` in [0, 1].
pub fn speed_color(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let i = STOPS
        .iter()
        .rposition(|(s, _)| *s <= t)
        .unwrap_or(0)
        .min(STOPS.len() - 2);
    let (t0, c0) = STOPS[i];
    let (t1, c1) = STOPS[i + 1];
    let f = (t - t0) / (t1 - t0);
    let c: Vec<u8> = (0..3).map(|k| (c0[k] + f * (c1[k] - c0[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y0) / (self.y1 - self.y0) * self.height
    }
}

fn padded(min: f64, max: f64, step: f64) -> (f64, f64) {
    let half = if step > 0.0 { step / 2.0 } else { 0.5 };
    (min - half, max + half)
}

/// TTC minus stop-boundary TTC at a panel point; positive means a stop fits.
fn stop_margin(panel: &Panel, template: &Scene, base: &VehicleParams, x: f64, y: f64) -> f64 {
    let get = |p: Param, default: f64| {
        if panel.x.param == p {
            x
        } else if panel.y.param == p {
            y
        } else {
            panel.fixed.get(&p).copied().unwrap_or(default)
        }
    };
    let v = get(Param::SpeedKmh, template.ego.speed_kmh) / 3.6;
    let ttc = get(Param::TtcS, template.ttc);
    let mu = get(Param::Mu, base.mu);
    ttc - v / (2.0 * mu * base.g)
}

/// Boundary polylines in data coordinates, found column by column.
pub fn stop_boundary_polylines(panel: &Panel, template: &Scene, base: &VehicleParams) -> Vec<Vec<(f64, f64)>> {
    const COLUMNS: usize = 240;
    let (y_lo, y_hi) = padded(panel.y.min, panel.y.max, panel.y.step());
    let (x_lo, x_hi) = padded(panel.x.min, panel.x.max, panel.x.step());
    let mut lines = Vec::new();
    let mut current: Vec<(f64, f64)> = Vec::new();
    for i in 0..=COLUMNS {
        let x = x_lo + (x_hi - x_lo) * i as f64 / COLUMNS as f64;
        let f_lo = stop_margin(panel, template, base, x, y_lo);
        let f_hi = stop_margin(panel, template, base, x, y_hi);
        if f_lo.signum() == f_hi.signum() || !f_lo.is_finite() || !f_hi.is_finite() {
            if current.len() > 1 {
                lines.push(std::mem::take(&mut current));
            }
            current.clear();
            continue;
        }
        let (mut a, mut b) = (y_lo, y_hi);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if stop_margin(panel, template, base, x, m).signum() == f_lo.signum() {
                a = m;
            } else {
                b = m;
            }
        }
        current.push((x, 0.5 * (a + b)));
    }
    if current.len() > 1 {
        lines.push(current);
    }
    lines
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

// Roughly six ticks; the last level replaces a regular tick that sits too
// close to it.
fn show_tick(i: usize, n: usize) -> bool {
    if n <= 10 {
        return true;
    }
    let stride = n / 6;
    let last = n - 1;
    if i == last {
        return true;
    }
    i.is_multiple_of(stride) && last - i >= stride / 2
}

pub fn mitigability_heatmap(panel: &Panel, cells: &[&CellResult], template: &Scene, base: &VehicleParams) -> String {
    let (x0, x1) = padded(panel.x.min, panel.x.max, panel.x.step());
    let (y0, y1) = padded(panel.y.min, panel.y.max, panel.y.step());
    let fr = Frame {
        x0,
        x1,
        y0,
        y1,
        left: 70.0,
        top: 40.0,
        width: 520.0,
        height: 420.0,
    };
    let mut s = String::new();
    let w = fr.left + fr.width + 150.0;
    let h = fr.top + fr.height + 60.0;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let fixed: Vec<String> = panel.fixed.iter().map(|(p, v)| format!("{p} = {v}")).collect();
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" font-size="14">panel {}: {}</text>"#,
        fr.left,
        esc(&panel.name),
        esc(&fixed.join(", "))
    );
    let (dx, dy) = (
        if panel.x.levels > 1 { panel.x.step() } else { 1.0 },
        if panel.y.levels > 1 { panel.y.step() } else { 1.0 },
    );
    let xs = panel.x.values();
    let ys = panel.y.values();
    for c in cells {
        let (Some(&x), Some(&y)) = (xs.get(c.cell_x), ys.get(c.cell_y)) else {
            continue;
        };
        let (px0, px1) = (fr.px(x - dx / 2.0), fr.px(x + dx / 2.0));
        let (py0, py1) = (fr.py(y + dy / 2.0), fr.py(y - dy / 2.0));
        let _ = writeln!(
            s,
            r#"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {}</title></rect>"#,
            px1 - px0,
            py1 - py0,
            class_color(c.class),
            c.label(),
            c.class.code()
        );
    }
    for line in stop_boundary_polylines(panel, template, base) {
        let pts: Vec<String> = line
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", fr.px(x), fr.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="white" stroke-width="2.5" stroke-dasharray="8,5"/>"#,
            pts.join(" ")
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        fr.left, fr.top, fr.width, fr.height
    );
    for (i, &x) in xs.iter().enumerate() {
        if show_tick(i, xs.len()) {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                fr.px(x),
                fr.top + fr.height + 16.0,
                trim(x)
            );
        }
    }
    for (j, &y) in ys.iter().enumerate() {
        if show_tick(j, ys.len()) {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                fr.left - 6.0,
                fr.py(y) + 4.0,
                trim(y)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        fr.left + fr.width / 2.0,
        fr.top + fr.height + 38.0,
        esc(panel.x.param.label())
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        fr.top + fr.height / 2.0,
        esc(panel.y.param.label())
    );
    let lx = fr.left + fr.width + 20.0;
    for (k, m) in Mitigability::ALL.iter().enumerate() {
        let ly = fr.top + 10.0 + 24.0 * k as f64;
        let n = cells.iter().filter(|c| c.class == *m).count();
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="14" height="14" fill="{}" stroke="black" stroke-width="0.5"/><text x="{}" y="{}">{} ({n})</text>"#,
            class_color(*m),
            lx + 20.0,
            ly + 11.0,
            m.code()
        );
    }
    let ly = fr.top + 10.0 + 24.0 * Mitigability::ALL.len() as f64;
    let _ = writeln!(
        s,
        r#"<rect x="{lx}" y="{ly}" width="40" height="14" fill="{}"/><line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="white" stroke-width="2.5" stroke-dasharray="8,5"/><text x="{}" y="{}">stop boundary</text>"#,
        class_color(Mitigability::Infeasible),
        ly + 7.0,
        lx + 40.0,
        ly + 7.0,
        lx + 46.0,
        ly + 11.0
    );
    s.push_str("</svg>\n");
    s
}

fn trim(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Top-down render of both planner trees over the junction geometry.
pub fn trajectory_plot(title: &str, scene: &Scene, params: &VehicleParams, plan: &PlanResult) -> String {
    let start = scene.initial_state(params);
    let x0 = start.x - 3.0;
    let x1 = scene.clear_x(params) + 3.0;
    let y0 = scene.kerb_y() - 1.0;
    let y1 = scene.barrier_y() + 1.5;
    let scale = 14.0;
    let fr = Frame {
        x0,
        x1,
        y0,
        y1,
        left: 20.0,
        top: 40.0,
        width: (x1 - x0) * scale,
        height: (y1 - y0) * scale,
    };
    let w = fr.left * 2.0 + fr.width;
    let h = fr.top + fr.height + 50.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}" font-family="sans-serif" font-size="12">"#
    );
    let avoid = if plan.avoidance.is_some() {
        "avoidance found"
    } else {
        "no avoidance"
    };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" font-size="14">{}: {} ({}, label {})</text>"#,
        fr.left,
        esc(title),
        esc(&scene.id),
        avoid,
        plan.label.code()
    );
    // road surface between kerb and barrier
    let _ = writeln!(
        s,
        r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#e6e6e6"/>"##,
        fr.px(x0),
        fr.py(scene.barrier_y()),
        fr.width,
        fr.py(scene.kerb_y()) - fr.py(scene.barrier_y())
    );
    let (tx0, tx1) = (scene.truck_face_x(), scene.truck_face_x() + scene.truck.width);
    let (ty0, ty1) = (scene.kerb_y() - 1.0, scene.truck.edge_offset);
    let _ = writeln!(
        s,
        r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#555" /><text x="{:.1}" y="{:.1}" fill="white">truck</text>"##,
        fr.px(tx0),
        fr.py(ty1),
        fr.px(tx1) - fr.px(tx0),
        fr.py(ty0) - fr.py(ty1),
        fr.px(tx0) + 2.0,
        fr.py(ty1) + 14.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="3"/>"#,
        fr.px(x0),
        fr.py(scene.barrier_y()),
        fr.px(x1),
        fr.py(scene.barrier_y())
    );
    let vmax = start.v.max(1e-6);
    for tree in [&plan.failsafe_tree, &plan.goal_tree] {
        let stroke = match tree.tag {
            TreeTag::Goal => "#2ca02c",
            TreeTag::FailSafe => "#ff7f0e",
        };
        for n in &tree.nodes {
            if let Some(p) = n.parent {
                let a = &tree.nodes[p].state;
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="0.6" stroke-opacity="0.6"/>"#,
                    fr.px(a.x),
                    fr.py(a.y),
                    fr.px(n.state.x),
                    fr.py(n.state.y)
                );
            }
        }
        for n in &tree.nodes {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="{}"/>"#,
                fr.px(n.state.x),
                fr.py(n.state.y),
                speed_color(n.state.v / vmax)
            );
        }
    }
    let path_line = |s: &mut String, pts: &[(f64, f64)], color: &str| {
        let p: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", fr.px(x), fr.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2.5"/>"#,
            p.join(" ")
        );
    };
    let fs: Vec<_> = plan.failsafe.points.iter().map(|p| (p.state.x, p.state.y)).collect();
    path_line(&mut s, &fs, "#c04000");
    if let Some(a) = &plan.avoidance {
        let pts: Vec<_> = a.points.iter().map(|p| (p.state.x, p.state.y)).collect();
        path_line(&mut s, &pts, "#006400");
    }
    let ly = fr.top + fr.height + 20.0;
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{ly}"><tspan fill="#2ca02c">goal tree</tspan>  <tspan fill="#ff7f0e">fail-safe tree</tspan>  nodes coloured by speed (0 to {:.1} m/s)</text>"##,
        fr.left, vmax
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::{Axis, SweepSpec};

    #[test]
    fn colormap_endpoints() {
        assert_eq!(speed_color(0.0), "#440154");
        assert_eq!(speed_color(1.0), "#fde725");
        assert_eq!(speed_color(f64::NAN), "#440154");
    }

    #[test]
    fn boundary_follows_hyperbola() {
        let spec = SweepSpec::standard();
        let panel = spec.panel("b").unwrap();
        let p = VehicleParams::default();
        let lines = stop_boundary_polylines(panel, &Scene::tjunction(50.0, 1.0), &p);
        assert_eq!(lines.len(), 1);
        for &(x, y) in &lines[0] {
            assert!((y - x / 3.6 / (2.0 * p.g)).abs() < 1e-6);
        }
    }

    #[test]
    fn boundary_absent_when_no_crossing() {
        let panel = Panel {
            name: "z".into(),
            x: Axis::new(Param::SpeedKmh, 30.0, 40.0, 3),
            y: Axis::new(Param::TtcS, 2.0, 2.95, 3),
            fixed: Default::default(),
        };
        assert!(stop_boundary_polylines(&panel, &Scene::tjunction(50.0, 1.0), &VehicleParams::default()).is_empty());
    }
}
