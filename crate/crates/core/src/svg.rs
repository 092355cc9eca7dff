//! Plain SVG plots of the field, obstacles, planned paths and sim traces.

use std::fmt::Write as _;

use crate::davg::PlanArtifacts;
use crate::geometry::Point2;
use crate::obstacle_map::Obstacle;
use crate::scenario::{Field, Scenario};
use crate::sim::SimLog;

const PX_PER_M: f64 = 50.0;
const MARGIN: f64 = 10.0;

pub const OLD_PATH_COLOR: &str = "#1f5fd6";
pub const NEW_PATH_COLOR: &str = "#d62728";

/// Minimal SVG writer in field coordinates (meters, y up).
pub struct SvgCanvas {
    field: Field,
    body: String,
}

impl SvgCanvas {
    pub fn new(field: Field) -> Self {
        let mut c = Self {
            field,
            body: String::new(),
        };
        let (w, h) = (field.width * PX_PER_M, field.height * PX_PER_M);
        let _ = writeln!(
            c.body,
            r##"<rect x="{MARGIN}" y="{MARGIN}" width="{w}" height="{h}" fill="#eef6ea" stroke="#555" stroke-width="1"/>"##
        );
        c
    }

    fn px(&self, p: Point2) -> (f64, f64) {
        (MARGIN + p.x * PX_PER_M, MARGIN + (self.field.height - p.y) * PX_PER_M)
    }

    pub fn disk(&mut self, center: Point2, radius: f64, fill: &str, opacity: f64) {
        let (x, y) = self.px(center);
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="{fill}" fill-opacity="{opacity}"/>"#,
            radius * PX_PER_M
        );
    }

    pub fn polygon(&mut self, pts: &[Point2], stroke: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="none" stroke="{stroke}" stroke-width="1"/>"#,
            coords.join(" ")
        );
    }

    pub fn polyline(&mut self, pts: &[Point2], stroke: &str, width: f64, dash: Option<&str>) {
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let dash = dash.map_or(String::new(), |d| format!(r#" stroke-dasharray="{d}""#));
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"{dash}/>"#,
            coords.join(" ")
        );
    }

    /// Path drawn as dots spaced `spacing` meters apart along its segments.
    pub fn dotted_path(&mut self, pts: &[Point2], color: &str, spacing: f64) {
        for w in pts.windows(2) {
            let len = w[0].distance(w[1]);
            let n = (len / spacing).ceil().max(1.0) as usize;
            for i in 0..n {
                let (x, y) = self.px(w[0].lerp(w[1], i as f64 / n as f64));
                let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
            }
        }
        if let Some(last) = pts.last() {
            let (x, y) = self.px(*last);
            let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
        }
    }

    pub fn marker(&mut self, p: Point2, color: &str, label: &str) {
        let (x, y) = self.px(p);
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">{label}</text>"#,
            x + 7.0,
            y - 7.0
        );
    }

    pub fn finish(self) -> String {
        let w = self.field.width * PX_PER_M + 2.0 * MARGIN;
        let h = self.field.height * PX_PER_M + 2.0 * MARGIN;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body
        )
    }
}

fn draw_obstacles(c: &mut SvgCanvas, obstacles: &[Obstacle]) {
    for o in obstacles {
        c.disk(o.center, o.radius, "#444", 0.6);
    }
}

/// Plan figure: obstacles, polygon proxies (active ones highlighted), the
/// active region, and the chosen path.
pub fn plan_svg(sc: &Scenario, obstacles: &[Obstacle], art: &PlanArtifacts) -> String {
    let mut c = SvgCanvas::new(sc.field);
    draw_obstacles(&mut c, obstacles);
    for (i, p) in art.polygons.iter().enumerate() {
        let color = if art.active.active.contains(&i) { "#e08a00" } else { "#999" };
        c.polygon(p.polygon.vertices(), color);
    }
    if !art.path.waypoints.is_empty() && art.path.waypoints.len() > 1 {
        c.polygon(&art.active.region.corners(), "#7a4bc2");
    }
    c.polyline(&art.path.waypoints, NEW_PATH_COLOR, 2.0, None);
    c.dotted_path(&art.path.waypoints, NEW_PATH_COLOR, 0.2);
    c.marker(sc.start.position(), "#2ca02c", "S");
    c.marker(sc.goal.position(), "#000", "G");
    c.finish()
}

/// Sim figure: every obstacle as seen at the end of the run, earlier plans
/// as blue dots, the last plan as red dots, and the true trace.
pub fn sim_svg(sc: &Scenario, log: &SimLog) -> String {
    let mut c = SvgCanvas::new(sc.field);
    draw_obstacles(&mut c, &sc.obstacles_at(log.end_time));
    let plans: Vec<_> = log.successful_replans().collect();
    if let Some((last, older)) = plans.split_last() {
        for p in older {
            c.dotted_path(&p.waypoints, OLD_PATH_COLOR, 0.25);
        }
        c.dotted_path(&last.waypoints, NEW_PATH_COLOR, 0.25);
    }
    let mut trace: Vec<Point2> = log.ticks.iter().map(|t| t.truth.position()).collect();
    trace.push(log.final_pose.position());
    c.polyline(&trace, "#111", 1.5, Some("4 2"));
    c.marker(sc.start.position(), "#2ca02c", "S");
    c.marker(sc.goal.position(), "#000", "G");
    c.finish()
}
