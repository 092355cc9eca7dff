//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes a scenario as JSON (same schema as the CLI) and
//! returns a JSON string, so the page needs no generated glue beyond
//! strings. The plain `*_json` functions hold the logic and are what the
//! native tests call.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use pitchplan::cfmpc::MpcSolver;
use pitchplan::davg::plan_with_artifacts;
use pitchplan::scenario::Scenario;
use pitchplan::sim;
use pitchplan::trajectory::{interpolate, reference_window};
use pitchplan::{Point2, Pose};

type Xy = [f64; 2];

fn xy(p: Point2) -> Xy {
    [p.x, p.y]
}

fn parse(text: &str) -> Result<Scenario, String> {
    Scenario::from_json(text).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanScene {
    pub path: Vec<Xy>,
    pub cost: f64,
    pub distance: f64,
    pub total_turn: f64,
    pub solve_ms: f64,
    pub polygons: Vec<Vec<Xy>>,
    /// Indices into `polygons`.
    pub active: Vec<usize>,
    pub region: Vec<Xy>,
    pub nodes: Vec<Xy>,
    pub edges: Vec<[usize; 2]>,
}

/// Plans for the obstacles present at t = 0.
pub fn plan_scene_json(scenario: &str) -> Result<String, String> {
    let sc = parse(scenario)?;
    let obstacles = sc.obstacles_at(0.0);
    let art = plan_with_artifacts(sc.start, sc.goal, &obstacles, &sc.planner).map_err(|e| e.to_string())?;
    let scene = PlanScene {
        path: art.path.waypoints.iter().copied().map(xy).collect(),
        cost: art.path.cost,
        distance: art.path.distance,
        total_turn: art.path.total_turn,
        solve_ms: art.path.solve_time * 1e3,
        polygons: art.polygons.iter().map(|p| p.polygon.vertices().iter().copied().map(xy).collect()).collect(),
        active: art.active.active.clone(),
        region: art.active.region.corners().into_iter().map(xy).collect(),
        nodes: art.graph.nodes.iter().map(|n| xy(n.position)).collect(),
        // both directions are stored; keep one
        edges: art.graph.edges.iter().filter(|e| e.from < e.to).map(|e| [e.from, e.to]).collect(),
    };
    Ok(to_json(&scene))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimTrace {
    pub outcome: String,
    pub end_time: f64,
    /// `[x, y, theta]` per tick plus the final pose.
    pub trace: Vec<[f64; 3]>,
    pub plans: Vec<Vec<Xy>>,
    pub replan_times: Vec<f64>,
    pub max_slack: f64,
    pub mean_mpc_ms: f64,
}

pub fn simulate_json(scenario: &str) -> Result<String, String> {
    let sc = parse(scenario)?;
    let log = sim::run(&sc);
    let mut trace: Vec<[f64; 3]> = log.ticks.iter().map(|t| [t.truth.x, t.truth.y, t.truth.theta]).collect();
    let f = log.final_pose;
    trace.push([f.x, f.y, f.theta]);
    let plans: Vec<_> = log.successful_replans().collect();
    let n = log.ticks.len().max(1) as f64;
    let out = SimTrace {
        outcome: log.outcome.label().into(),
        end_time: log.end_time,
        trace,
        plans: plans.iter().map(|r| r.waypoints.iter().copied().map(xy).collect()).collect(),
        replan_times: plans.iter().map(|r| r.t).collect(),
        max_slack: log.ticks.iter().flat_map(|t| t.slacks.iter().copied()).fold(0.0, f64::max),
        mean_mpc_ms: log.ticks.iter().map(|t| t.mpc_time).sum::<f64>() / n * 1e3,
    };
    Ok(to_json(&out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MpcPreview {
    pub reference: Vec<Xy>,
    pub predicted: Vec<[f64; 3]>,
    pub command: [f64; 3],
    pub slacks: Vec<f64>,
    pub objective: f64,
    pub solve_ms: f64,
    pub degraded: bool,
}

/// One controller solve from `pose`, tracking the plan from the scenario
/// start sampled at time `t`.
pub fn mpc_preview_json(scenario: &str, x: f64, y: f64, theta: f64, t: f64) -> Result<String, String> {
    let sc = parse(scenario)?;
    let obstacles = sc.obstacles_at(t);
    let path = pitchplan::plan(sc.start, sc.goal, &sc.obstacles_at(0.0), &sim::sim_planner_config(&sc))
        .map_err(|e| e.to_string())?;
    let traj = interpolate(&path.waypoints, sc.start.theta, &sc.tracker.interpolation, Some(sc.goal.theta))
        .map_err(|e| e.to_string())?;
    let cfg = sc.tracker.mpc;
    let window = reference_window(&traj, t, cfg.horizon, cfg.dt);
    let mut solver = MpcSolver::new(cfg).map_err(|e| e.to_string())?;
    let sol = solver.solve(sc.tracker.mode, Pose::new(x, y, theta), &window, &obstacles);
    let u = sol.inputs.first().copied().unwrap_or_default();
    let out = MpcPreview {
        reference: window.states.iter().map(|p| [p.x, p.y]).collect(),
        predicted: sol.states.iter().map(|p| [p.x, p.y, p.theta]).collect(),
        command: [u.vx, u.vy, u.omega],
        slacks: sol.slacks,
        objective: sol.objective,
        solve_ms: sol.solve_time * 1e3,
        degraded: sol.degraded,
    };
    Ok(to_json(&out))
}

#[wasm_bindgen]
pub fn plan_scene(scenario: &str) -> Result<String, JsError> {
    plan_scene_json(scenario).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(scenario: &str) -> Result<String, JsError> {
    simulate_json(scenario).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn mpc_preview(scenario: &str, x: f64, y: f64, theta: f64, t: f64) -> Result<String, JsError> {
    mpc_preview_json(scenario, x, y, theta, t).map_err(|e| JsError::new(&e))
}
