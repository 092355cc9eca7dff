//! Closed-loop simulation: plan, interpolate, track, replan.
//!
//! Every tick the truth pose is measured with seeded Gaussian noise, the
//! replan trigger is checked against the obstacles visible at that time,
//! the tracker computes a command, and the truth pose is advanced with the
//! kinematic model. A run is a pure function of the scenario unless
//! real-time mode lets wall-clock solve times drop ticks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::cfmpc::MpcController;
use crate::davg::{plan, PathResult, PlannerConfig};
use crate::dynamics::step;
use crate::geometry::{point_segment_distance, wrap_angle, Point2};
use crate::obstacle_map::{Obstacle, ObstacleId};
use crate::scenario::{Scenario, SimConfig};
use crate::trajectory::{interpolate, BodyInput, Pose, Trajectory};
use crate::Stopwatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "obstacle")]
pub enum Outcome {
    Reached,
    Timeout,
    Collision(ObstacleId),
    Unplannable,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Reached => "reached",
            Self::Timeout => "timeout",
            Self::Collision(_) => "collision",
            Self::Unplannable => "unplannable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "obstacle")]
pub enum ReplanReason {
    Initial,
    Obstacle(ObstacleId),
    CrossTrack,
    Timer,
}

impl ReplanReason {
    pub fn label(&self) -> String {
        match self {
            Self::Initial => "initial".into(),
            Self::Obstacle(id) => format!("obstacle:{}", id.0),
            Self::CrossTrack => "cross_track".into(),
            Self::Timer => "timer".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub t: f64,
    pub truth: Pose,
    pub measured: Pose,
    pub trajectory_id: usize,
    pub command: BodyInput,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub mpc_time: f64,
    pub plan_time: f64,
    pub degraded: bool,
    /// Real-time mode: the previous command was held because a solve overran.
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplanEvent {
    pub t: f64,
    pub reason: ReplanReason,
    /// Id of the trajectory produced, `None` if planning failed.
    pub trajectory_id: Option<usize>,
    pub waypoints: Vec<Point2>,
    pub cost: f64,
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimLog {
    pub ticks: Vec<TickRecord>,
    pub replans: Vec<ReplanEvent>,
    pub outcome: Outcome,
    pub end_time: f64,
    pub final_pose: Pose,
    /// Wall-clock seconds for the whole run.
    pub wall_time: f64,
}

impl SimLog {
    /// Copy with every wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        out.wall_time = 0.0;
        for t in &mut out.ticks {
            t.mpc_time = 0.0;
            t.plan_time = 0.0;
        }
        for r in &mut out.replans {
            r.solve_time = 0.0;
        }
        out
    }

    /// Control ticks per wall-clock second.
    pub fn tick_rate(&self) -> f64 {
        self.ticks.len() as f64 / self.wall_time.max(1e-12)
    }

    pub fn successful_replans(&self) -> impl Iterator<Item = &ReplanEvent> {
        self.replans.iter().filter(|r| r.trajectory_id.is_some())
    }

    /// Per-tick CSV; slacks are `;`-separated in one column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,x,y,theta,meas_x,meas_y,meas_theta,trajectory_id,vx,vy,omega,objective,slacks,mpc_time,plan_time,degraded,held\n",
        );
        for r in &self.ticks {
            let slacks: Vec<String> = r.slacks.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.truth.x,
                r.truth.y,
                r.truth.theta,
                r.measured.x,
                r.measured.y,
                r.measured.theta,
                r.trajectory_id,
                r.command.vx,
                r.command.vy,
                r.command.omega,
                r.objective,
                slacks.join(";"),
                r.mpc_time,
                r.plan_time,
                r.degraded as u8,
                r.held as u8,
            );
        }
        out
    }

    /// Replan CSV; waypoints are `x y` pairs separated by `;`.
    pub fn replans_csv(&self) -> String {
        let mut out = String::from("t,reason,trajectory_id,cost,solve_time,waypoints\n");
        for r in &self.replans {
            let pts: Vec<String> = r.waypoints.iter().map(|p| format!("{} {}", p.x, p.y)).collect();
            let id = r.trajectory_id.map_or(String::new(), |i| i.to_string());
            let _ = writeln!(out, "{},{},{},{},{},{}", r.t, r.reason.label(), id, r.cost, r.solve_time, pts.join(";"));
        }
        out
    }
}

/// Trajectory in use plus what the planner knew when it was made.
#[derive(Debug, Clone)]
pub struct ActivePlan {
    pub id: usize,
    pub t0: f64,
    pub trajectory: Trajectory,
    pub path: PathResult,
    /// Obstacles the plan accounted for, at their positions then.
    pub known: BTreeMap<ObstacleId, Obstacle>,
    /// Time of the last planning attempt, successful or not.
    pub attempted_at: f64,
}

impl ActivePlan {
    fn local_time(&self, t: f64) -> f64 {
        t - self.t0
    }
}

fn polyline_distance(p: Point2, line: &[Point2]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => p.distance(*only),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Whether to replan now, and why.
///
/// Obstacles count when their disk, inflated by `robot_radius`, reaches the
/// remaining reference polyline. Obstacles the current plan already
/// accounted for at the same position are skipped, as are known obstacles
/// whose inflated disk holds the robot, since the plan was made from there.
pub fn replan_trigger(
    pose: Pose,
    active: &ActivePlan,
    obstacles: &[Obstacle],
    robot_radius: f64,
    t: f64,
    cfg: &SimConfig,
) -> Option<ReplanReason> {
    let local = active.local_time(t);
    let remaining = active.trajectory.remaining_polyline(local);
    for o in obstacles {
        let known = active.known.get(&o.id);
        if known == Some(o) {
            continue;
        }
        let r = o.radius + robot_radius;
        if known.is_some() && pose.position().distance(o.center) < r {
            continue;
        }
        if polyline_distance(o.center, &remaining) < r {
            return Some(ReplanReason::Obstacle(o.id));
        }
    }
    if polyline_distance(pose.position(), &active.path.waypoints) > cfg.cross_track_limit {
        return Some(ReplanReason::CrossTrack);
    }
    if t - active.attempted_at >= cfg.replan_period {
        return Some(ReplanReason::Timer);
    }
    None
}

struct PoseNoise {
    rng: ChaCha8Rng,
    x: Normal<f64>,
    y: Normal<f64>,
    theta: Normal<f64>,
}

impl PoseNoise {
    fn new(sc: &Scenario) -> Self {
        let n = |s: f64| Normal::new(0.0, s).expect("validated standard deviation");
        Self {
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            x: n(sc.noise.x),
            y: n(sc.noise.y),
            theta: n(sc.noise.theta),
        }
    }

    fn measure(&mut self, truth: Pose) -> Pose {
        Pose::new(
            truth.x + self.x.sample(&mut self.rng),
            truth.y + self.y.sample(&mut self.rng),
            truth.theta + self.theta.sample(&mut self.rng),
        )
    }
}

/// Planner settings the simulator uses: obstacles are inflated by the robot
/// radius and the configured clearance on top of the scenario's own margin.
pub fn sim_planner_config(sc: &Scenario) -> PlannerConfig {
    PlannerConfig {
        inflation: sc.planner.inflation + sc.tracker.mpc.robot_radius + sc.sim.clearance,
        ..sc.planner
    }
}

fn make_plan(sc: &Scenario, from: Pose, obstacles: &[Obstacle], id: usize, t: f64) -> Result<ActivePlan, crate::PlanError> {
    let path = plan(from, sc.goal, obstacles, &sim_planner_config(sc))?;
    let trajectory = interpolate(&path.waypoints, from.theta, &sc.tracker.interpolation, Some(sc.goal.theta))
        .map_err(|e| crate::PlanError::InvalidInput(e.to_string()))?;
    Ok(ActivePlan {
        id,
        t0: t,
        trajectory,
        path,
        known: obstacles.iter().map(|o| (o.id, *o)).collect(),
        attempted_at: t,
    })
}

fn reached(truth: Pose, goal: Pose, cfg: &SimConfig) -> bool {
    truth.position().distance(goal.position()) <= cfg.goal_tolerance
        && wrap_angle(truth.theta - goal.theta).abs() <= cfg.heading_tolerance
}

/// Runs the scenario to an outcome. Invalid configurations are reported as
/// `Unplannable` with an empty log.
pub fn run(sc: &Scenario) -> SimLog {
    let wall = Stopwatch::start();
    let cfg = sc.sim;
    let dt = cfg.control_dt;
    let robot_radius = sc.tracker.mpc.robot_radius;
    let mut log = SimLog {
        ticks: Vec::new(),
        replans: Vec::new(),
        outcome: Outcome::Timeout,
        end_time: 0.0,
        final_pose: sc.start,
        wall_time: 0.0,
    };
    let Ok(mut controller) = MpcController::new(sc.tracker.mpc, sc.tracker.mode) else {
        log.outcome = Outcome::Unplannable;
        return log;
    };
    let mut noise = PoseNoise::new(sc);
    let mut truth = sc.start;
    let mut active: Option<ActivePlan> = None;
    let mut next_id = 0;
    let mut applied = BodyInput::ZERO;
    let mut held_command = BodyInput::ZERO;
    let mut hold_ticks = 0usize;
    let max_ticks = (cfg.t_max / dt).ceil() as usize;

    for k in 0..=max_ticks {
        let t = k as f64 * dt;
        let obstacles = sc.obstacles_at(t);
        if let Some(o) = obstacles.iter().find(|o| truth.position().distance(o.center) < o.radius) {
            log.outcome = Outcome::Collision(o.id);
            log.end_time = t;
            break;
        }
        if reached(truth, sc.goal, &cfg) {
            log.outcome = Outcome::Reached;
            log.end_time = t;
            break;
        }
        if k == max_ticks {
            log.outcome = Outcome::Timeout;
            log.end_time = t;
            break;
        }
        let measured = noise.measure(truth);

        let reason = match &active {
            None => Some(ReplanReason::Initial),
            Some(a) => replan_trigger(measured, a, &obstacles, robot_radius, t, &cfg),
        };
        let mut plan_time = 0.0;
        if let Some(reason) = reason {
            match make_plan(sc, measured, &obstacles, next_id, t) {
                Ok(p) => {
                    plan_time = p.path.solve_time;
                    log.replans.push(ReplanEvent {
                        t,
                        reason,
                        trajectory_id: Some(p.id),
                        waypoints: p.path.waypoints.clone(),
                        cost: p.path.cost,
                        solve_time: p.path.solve_time,
                    });
                    next_id += 1;
                    active = Some(p);
                }
                Err(_) => {
                    log.replans.push(ReplanEvent {
                        t,
                        reason,
                        trajectory_id: None,
                        waypoints: Vec::new(),
                        cost: f64::INFINITY,
                        solve_time: 0.0,
                    });
                    match &mut active {
                        None => {
                            log.outcome = Outcome::Unplannable;
                            log.end_time = t;
                            break;
                        }
                        // keep the stale plan; only the timer retries
                        Some(a) => {
                            a.attempted_at = t;
                            a.known.extend(obstacles.iter().map(|o| (o.id, *o)));
                        }
                    }
                }
            }
        }
        let a = active.as_ref().expect("a plan exists past the first tick");

        let record_held = cfg.real_time && hold_ticks > 0;
        let (command, mut record) = if record_held {
            hold_ticks -= 1;
            (held_command, None)
        } else {
            let (u, rec) = controller.track_step(measured, a.local_time(t), &a.trajectory, &obstacles);
            (u, Some(rec))
        };
        let mpc_time = record.as_ref().map_or(0.0, |r| r.solve_time);
        let mut effective = command;
        if cfg.real_time {
            let compute = mpc_time + plan_time;
            if compute > dt && !record_held {
                // the new command lands only after the overrun
                hold_ticks = (compute / dt).ceil() as usize - 1;
                effective = held_command;
                held_command = command;
            } else if !record_held {
                held_command = command;
            }
        }

        let m = cfg.mismatch;
        applied = BodyInput::new(
            m.lag * applied.vx + (1.0 - m.lag) * m.input_scale * effective.vx,
            m.lag * applied.vy + (1.0 - m.lag) * m.input_scale * effective.vy,
            m.lag * applied.omega + (1.0 - m.lag) * m.input_scale * effective.omega,
        );
        let rec = record.take();
        log.ticks.push(TickRecord {
            t,
            truth,
            measured,
            trajectory_id: a.id,
            command: effective,
            objective: rec.as_ref().map_or(f64::NAN, |r| r.objective),
            slacks: rec.as_ref().map_or_else(Vec::new, |r| r.slacks.clone()),
            mpc_time,
            plan_time,
            degraded: rec.as_ref().is_some_and(|r| r.degraded),
            held: record_held || effective != command,
        });
        truth = step(truth, applied, dt);
    }
    log.final_pose = truth;
    log.wall_time = wall.elapsed();
    log
}
