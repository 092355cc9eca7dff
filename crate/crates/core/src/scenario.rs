//! Scenario files: field, start and goal poses, timed obstacles, noise and
//! controller settings. JSON, SI units, angles in radians.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfmpc::{MpcConfig, MpcMode};
use crate::davg::PlannerConfig;
use crate::geometry::Point2;
use crate::obstacle_map::Obstacle;
use crate::trajectory::{InterpolationParams, Pose};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{msg} at line {line}, column {column}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("unsupported scenario version {0}, expected {SCHEMA_VERSION}")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Playing field spanning `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Field {
    pub width: f64,
    pub height: f64,
}

impl Default for Field {
    fn default() -> Self {
        Self {
            width: 14.0,
            height: 9.0,
        }
    }
}

impl Field {
    pub fn contains(&self, p: Point2) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioObstacle {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Seconds after start when the obstacle becomes visible.
    #[serde(default)]
    pub appear_at: f64,
    /// Meters per second, applied from `appear_at` on.
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl ScenarioObstacle {
    pub fn at(&self, t: f64) -> Option<Obstacle> {
        if t < self.appear_at {
            return None;
        }
        let dt = t - self.appear_at;
        Some(Obstacle {
            id: crate::ObstacleId(self.id),
            center: Point2::new(self.x + self.velocity[0] * dt, self.y + self.velocity[1] * dt),
            radius: self.radius,
        })
    }

    pub fn is_moving(&self) -> bool {
        self.velocity != [0.0, 0.0]
    }
}

/// Standard deviations of the Gaussian pose measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Plant deviation from the controller's model: the applied input is
/// `lag * previous + (1 - lag) * input_scale * command`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mismatch {
    pub input_scale: f64,
    pub lag: f64,
}

impl Default for Mismatch {
    fn default() -> Self {
        Self {
            input_scale: 1.0,
            lag: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub control_dt: f64,
    pub t_max: f64,
    pub goal_tolerance: f64,
    pub heading_tolerance: f64,
    pub replan_period: f64,
    pub cross_track_limit: f64,
    /// Planner inflation on top of the robot radius.
    pub clearance: f64,
    /// Hold the previous command for as many ticks as the solve overran.
    pub real_time: bool,
    pub mismatch: Mismatch,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.1,
            t_max: 60.0,
            goal_tolerance: 0.1,
            heading_tolerance: 0.2,
            replan_period: 1.0,
            cross_track_limit: 0.5,
            clearance: 0.1,
            real_time: false,
            mismatch: Mismatch::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub mode: MpcMode,
    pub mpc: MpcConfig,
    pub interpolation: InterpolationParams,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub field: Field,
    pub start: Pose,
    pub goal: Pose,
    #[serde(default)]
    pub obstacles: Vec<ScenarioObstacle>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

fn finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl Scenario {
    pub fn new(start: Pose, goal: Pose, obstacles: Vec<ScenarioObstacle>) -> Self {
        Self {
            version: SCHEMA_VERSION,
            name: String::new(),
            field: Field::default(),
            start,
            goal,
            obstacles,
            noise: NoiseConfig::default(),
            seed: 0,
            planner: PlannerConfig::default(),
            tracker: TrackerConfig::default(),
            sim: SimConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let sc: Self = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.version != SCHEMA_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        if !(self.field.width > 0.0 && self.field.height > 0.0 && finite(&[self.field.width, self.field.height])) {
            return invalid("field dimensions must be positive".into());
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !finite(&[p.x, p.y, p.theta]) {
                return invalid(format!("{name} pose is not finite"));
            }
            if !self.field.contains(p.position()) {
                return invalid(format!("{name} ({}, {}) is outside the field", p.x, p.y));
            }
        }
        for o in &self.obstacles {
            if !finite(&[o.x, o.y, o.radius, o.appear_at, o.velocity[0], o.velocity[1]]) || o.radius <= 0.0 {
                return invalid(format!("obstacle {} needs a finite position and positive radius", o.id));
            }
            if o.appear_at < 0.0 {
                return invalid(format!("obstacle {} appears before the start", o.id));
            }
        }
        let mut ids: Vec<u32> = self.obstacles.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return invalid("obstacle ids must be unique".into());
        }
        if !finite(&[self.noise.x, self.noise.y, self.noise.theta]) || [self.noise.x, self.noise.y, self.noise.theta].iter().any(|s| *s < 0.0) {
            return invalid("noise deviations must be non-negative".into());
        }
        if !(self.planner.turn_weight >= 0.0) || self.planner.n_sides < 3 {
            return invalid("planner needs a non-negative turn weight and at least 3 sides".into());
        }
        self.tracker
            .mpc
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let ip = self.tracker.interpolation;
        if !(ip.v_nom > 0.0 && ip.omega_nom > 0.0 && ip.dt > 0.0) {
            return invalid("interpolation speeds and dt must be positive".into());
        }
        let s = self.sim;
        if !(s.control_dt > 0.0 && s.t_max > 0.0 && s.goal_tolerance > 0.0 && s.heading_tolerance > 0.0 && s.replan_period > 0.0 && s.cross_track_limit > 0.0 && s.clearance >= 0.0) {
            return invalid("sim timing and tolerances must be positive".into());
        }
        if !(0.0..1.0).contains(&s.mismatch.lag) || !(s.mismatch.input_scale > 0.0) {
            return invalid("mismatch lag must be in [0, 1) and input scale positive".into());
        }
        Ok(())
    }

    /// Obstacles visible at time `t`.
    pub fn obstacles_at(&self, t: f64) -> Vec<Obstacle> {
        self.obstacles.iter().filter_map(|o| o.at(t)).collect()
    }

    /// Random static layout on the default field: start on the left edge,
    /// goal on the right, up to `max_obstacles` disks kept clear of both
    /// endpoints.
    pub fn random(seed: u64, max_obstacles: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = Pose::new(1.0, rng.random_range(1.0..8.0), rng.random_range(-1.0..1.0));
        let goal = Pose::new(13.0, rng.random_range(1.0..8.0), rng.random_range(-1.0..1.0));
        let mut sc = Self::new(start, goal, Vec::new());
        sc.seed = seed;
        let keep_clear = sc.tracker.mpc.robot_radius + sc.sim.clearance + 0.3;
        let n = rng.random_range(0..=max_obstacles);
        let mut id = 0;
        while sc.obstacles.len() < n {
            let radius = rng.random_range(0.2..0.6);
            let c = Point2::new(rng.random_range(2.5..11.5), rng.random_range(0.5..8.5));
            if c.distance(start.position()) < radius + keep_clear || c.distance(goal.position()) < radius + keep_clear {
                continue;
            }
            sc.obstacles.push(ScenarioObstacle {
                id,
                x: c.x,
                y: c.y,
                radius,
                appear_at: 0.0,
                velocity: [0.0, 0.0],
            });
            id += 1;
        }
        sc
    }
}
