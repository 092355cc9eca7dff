//! Collision-free model predictive tracking.
//!
//! Both controllers share one formulation: quadratic tracking cost on the
//! state and input deviation from the reference window, box input limits,
//! and one keep-out constraint per horizon step and obstacle, softened by
//! non-negative slacks with a quadratic penalty. The rows exist whether or
//! not an obstacle is near, so the QP shape only depends on the horizon and
//! the obstacle count.
//!
//! The linear variant linearizes dynamics and constraints once about the
//! reference. The nonlinear variant iterates in input space: roll out the
//! current inputs, linearize about the rollout, solve a QP for the step,
//! repeat.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Stopwatch;
use crate::dynamics::{input_vec, linearize, step};
use crate::geometry::{wrap_angle, Point2};
use crate::obstacle_map::Obstacle;
use crate::qp::{QpProblem, QpSettings, QpStatus, QpWorkspace, WarmStart};
use crate::trajectory::{reference_window, BodyInput, Pose, ReferenceWindow, Trajectory};

/// Normals shorter than this are treated as undefined.
const MIN_NORMAL: f64 = 1e-9;
/// Allowed violation of the circular constraint beyond its slack.
const FEASIBILITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlackMode {
    /// One slack per obstacle shared across the horizon.
    #[default]
    PerObstacle,
    /// One slack per horizon step and obstacle.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpcMode {
    #[default]
    Linear,
    Nonlinear,
}

impl FromStr for MpcMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "nonlinear" => Ok(Self::Nonlinear),
            other => Err(format!("unknown mode {other:?}, expected linear or nonlinear")),
        }
    }
}

impl fmt::Display for MpcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Nonlinear => "nonlinear",
        })
    }
}

/// Closed intervals `[min, max]` per input channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputLimits {
    pub vx: [f64; 2],
    pub vy: [f64; 2],
    pub omega: [f64; 2],
}

impl Default for InputLimits {
    fn default() -> Self {
        Self {
            vx: [-0.5, 2.0],
            vy: [-1.0, 1.0],
            omega: [-2.0, 2.0],
        }
    }
}

impl InputLimits {
    pub fn lower(&self) -> Vector3<f64> {
        Vector3::new(self.vx[0], self.vy[0], self.omega[0])
    }

    pub fn upper(&self) -> Vector3<f64> {
        Vector3::new(self.vx[1], self.vy[1], self.omega[1])
    }

    pub fn clamp(&self, u: BodyInput) -> BodyInput {
        BodyInput::new(
            u.vx.clamp(self.vx[0], self.vx[1]),
            u.vy.clamp(self.vy[0], self.vy[1]),
            u.omega.clamp(self.omega[0], self.omega[1]),
        )
    }

    pub fn contains(&self, u: BodyInput, tol: f64) -> bool {
        let (lo, hi) = (self.lower(), self.upper());
        u.as_array()
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= lo[i] - tol && *v <= hi[i] + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqpSettings {
    pub max_iter: usize,
    pub step_tol: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iter: 20,
            step_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal of the state weight (x, y, theta).
    pub q: [f64; 3],
    /// Diagonal of the input-deviation weight (vx, vy, omega).
    pub r: [f64; 3],
    pub slack_weight: f64,
    pub limits: InputLimits,
    pub robot_radius: f64,
    pub slack_mode: SlackMode,
    pub sqp: SqpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.25,
            q: [10.0, 10.0, 4.0],
            r: [1.0, 1.0, 1.0],
            slack_weight: 100.0,
            limits: InputLimits::default(),
            robot_radius: 0.2,
            slack_mode: SlackMode::PerObstacle,
            sqp: SqpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |msg: String| Err(MpcError::InvalidConfig(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.q.iter().chain(&self.r).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weights must be finite and non-negative".into());
        }
        if !(self.slack_weight > 0.0 && self.slack_weight.is_finite()) {
            return bad("slack weight must be positive".into());
        }
        if !(self.robot_radius >= 0.0 && self.robot_radius.is_finite()) {
            return bad("robot radius must be non-negative".into());
        }
        for (name, [lo, hi]) in [("vx", self.limits.vx), ("vy", self.limits.vy), ("omega", self.limits.omega)] {
            if !(lo <= 0.0 && 0.0 <= hi && lo.is_finite() && hi.is_finite()) {
                return bad(format!("{name} limits [{lo}, {hi}] must be finite and contain zero"));
            }
        }
        if self.sqp.max_iter == 0 || !(self.sqp.step_tol > 0.0) {
            return bad("sqp needs max_iter >= 1 and a positive step tolerance".into());
        }
        Ok(())
    }

    pub fn effective_radius(&self, obs: &Obstacle) -> f64 {
        obs.radius + self.robot_radius
    }
}

/// Half-plane `normal . (p_k - center) + delta >= offset` for one step and
/// obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearCollisionConstraint {
    pub step: usize,
    pub obstacle: usize,
    /// Unit normal of the supporting half-plane.
    pub normal: Point2,
    pub offset: f64,
}

/// Normal of the supporting half-plane of the keep-out disk around `c`,
/// linearized at `p` for a robot traveling along `heading`.
///
/// Outside the disk this is the radial direction, which gives the tangent
/// plane. Inside, the radial direction can point along the path and block
/// it, so the normal is taken sideways, on the side `p` already is.
/// `None` when `p` is on the center.
pub fn keep_out_normal(p: Point2, c: Point2, heading: f64, r_eff: f64) -> Option<Point2> {
    let v = p - c;
    let d = v.norm();
    if d <= MIN_NORMAL {
        return None;
    }
    if d >= r_eff {
        return Some(v * (1.0 / d));
    }
    let left = Point2::from_polar(1.0, heading).perp();
    Some(if v.dot(left) >= 0.0 { left } else { -left })
}

/// Keep-out constraints at the reference positions `X_r[1..=N]`. Pairs
/// whose reference point sits on the obstacle center are omitted.
pub fn tangent_constraints(window: &ReferenceWindow, obstacles: &[Obstacle], cfg: &MpcConfig) -> Vec<LinearCollisionConstraint> {
    let mut out = Vec::new();
    for k in 1..=window.horizon() {
        let r = window.states[k];
        for (j, o) in obstacles.iter().enumerate() {
            let re = cfg.effective_radius(o);
            if let Some(normal) = keep_out_normal(r.position(), o.center, r.theta, re) {
                out.push(LinearCollisionConstraint {
                    step: k,
                    obstacle: j,
                    normal,
                    offset: re,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcSolution {
    /// Predicted states `X[1..=N]`.
    pub states: Vec<Pose>,
    pub inputs: Vec<BodyInput>,
    /// Slacks in the layout selected by [`SlackMode`]. Meters for the
    /// linear controller, squared meters for the nonlinear one.
    pub slacks: Vec<f64>,
    pub objective: f64,
    pub solve_time: f64,
    pub status: QpStatus,
    pub degraded: bool,
    pub qp_iterations: usize,
    pub sqp_iterations: usize,
    /// Constraint rows left vacuous because the linearization point was on
    /// an obstacle center.
    pub dropped_constraints: usize,
}

/// Index layout of the decision vector and constraint rows.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    horizon: usize,
    n_obs: usize,
    per_step: bool,
}

impl Layout {
    fn new(horizon: usize, n_obs: usize, mode: SlackMode) -> Self {
        Self {
            horizon,
            n_obs,
            per_step: mode == SlackMode::PerStep,
        }
    }

    fn n_slack(&self) -> usize {
        if self.per_step {
            self.horizon * self.n_obs
        } else {
            self.n_obs
        }
    }

    fn n_vars(&self) -> usize {
        6 * self.horizon + self.n_slack()
    }

    fn n_rows(&self) -> usize {
        6 * self.horizon + self.horizon * self.n_obs + self.n_slack()
    }

    /// State block of step `k` in `1..=N`.
    fn x(&self, k: usize) -> usize {
        3 * (k - 1)
    }

    /// Input block of step `k` in `0..N`.
    fn u(&self, k: usize) -> usize {
        3 * self.horizon + 3 * k
    }

    fn slack(&self, k: usize, j: usize) -> usize {
        6 * self.horizon
            + if self.per_step {
                (k - 1) * self.n_obs + j
            } else {
                j
            }
    }

    fn dyn_row(&self, k: usize) -> usize {
        3 * k
    }

    fn input_row(&self, k: usize) -> usize {
        3 * self.horizon + 3 * k
    }

    fn coll_row(&self, k: usize, j: usize) -> usize {
        6 * self.horizon + (k - 1) * self.n_obs + j
    }

    fn slack_row(&self, s: usize) -> usize {
        6 * self.horizon + self.horizon * self.n_obs + s
    }
}

/// State difference with wrapped heading.
fn state_error(x: Pose, r: Pose) -> Vector3<f64> {
    Vector3::new(x.x - r.x, x.y - r.y, wrap_angle(x.theta - r.theta))
}

fn cost_matrix(layout: &Layout, cfg: &MpcConfig) -> DMatrix<f64> {
    let n = layout.n_vars();
    let mut p = DMatrix::zeros(n, n);
    for k in 1..=layout.horizon {
        for i in 0..3 {
            p[(layout.x(k) + i, layout.x(k) + i)] = 2.0 * cfg.q[i];
            p[(layout.u(k - 1) + i, layout.u(k - 1) + i)] = 2.0 * cfg.r[i];
        }
    }
    for s in 0..layout.n_slack() {
        let i = 6 * layout.horizon + s;
        p[(i, i)] = 2.0 * cfg.slack_weight;
    }
    p
}

/// Shared skeleton: dynamics rows `dx_{k+1} - A_k dx_k - B_k du_k = b_k`,
/// input boxes, slack non-negativity. Collision rows start vacuous.
fn skeleton(
    layout: &Layout,
    jac: &[(Matrix3<f64>, Matrix3<f64>)],
    dyn_rhs: &[Vector3<f64>],
    input_lo: &[Vector3<f64>],
    input_hi: &[Vector3<f64>],
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let (n, m) = (layout.n_vars(), layout.n_rows());
    let mut a = DMatrix::zeros(m, n);
    let mut l = DVector::from_element(m, f64::NEG_INFINITY);
    let mut u = DVector::from_element(m, f64::INFINITY);
    for k in 0..layout.horizon {
        let row = layout.dyn_row(k);
        let (ak, bk) = &jac[k];
        for i in 0..3 {
            a[(row + i, layout.x(k + 1) + i)] = 1.0;
            for j in 0..3 {
                if k > 0 {
                    a[(row + i, layout.x(k) + j)] = -ak[(i, j)];
                }
                a[(row + i, layout.u(k) + j)] = -bk[(i, j)];
            }
            l[row + i] = dyn_rhs[k][i];
            u[row + i] = dyn_rhs[k][i];
        }
        let row = layout.input_row(k);
        for i in 0..3 {
            a[(row + i, layout.u(k) + i)] = 1.0;
            l[row + i] = input_lo[k][i];
            u[row + i] = input_hi[k][i];
        }
    }
    for s in 0..layout.n_slack() {
        let row = layout.slack_row(s);
        a[(row, 6 * layout.horizon + s)] = 1.0;
        l[row] = 0.0;
    }
    (a, l, u)
}

/// LMPC as a QP over `[dx_1..dx_N, du_0..du_{N-1}, slacks]`, where
/// `dx_k = X_k - X_r[k]` and `du_k = u_k - u_r[k]`.
pub fn build_lmpc(x0: Pose, window: &ReferenceWindow, obstacles: &[Obstacle], cfg: &MpcConfig) -> (QpProblem, usize) {
    let layout = Layout::new(window.horizon(), obstacles.len(), cfg.slack_mode);
    let jac: Vec<_> = (0..layout.horizon)
        .map(|k| {
            let lin = linearize(window.states[k], window.inputs[k], window.dt);
            (lin.a, lin.b)
        })
        .collect();
    let mut dyn_rhs = vec![Vector3::zeros(); layout.horizon];
    dyn_rhs[0] = jac[0].0 * state_error(x0, window.states[0]);
    let (lo, hi) = (cfg.limits.lower(), cfg.limits.upper());
    let input_lo: Vec<_> = window.inputs.iter().map(|u| lo - input_vec(*u)).collect();
    let input_hi: Vec<_> = window.inputs.iter().map(|u| hi - input_vec(*u)).collect();
    let (mut a, mut l, u) = skeleton(&layout, &jac, &dyn_rhs, &input_lo, &input_hi);

    let constraints = tangent_constraints(window, obstacles, cfg);
    let dropped = layout.horizon * layout.n_obs - constraints.len();
    for c in &constraints {
        let (k, j) = (c.step, c.obstacle);
        let row = layout.coll_row(k, j);
        a[(row, layout.x(k))] = c.normal.x;
        a[(row, layout.x(k) + 1)] = c.normal.y;
        a[(row, layout.slack(k, j))] = 1.0;
        l[row] = c.offset - c.normal.dot(window.states[k].position() - obstacles[j].center);
    }
    let p = cost_matrix(&layout, cfg);
    let q = DVector::zeros(layout.n_vars());
    let prob = QpProblem::new(p, q, a, l, u).expect("LMPC problem is well formed");
    (prob, dropped)
}

/// Tracking cost of a candidate: state error over steps `1..=N`, input
/// deviation, and the slack penalty.
pub fn mpc_objective(window: &ReferenceWindow, states: &[Pose], inputs: &[BodyInput], slacks: &[f64], cfg: &MpcConfig) -> f64 {
    let mut j = 0.0;
    for (k, x) in states.iter().enumerate() {
        let e = state_error(*x, window.states[k + 1]);
        j += (0..3).map(|i| cfg.q[i] * e[i] * e[i]).sum::<f64>();
    }
    for (k, u) in inputs.iter().enumerate() {
        let e = input_vec(*u) - input_vec(window.inputs[k]);
        j += (0..3).map(|i| cfg.r[i] * e[i] * e[i]).sum::<f64>();
    }
    j + cfg.slack_weight * slacks.iter().map(|s| s * s).sum::<f64>()
}

/// Moves every per-step block one step earlier and repeats the last one.
fn shift_blocks(v: &mut DVector<f64>, start: usize, block: usize, count: usize) {
    if count < 2 || block == 0 {
        return;
    }
    for b in 0..count - 1 {
        for i in 0..block {
            v[start + b * block + i] = v[start + (b + 1) * block + i];
        }
    }
}

fn shift_warm(w: &WarmStart, layout: &Layout) -> WarmStart {
    let (h, n_obs) = (layout.horizon, layout.n_obs);
    let mut x = w.x.clone();
    shift_blocks(&mut x, 0, 3, h);
    shift_blocks(&mut x, 3 * h, 3, h);
    if layout.per_step {
        shift_blocks(&mut x, 6 * h, n_obs, h);
    }
    let mut y = w.y.clone();
    shift_blocks(&mut y, 0, 3, h);
    shift_blocks(&mut y, 3 * h, 3, h);
    shift_blocks(&mut y, 6 * h, n_obs, h);
    if layout.per_step {
        shift_blocks(&mut y, layout.slack_row(0), n_obs, h);
    }
    WarmStart { x, y }
}

fn finite_solution(x: &DVector<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Stateful solver: owns the QP workspace and the warm-start memory.
#[derive(Debug)]
pub struct MpcSolver {
    pub cfg: MpcConfig,
    ws: QpWorkspace,
    warm: Option<(Layout, WarmStart)>,
    warm_inputs: Option<Vec<BodyInput>>,
}

impl MpcSolver {
    pub fn new(cfg: MpcConfig) -> Result<Self, MpcError> {
        Self::with_qp_settings(cfg, QpSettings::default())
    }

    pub fn with_qp_settings(cfg: MpcConfig, qp: QpSettings) -> Result<Self, MpcError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            ws: QpWorkspace::new(qp),
            warm: None,
            warm_inputs: None,
        })
    }

    /// Forgets warm-start data.
    pub fn reset(&mut self) {
        self.warm = None;
        self.warm_inputs = None;
        self.ws.reset();
    }

    fn warm_for(&self, layout: &Layout) -> Option<WarmStart> {
        match &self.warm {
            Some((l, w)) if l == layout => Some(shift_warm(w, layout)),
            _ => None,
        }
    }

    pub fn solve_lmpc(&mut self, x0: Pose, window: &ReferenceWindow, obstacles: &[Obstacle]) -> MpcSolution {
        let clock = Stopwatch::start();
        let cfg = self.cfg;
        let layout = Layout::new(window.horizon(), obstacles.len(), cfg.slack_mode);
        let (prob, dropped) = build_lmpc(x0, window, obstacles, &cfg);
        let warm = self.warm_for(&layout);
        let sol = self.ws.solve(&prob, warm.as_ref());

        let mut states = Vec::with_capacity(layout.horizon);
        let mut inputs = Vec::with_capacity(layout.horizon);
        for k in 0..layout.horizon {
            let r = window.states[k + 1];
            let i = layout.x(k + 1);
            states.push(Pose::new(r.x + sol.x[i], r.y + sol.x[i + 1], r.theta + sol.x[i + 2]));
            let ur = window.inputs[k];
            let i = layout.u(k);
            inputs.push(cfg.limits.clamp(BodyInput::new(
                ur.vx + sol.x[i],
                ur.vy + sol.x[i + 1],
                ur.omega + sol.x[i + 2],
            )));
        }
        let slacks: Vec<f64> = (0..layout.n_slack())
            .map(|s| sol.x[6 * layout.horizon + s].max(0.0))
            .collect();
        let ok = sol.status != QpStatus::PrimalInfeasible && finite_solution(&sol.x);
        if ok {
            self.warm = Some((layout, WarmStart { x: sol.x.clone(), y: sol.y.clone() }));
        } else {
            self.warm = None;
        }
        self.warm_inputs = None;
        MpcSolution {
            objective: mpc_objective(window, &states, &inputs, &slacks, &cfg),
            states,
            inputs,
            slacks,
            solve_time: clock.elapsed(),
            status: sol.status,
            degraded: !ok || sol.status != QpStatus::Solved,
            qp_iterations: sol.iterations,
            sqp_iterations: 1,
            dropped_constraints: dropped,
        }
    }

    pub fn solve_nmpc(&mut self, x0: Pose, window: &ReferenceWindow, obstacles: &[Obstacle]) -> MpcSolution {
        let clock = Stopwatch::start();
        let cfg = self.cfg;
        let horizon = window.horizon();
        let layout = Layout::new(horizon, obstacles.len(), cfg.slack_mode);
        let dt = window.dt;

        let mut inputs: Vec<BodyInput> = match &self.warm_inputs {
            Some(prev) if prev.len() == horizon => {
                let mut u: Vec<BodyInput> = prev[1..].to_vec();
                u.push(window.inputs[horizon - 1]);
                u
            }
            _ => window.inputs.clone(),
        };
        let mut states = rollout(x0, &inputs, dt);
        let p = cost_matrix(&layout, &cfg);
        let (lo, hi) = (cfg.limits.lower(), cfg.limits.upper());
        let mut slacks = vec![0.0; layout.n_slack()];
        let mut status = QpStatus::Solved;
        let mut qp_iterations = 0;
        let mut sqp_iterations = 0;
        let mut dropped = 0;
        let mut failed = false;
        let mut warm: Option<WarmStart> = None;

        for _ in 0..cfg.sqp.max_iter {
            sqp_iterations += 1;
            // states[k] is X_k for k in 0..=N
            let jac: Vec<_> = (0..horizon)
                .map(|k| {
                    let lin = linearize(states[k], inputs[k], dt);
                    (lin.a, lin.b)
                })
                .collect();
            let dyn_rhs = vec![Vector3::zeros(); horizon];
            let input_lo: Vec<_> = inputs.iter().map(|u| lo - input_vec(*u)).collect();
            let input_hi: Vec<_> = inputs.iter().map(|u| hi - input_vec(*u)).collect();
            let (mut a, mut l, u) = skeleton(&layout, &jac, &dyn_rhs, &input_lo, &input_hi);
            let mut q = DVector::zeros(layout.n_vars());
            for k in 1..=horizon {
                let e = state_error(states[k], window.states[k]);
                let du = input_vec(inputs[k - 1]) - input_vec(window.inputs[k - 1]);
                for i in 0..3 {
                    q[layout.x(k) + i] = 2.0 * cfg.q[i] * e[i];
                    q[layout.u(k - 1) + i] = 2.0 * cfg.r[i] * du[i];
                }
            }
            dropped = 0;
            for k in 1..=horizon {
                let pk = states[k].position();
                for (j, o) in obstacles.iter().enumerate() {
                    let re = cfg.effective_radius(o);
                    let Some(n) = keep_out_normal(pk, o.center, window.states[k].theta, re) else {
                        dropped += 1;
                        continue;
                    };
                    let v = pk - o.center;
                    let d = v.norm();
                    let row = layout.coll_row(k, j);
                    a[(row, layout.x(k))] = n.x;
                    a[(row, layout.x(k) + 1)] = n.y;
                    if d >= re {
                        // |p - c|^2 + delta >= R^2, linearized and divided by 2d
                        a[(row, layout.slack(k, j))] = 1.0 / (2.0 * d);
                        l[row] = (re * re - d * d) / (2.0 * d);
                    } else {
                        // sideways half-plane; delta / 2R is its slack in meters
                        a[(row, layout.slack(k, j))] = 1.0 / (2.0 * re);
                        l[row] = re - n.dot(v);
                    }
                }
            }
            let prob = QpProblem::new(p.clone(), q, a, l, u).expect("SQP subproblem is well formed");
            let sol = self.ws.solve(&prob, warm.as_ref());
            qp_iterations += sol.iterations;
            status = sol.status;
            if status == QpStatus::PrimalInfeasible || !finite_solution(&sol.x) {
                failed = true;
                break;
            }
            let mut step_norm: f64 = 0.0;
            for k in 0..horizon {
                let i = layout.u(k);
                let du = Vector3::new(sol.x[i], sol.x[i + 1], sol.x[i + 2]);
                let dx = Vector3::new(sol.x[layout.x(k + 1)], sol.x[layout.x(k + 1) + 1], sol.x[layout.x(k + 1) + 2]);
                step_norm = step_norm.max(du.amax()).max(dx.amax());
                inputs[k] = cfg.limits.clamp(BodyInput::new(
                    inputs[k].vx + du[0],
                    inputs[k].vy + du[1],
                    inputs[k].omega + du[2],
                ));
            }
            for (s, v) in slacks.iter_mut().enumerate() {
                *v = sol.x[6 * horizon + s].max(0.0);
            }
            states = rollout(x0, &inputs, dt);
            warm = Some(WarmStart {
                x: DVector::zeros(layout.n_vars()),
                y: sol.y.clone(),
            });
            if step_norm < cfg.sqp.step_tol {
                break;
            }
        }

        let mut degraded = failed || status != QpStatus::Solved;
        if !failed {
            for k in 1..=horizon {
                for (j, o) in obstacles.iter().enumerate() {
                    let re = cfg.effective_radius(o);
                    let d2 = (states[k].position() - o.center).norm().powi(2);
                    if d2 + slacks[layout.slack(k, j) - 6 * horizon] < re * re - FEASIBILITY_TOL {
                        degraded = true;
                    }
                }
            }
        }
        self.warm = None;
        self.warm_inputs = if failed { None } else { Some(inputs.clone()) };
        let predicted = states[1..].to_vec();
        MpcSolution {
            objective: mpc_objective(window, &predicted, &inputs, &slacks, &cfg),
            states: predicted,
            inputs,
            slacks,
            solve_time: clock.elapsed(),
            status,
            degraded,
            qp_iterations,
            sqp_iterations,
            dropped_constraints: dropped,
        }
    }

    pub fn solve(&mut self, mode: MpcMode, x0: Pose, window: &ReferenceWindow, obstacles: &[Obstacle]) -> MpcSolution {
        match mode {
            MpcMode::Linear => self.solve_lmpc(x0, window, obstacles),
            MpcMode::Nonlinear => self.solve_nmpc(x0, window, obstacles),
        }
    }
}

/// States `X_0..=X_N` from applying `inputs` to `x0`.
pub fn rollout(x0: Pose, inputs: &[BodyInput], dt: f64) -> Vec<Pose> {
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(x0);
    let mut x = x0;
    for u in inputs {
        x = step(x, *u, dt);
        out.push(x);
    }
    out
}

pub fn solve_lmpc(x0: Pose, window: &ReferenceWindow, obstacles: &[Obstacle], cfg: &MpcConfig) -> Result<MpcSolution, MpcError> {
    Ok(MpcSolver::new(*cfg)?.solve_lmpc(x0, window, obstacles))
}

pub fn solve_nmpc(x0: Pose, window: &ReferenceWindow, obstacles: &[Obstacle], cfg: &MpcConfig) -> Result<MpcSolution, MpcError> {
    Ok(MpcSolver::new(*cfg)?.solve_nmpc(x0, window, obstacles))
}

/// One control tick as logged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub measured: Pose,
    pub command: BodyInput,
    pub objective: f64,
    pub slacks: Vec<f64>,
    pub solve_time: f64,
    pub degraded: bool,
    pub qp_iterations: usize,
}

/// Receding-horizon tracker around an [`MpcSolver`].
#[derive(Debug)]
pub struct MpcController {
    pub mode: MpcMode,
    solver: MpcSolver,
    last: Option<MpcSolution>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, mode: MpcMode) -> Result<Self, MpcError> {
        Ok(Self {
            mode,
            solver: MpcSolver::new(cfg)?,
            last: None,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.solver.cfg
    }

    pub fn last_solution(&self) -> Option<&MpcSolution> {
        self.last.as_ref()
    }

    pub fn reset(&mut self) {
        self.solver.reset();
        self.last = None;
    }

    /// Solves for the window starting at `t` and returns the first input.
    /// A failed solve yields a zero command and clears the warm start.
    pub fn track_step(&mut self, measured: Pose, t: f64, traj: &Trajectory, obstacles: &[Obstacle]) -> (BodyInput, StepRecord) {
        let cfg = self.solver.cfg;
        let window = reference_window(traj, t, cfg.horizon, cfg.dt);
        let sol = self.solver.solve(self.mode, measured, &window, obstacles);
        let failed = sol.status == QpStatus::PrimalInfeasible || !sol.inputs.iter().all(|u| u.as_array().iter().all(|v| v.is_finite()));
        let command = if failed {
            self.solver.reset();
            BodyInput::ZERO
        } else {
            sol.inputs[0]
        };
        let record = StepRecord {
            t,
            measured,
            command,
            objective: sol.objective,
            slacks: sol.slacks.clone(),
            solve_time: sol.solve_time,
            degraded: sol.degraded || failed,
            qp_iterations: sol.qp_iterations,
        };
        self.last = Some(sol);
        (command, record)
    }
}

/// `a - b` with the heading difference wrapped.
pub fn pose_error(a: Pose, b: Pose) -> Vector3<f64> {
    state_error(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{interpolate, InterpolationParams};
    use std::f64::consts::PI;

    fn obs(id: u32, x: f64, y: f64, r: f64) -> Obstacle {
        Obstacle::new(id, Point2::new(x, y), r).unwrap()
    }

    fn straight(len: f64) -> Trajectory {
        interpolate(
            &[Point2::new(0.0, 0.0), Point2::new(len, 0.0)],
            0.0,
            &InterpolationParams::default(),
            None,
        )
        .unwrap()
    }

    fn window(traj: &Trajectory, t: f64) -> ReferenceWindow {
        reference_window(traj, t, 10, 0.25)
    }

    #[test]
    fn tangent_constraint_example() {
        // reference at (1, 0), obstacle at the origin, R_eff = 1 -> x >= 1 - delta
        let w = ReferenceWindow {
            states: vec![Pose::new(0.0, 0.0, 0.0), Pose::new(1.0, 0.0, 0.0)],
            inputs: vec![BodyInput::new(4.0, 0.0, 0.0)],
            dt: 0.25,
        };
        let cfg = MpcConfig { robot_radius: 0.0, horizon: 1, ..Default::default() };
        let o = obs(0, 0.0, 0.0, 1.0);
        let c = tangent_constraints(&w, &[o], &cfg);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].normal, Point2::new(1.0, 0.0));
        let (prob, dropped) = build_lmpc(Pose::new(0.0, 0.0, 0.0), &w, &[o], &cfg);
        assert_eq!(dropped, 0);
        let layout = Layout::new(1, 1, SlackMode::PerObstacle);
        let row = layout.coll_row(1, 0);
        // dx + delta >= R_eff - |V| = 0, i.e. x = 1 + dx >= 1 - delta
        assert_eq!(prob.a[(row, layout.x(1))], 1.0);
        assert_eq!(prob.a[(row, layout.x(1) + 1)], 0.0);
        assert_eq!(prob.a[(row, layout.slack(1, 0))], 1.0);
        assert_eq!(prob.l[row], 0.0);
    }

    #[test]
    fn on_reference_returns_reference_input() {
        let tr = straight(10.0);
        let w = window(&tr, 1.0);
        for mode in [MpcMode::Linear, MpcMode::Nonlinear] {
            let mut s = MpcSolver::new(MpcConfig::default()).unwrap();
            let sol = s.solve(mode, w.states[0], &w, &[]);
            assert!(!sol.degraded);
            let e = input_vec(sol.inputs[0]) - input_vec(w.inputs[0]);
            assert!(e.amax() < 1e-4, "{mode}: {e}");
            if mode == MpcMode::Nonlinear {
                assert_eq!(sol.sqp_iterations, 1);
            }
        }
    }

    #[test]
    fn qp_shape_depends_only_on_horizon_and_obstacles() {
        let tr = straight(10.0);
        let cfg = MpcConfig::default();
        let far = [obs(0, 5.0, 8.0, 0.3), obs(1, -3.0, -4.0, 0.5)];
        let near = [obs(0, 3.0, 0.0, 0.3), obs(1, 4.0, 0.1, 0.5)];
        let (a, _) = build_lmpc(Pose::new(0.0, 0.0, 0.0), &window(&tr, 0.0), &far, &cfg);
        let (b, _) = build_lmpc(Pose::new(0.0, 0.2, 0.0), &window(&tr, 1.0), &near, &cfg);
        assert_eq!(a.a.shape(), b.a.shape());
        assert_eq!(a.a.shape(), (60 + 20 + 2, 62));
    }

    #[test]
    fn wrapped_heading_error() {
        // reference heading pi - 0.1, robot at -pi + 0.1: a 0.2 rad turn
        let r = Pose::new(0.0, 0.0, PI - 0.1);
        let x = Pose::new(0.0, 0.0, -PI + 0.1);
        assert!((state_error(x, r)[2] - 0.2).abs() < 1e-12);
        let w = ReferenceWindow {
            states: vec![r; 11],
            inputs: vec![BodyInput::ZERO; 10],
            dt: 0.25,
        };
        for mode in [MpcMode::Linear, MpcMode::Nonlinear] {
            let mut s = MpcSolver::new(MpcConfig::default()).unwrap();
            let sol = s.solve(mode, x, &w, &[]);
            // turning toward the reference means negative omega, a small one
            assert!(sol.inputs[0].omega < 0.0 && sol.inputs[0].omega > -0.2 / 0.25 - 1e-9, "{mode} {:?}", sol.inputs[0]);
            let total: f64 = sol.inputs.iter().map(|u| u.omega * 0.25).sum();
            assert!(total.abs() <= 0.2 + 1e-6);
        }
    }

    #[test]
    fn slacks_vanish_when_clear() {
        let tr = straight(10.0);
        let w = window(&tr, 0.5);
        let o = [obs(0, 3.0, 2.0, 0.4), obs(1, 1.0, -1.5, 0.3)];
        for mode in [MpcMode::Linear, MpcMode::Nonlinear] {
            let sol = MpcSolver::new(MpcConfig::default()).unwrap().solve(mode, w.states[0], &w, &o);
            assert!(sol.slacks.iter().all(|s| *s <= 1e-6), "{mode} {:?}", sol.slacks);
        }
    }

    #[test]
    fn inputs_respect_limits() {
        let tr = straight(10.0);
        let w = window(&tr, 0.0);
        // far off the reference: the unconstrained answer would saturate
        let x0 = Pose::new(-3.0, 4.0, 2.5);
        for mode in [MpcMode::Linear, MpcMode::Nonlinear] {
            let sol = MpcSolver::new(MpcConfig::default()).unwrap().solve(mode, x0, &w, &[]);
            let lim = InputLimits::default();
            assert!(sol.inputs.iter().all(|u| lim.contains(*u, 0.0)));
        }
    }

    #[test]
    fn lateral_offset_contracts() {
        let tr = straight(14.0);
        let cfg = MpcConfig::default();
        let mut ctl = MpcController::new(cfg, MpcMode::Linear).unwrap();
        let mut x = Pose::new(0.0, 0.2, 0.0);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let t = k as f64 * cfg.dt;
            let (u, rec) = ctl.track_step(x, t, &tr, &[]);
            assert!(!rec.degraded);
            x = step(x, u, cfg.dt);
            let err = x.y.abs();
            // monotone until the error reaches solver-noise level
            if prev > 1e-3 {
                assert!(err <= prev, "tick {k}: {err} > {prev}");
            }
            prev = err;
        }
        assert!(prev < 0.05);
    }

    #[test]
    fn raising_slack_weight_shrinks_slack() {
        let tr = straight(10.0);
        let w = window(&tr, 0.0);
        let o = [obs(0, 2.5, 0.0, 0.5)];
        let mut slack = Vec::new();
        for rho in [1.0, 10.0] {
            let cfg = MpcConfig { slack_weight: rho, ..Default::default() };
            let sol = solve_lmpc(w.states[0], &w, &o, &cfg).unwrap();
            slack.push(sol.slacks[0]);
        }
        assert!(slack[1] <= slack[0] + 1e-9, "{slack:?}");
        assert!(slack[0] > 0.0);
    }

    #[test]
    fn detour_around_obstacle_on_reference() {
        let tr = straight(14.0);
        let cfg = MpcConfig::default();
        let o = [obs(0, 4.0, 0.0, 0.4)];
        for mode in [MpcMode::Linear, MpcMode::Nonlinear] {
            let mut ctl = MpcController::new(cfg, mode).unwrap();
            let mut x = Pose::new(0.0, 0.0, 0.0);
            let mut min_d = f64::INFINITY;
            let mut max_slack: f64 = 0.0;
            for k in 0..50 {
                let (u, rec) = ctl.track_step(x, k as f64 * cfg.dt, &tr, &o);
                max_slack = max_slack.max(rec.slacks[0]);
                x = step(x, u, cfg.dt);
                min_d = min_d.min(x.position().distance(o[0].center));
            }
            let re = cfg.effective_radius(&o[0]);
            let bound = match mode {
                MpcMode::Linear => re - max_slack,
                MpcMode::Nonlinear => (re * re - max_slack).max(0.0).sqrt(),
            };
            assert!(min_d >= o[0].radius, "{mode}: collided, min distance {min_d}");
            assert!(min_d >= bound - 1e-3, "{mode}: {min_d} < {bound}");
            assert!(x.x > 6.0, "{mode}: stuck at {x:?}");
        }
    }

    #[test]
    fn nmpc_satisfies_circle_constraint() {
        let tr = straight(10.0);
        let w = window(&tr, 0.0);
        let cfg = MpcConfig::default();
        let o = [obs(0, 2.0, 0.3, 0.4)];
        let sol = solve_nmpc(w.states[0], &w, &o, &cfg).unwrap();
        assert!(!sol.degraded, "{sol:?}");
        let re = cfg.effective_radius(&o[0]);
        for x in &sol.states {
            let d2 = (x.position() - o[0].center).norm().powi(2);
            assert!(d2 + sol.slacks[0] >= re * re - 1e-4);
        }
    }

    #[test]
    fn nmpc_and_lmpc_agree_for_small_deviations() {
        let tr = straight(10.0);
        let w = window(&tr, 0.5);
        let cfg = MpcConfig::default();
        let o = [obs(0, 3.0, 1.2, 0.5)];
        let x0 = Pose::new(w.states[0].x, 0.05, 0.02);
        let lin = solve_lmpc(x0, &w, &o, &cfg).unwrap();
        let non = solve_nmpc(x0, &w, &o, &cfg).unwrap();
        let gap = (lin.objective - non.objective).abs() / non.objective.max(1e-12);
        assert!(gap <= 0.05, "{} vs {}", lin.objective, non.objective);
    }

    #[test]
    fn past_the_end_holds_still() {
        let tr = straight(3.0);
        let mut ctl = MpcController::new(MpcConfig::default(), MpcMode::Linear).unwrap();
        let (u, _) = ctl.track_step(tr.final_pose(), tr.duration() + 5.0, &tr, &[]);
        assert!(input_vec(u).amax() < 1e-6);
    }

    #[test]
    fn recovers_from_inside_the_keep_out_disk() {
        let tr = straight(14.0);
        let cfg = MpcConfig::default();
        let o = [obs(0, 3.0, 0.3, 0.5)];
        let re = cfg.effective_radius(&o[0]);
        for mode in [MpcMode::Linear, MpcMode::Nonlinear] {
            let mut ctl = MpcController::new(cfg, mode).unwrap();
            // 0.2 R_eff inside, below the obstacle
            let mut x = Pose::new(3.0, 0.3 - 0.8 * re, 0.0);
            let mut prev = x.position().distance(o[0].center);
            let t0 = 2.0;
            for k in 0..8 {
                let (u, rec) = ctl.track_step(x, t0 + k as f64 * cfg.dt, &tr, &o);
                assert!(!rec.degraded, "{mode} tick {k}");
                x = step(x, u, cfg.dt);
                let d = x.position().distance(o[0].center);
                assert!(d > prev, "{mode} tick {k}: {d} <= {prev}");
                prev = d;
            }
        }
    }

    #[test]
    fn per_step_slacks_have_their_own_layout() {
        let tr = straight(10.0);
        let cfg = MpcConfig { slack_mode: SlackMode::PerStep, ..Default::default() };
        let o = [obs(0, 2.5, 0.0, 0.5), obs(1, 6.0, 3.0, 0.5)];
        let w = window(&tr, 0.0);
        let sol = solve_lmpc(w.states[0], &w, &o, &cfg).unwrap();
        assert_eq!(sol.slacks.len(), 20);
        let sol = solve_nmpc(w.states[0], &w, &o, &cfg).unwrap();
        assert_eq!(sol.slacks.len(), 20);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(MpcConfig { horizon: 0, ..Default::default() }.validate().is_err());
        assert!(MpcConfig { slack_weight: 0.0, ..Default::default() }.validate().is_err());
        let limits = InputLimits { vx: [0.5, 1.0], ..Default::default() };
        assert!(MpcConfig { limits, ..Default::default() }.validate().is_err());
        assert_eq!("nonlinear".parse::<MpcMode>(), Ok(MpcMode::Nonlinear));
    }

    #[test]
    fn normal_turns_sideways_inside_the_disk() {
        let c = Point2::new(0.0, 0.0);
        assert_eq!(keep_out_normal(Point2::new(2.0, 0.0), c, 0.0, 1.0), Some(Point2::new(1.0, 0.0)));
        // just behind the center on a path along +x, slightly below it
        let n = keep_out_normal(Point2::new(-0.5, -0.1), c, 0.0, 1.0).unwrap();
        assert_eq!(n, Point2::new(0.0, -1.0));
        assert_eq!(keep_out_normal(c, c, 0.0, 1.0), None);
    }

    fn curved_reference() -> Trajectory {
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(3.0, 1.0),
            Point2::new(6.0, 0.5),
            Point2::new(9.0, 2.0),
            Point2::new(12.0, 2.0),
        ];
        interpolate(&pts, 0.0, &InterpolationParams::default(), None).unwrap()
    }

    #[test]
    fn warm_start_beats_cold_on_shifted_horizons() {
        let tr = curved_reference();
        let cfg = MpcConfig::default();
        let o = [obs(0, 4.5, 2.0, 0.4), obs(1, 7.5, 0.0, 0.5)];
        let mut ctl = MpcController::new(cfg, MpcMode::Linear).unwrap();
        let mut x = Pose::new(0.0, 0.1, 0.0);
        let (mut warm, mut cold) = (Vec::new(), Vec::new());
        for k in 0..100 {
            let t = k as f64 * cfg.dt * 0.4;
            let w = reference_window(&tr, t, cfg.horizon, cfg.dt);
            cold.push(solve_lmpc(x, &w, &o, &cfg).unwrap().qp_iterations);
            let (u, rec) = ctl.track_step(x, t, &tr, &o);
            warm.push(rec.qp_iterations);
            x = step(x, u, cfg.dt * 0.4);
        }
        warm.sort_unstable();
        cold.sort_unstable();
        assert!(warm[50] <= cold[50], "warm {} cold {}", warm[50], cold[50]);
    }

    #[test]
    fn mpc_qps_satisfy_kkt() {
        use crate::qp::{kkt_report, QpWorkspace};
        let tr = curved_reference();
        let cfg = MpcConfig::default();
        let o = [obs(0, 4.5, 1.0, 0.4), obs(1, 7.5, 0.0, 0.5)];
        for k in 0..40 {
            let t = k as f64 * 0.2;
            let w = reference_window(&tr, t, cfg.horizon, cfg.dt);
            let x0 = Pose::new(w.states[0].x + 0.1, w.states[0].y - 0.1, w.states[0].theta + 0.05);
            let (prob, _) = build_lmpc(x0, &w, &o, &cfg);
            let sol = QpWorkspace::new(QpSettings::default()).solve(&prob, None);
            assert_eq!(sol.status, QpStatus::Solved);
            let kkt = kkt_report(&prob, &sol.x, &sol.y);
            let tol = 10.0 * sol.eps_dual.max(sol.eps_primal);
            assert!(kkt.stationarity <= tol, "{kkt:?}");
            assert!(kkt.primal_violation <= tol, "{kkt:?}");
            assert!(kkt.complementarity <= tol, "{kkt:?}");
        }
    }
}
