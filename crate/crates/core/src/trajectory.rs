//! Timestamped reference trajectories built from waypoint paths.
//!
//! Each path segment becomes a turn-in-place phase followed by a straight
//! translation phase. Positions are piecewise linear in time.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics;
use crate::geometry::{wrap_angle, Point2};

/// Planar pose; `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Point2 {
        Point2::from_polar(1.0, self.theta)
    }
}

/// Body-frame velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyInput {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl BodyInput {
    pub const ZERO: Self = Self {
        vx: 0.0,
        vy: 0.0,
        omega: 0.0,
    };

    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.vx, self.vy, self.omega]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("path has no waypoints")]
    EmptyPath,
    #[error("{0} must be positive and finite")]
    BadParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolationParams {
    pub v_nom: f64,
    pub omega_nom: f64,
    pub dt: f64,
}

impl Default for InterpolationParams {
    fn default() -> Self {
        Self {
            v_nom: 1.5,
            omega_nom: 1.5,
            dt: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Knot {
    pub t: f64,
    pub pose: Pose,
    /// Input held from this knot until the next one.
    pub input: BodyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    knots: Vec<Knot>,
}

/// One constant-input phase.
struct Phase {
    duration: f64,
    from: Pose,
    to: Pose,
    input: BodyInput,
}

impl Phase {
    fn at(&self, s: f64) -> Pose {
        // s in [0, 1]; heading integrates the constant rate
        let p = self.from.position().lerp(self.to.position(), s);
        Pose::new(p.x, p.y, self.from.theta + self.input.omega * self.duration * s)
    }
}

/// Rotate-then-translate linear interpolation of a waypoint path.
///
/// Knots are placed on every phase boundary and on a `dt` grid inside each
/// phase. With `goal_heading` set, a final turn-in-place phase aligns the
/// robot with it.
pub fn interpolate(
    waypoints: &[Point2],
    start_heading: f64,
    params: &InterpolationParams,
    goal_heading: Option<f64>,
) -> Result<Trajectory, TrajectoryError> {
    if waypoints.is_empty() {
        return Err(TrajectoryError::EmptyPath);
    }
    for (name, v) in [
        ("v_nom", params.v_nom),
        ("omega_nom", params.omega_nom),
        ("dt", params.dt),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(TrajectoryError::BadParameter(name));
        }
    }

    let mut phases = Vec::new();
    let mut heading = wrap_angle(start_heading);
    let rotate = |phases: &mut Vec<Phase>, at: Point2, from: f64, to: f64| {
        let delta = wrap_angle(to - from);
        if delta.abs() > 1e-12 {
            phases.push(Phase {
                duration: delta.abs() / params.omega_nom,
                from: Pose::new(at.x, at.y, from),
                to: Pose::new(at.x, at.y, to),
                input: BodyInput::new(0.0, 0.0, params.omega_nom.copysign(delta)),
            });
        }
    };
    for w in waypoints.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        if len <= 1e-12 {
            continue;
        }
        let dir = d.angle();
        rotate(&mut phases, w[0], heading, dir);
        heading = wrap_angle(dir);
        phases.push(Phase {
            duration: len / params.v_nom,
            from: Pose::new(w[0].x, w[0].y, heading),
            to: Pose::new(w[1].x, w[1].y, heading),
            input: BodyInput::new(params.v_nom, 0.0, 0.0),
        });
    }
    let end = *waypoints.last().unwrap();
    if let Some(gh) = goal_heading {
        rotate(&mut phases, end, heading, gh);
        heading = wrap_angle(gh);
    }

    let mut knots = Vec::new();
    let mut t = 0.0;
    for ph in &phases {
        let steps = (ph.duration / params.dt).ceil().max(1.0) as usize;
        for k in 0..steps {
            let tau = k as f64 * params.dt;
            if k > 0 && ph.duration - tau <= 1e-9 {
                break;
            }
            knots.push(Knot {
                t: t + tau,
                pose: ph.at(tau / ph.duration),
                input: ph.input,
            });
        }
        t += ph.duration;
    }
    knots.push(Knot {
        t,
        pose: Pose::new(end.x, end.y, heading),
        input: BodyInput::ZERO,
    });
    Ok(Trajectory { knots })
}

impl Trajectory {
    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn duration(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.t)
    }

    pub fn final_pose(&self) -> Pose {
        self.knots.last().map(|k| k.pose).unwrap_or_default()
    }

    /// Pose and feedforward input at time `t`, clamped to the ends.
    pub fn sample(&self, t: f64) -> (Pose, BodyInput) {
        let first = self.knots[0];
        if t <= first.t {
            return (first.pose, if self.knots.len() == 1 { BodyInput::ZERO } else { first.input });
        }
        let last = *self.knots.last().unwrap();
        if t >= last.t {
            return (last.pose, BodyInput::ZERO);
        }
        let i = self.knots.partition_point(|k| k.t <= t) - 1;
        let (k0, k1) = (self.knots[i], self.knots[i + 1]);
        let s = (t - k0.t) / (k1.t - k0.t);
        let p = k0.pose.position().lerp(k1.pose.position(), s);
        let theta = k0.pose.theta + k0.input.omega * (t - k0.t);
        (Pose::new(p.x, p.y, theta), k0.input)
    }

    /// Positions of the knots at or after time `t`, prefixed by the sampled
    /// position at `t`.
    pub fn remaining_polyline(&self, t: f64) -> Vec<Point2> {
        let mut pts = vec![self.sample(t).0.position()];
        pts.extend(
            self.knots
                .iter()
                .filter(|k| k.t > t)
                .map(|k| k.pose.position()),
        );
        pts.dedup_by(|a, b| a.distance(*b) <= 1e-12);
        pts
    }

    /// CSV with columns `t,x,y,theta,vx,vy,omega`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,theta,vx,vy,omega\n");
        for k in &self.knots {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                k.t, k.pose.x, k.pose.y, k.pose.theta, k.input.vx, k.input.vy, k.input.omega
            );
        }
        out
    }
}

/// Reference states `X_r[0..=N]` and inputs `u_r[0..N]` for the MPC.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceWindow {
    pub states: Vec<Pose>,
    pub inputs: Vec<BodyInput>,
    pub dt: f64,
}

impl ReferenceWindow {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

/// Samples the trajectory on the MPC grid and reconstructs inputs so that
/// `step(X_r[k], u_r[k], dt) == X_r[k + 1]`.
pub fn reference_window(traj: &Trajectory, t0: f64, horizon: usize, dt: f64) -> ReferenceWindow {
    assert!(horizon >= 1, "horizon must be at least one step");
    let states: Vec<Pose> = (0..=horizon)
        .map(|k| traj.sample(t0 + k as f64 * dt).0)
        .collect();
    let inputs = states
        .windows(2)
        .map(|w| dynamics::input_between(w[0], w[1], dt))
        .collect();
    ReferenceWindow { states, inputs, dt }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::step;
    use crate::geometry::point_segment_distance;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_8, PI};

    fn params(v: f64, w: f64, dt: f64) -> InterpolationParams {
        InterpolationParams {
            v_nom: v,
            omega_nom: w,
            dt,
        }
    }

    fn pts(raw: &[(f64, f64)]) -> Vec<Point2> {
        raw.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    #[test]
    fn straight_segment() {
        let tr = interpolate(&pts(&[(0.0, 0.0), (4.0, 0.0)]), 0.0, &params(2.0, 1.5, 0.25), None)
            .unwrap();
        assert_eq!(tr.duration(), 2.0);
        let (p, u) = tr.sample(1.0);
        assert_eq!((p.x, p.y, p.theta), (2.0, 0.0, 0.0));
        assert_eq!(u, BodyInput::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn corner_dwell_durations() {
        let tr = interpolate(
            &pts(&[(0.0, 0.0), (4.0, 0.0), (4.0, 3.0)]),
            0.0,
            &params(2.0, FRAC_PI_2, 0.25),
            None,
        )
        .unwrap();
        assert!((tr.duration() - 4.5).abs() < 1e-12);
        // mid-dwell: parked at the corner, half-turned
        let (p, u) = tr.sample(2.5);
        assert!((p.x - 4.0).abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.theta - PI / 4.0).abs() < 1e-12);
        assert_eq!(u.omega, FRAC_PI_2);
        let (p, _) = tr.sample(3.0);
        assert!((p.theta - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn collinear_segments_have_no_dwell() {
        let tr = interpolate(
            &pts(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)]),
            0.0,
            &params(1.0, 1.0, 0.25),
            None,
        )
        .unwrap();
        assert_eq!(tr.duration(), 3.0);
        assert!(tr.knots().iter().all(|k| k.input.omega == 0.0));
    }

    #[test]
    fn goal_heading_appends_final_turn() {
        let tr = interpolate(&pts(&[(0.0, 0.0), (1.0, 0.0)]), 0.0, &params(1.0, 1.0, 0.25), Some(-1.0))
            .unwrap();
        assert!((tr.duration() - 2.0).abs() < 1e-12);
        assert!((tr.final_pose().theta + 1.0).abs() < 1e-12);
    }

    #[test]
    fn turns_take_the_short_way_across_pi() {
        // heading 170 deg, segment direction -170 deg: turn +20 deg
        let start = 170f64.to_radians();
        let d = Point2::from_polar(1.0, (-170f64).to_radians());
        let tr = interpolate(&[Point2::default(), d], start, &params(1.0, 1.0, 0.25), None).unwrap();
        assert!((tr.duration() - (1.0 + 20f64.to_radians())).abs() < 1e-12);
        assert!(tr.knots()[0].input.omega > 0.0);
    }

    #[test]
    fn sampling_clamps() {
        let tr = interpolate(&pts(&[(0.0, 0.0), (4.0, 0.0)]), 0.0, &params(2.0, 1.5, 0.25), None)
            .unwrap();
        let k = tr.knots()[3];
        let (p, u) = tr.sample(k.t);
        assert_eq!((p, u), (k.pose, k.input));
        let (p, u) = tr.sample(tr.duration() + 5.0);
        assert_eq!(p, Pose::new(4.0, 0.0, 0.0));
        assert_eq!(u, BodyInput::ZERO);
        assert_eq!(tr.sample(-1.0).0, Pose::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_path_and_bad_params() {
        assert_eq!(
            interpolate(&[], 0.0, &InterpolationParams::default(), None),
            Err(TrajectoryError::EmptyPath)
        );
        assert!(interpolate(&pts(&[(0.0, 0.0)]), 0.0, &params(0.0, 1.0, 0.1), None).is_err());
        let single = interpolate(&pts(&[(1.0, 1.0)]), 0.3, &params(1.0, 1.0, 0.1), None).unwrap();
        assert_eq!(single.duration(), 0.0);
        assert_eq!(single.sample(3.0).1, BodyInput::ZERO);
    }

    #[test]
    fn reference_window_inputs() {
        let tr = interpolate(&pts(&[(0.0, 0.0), (10.0, 0.0)]), 0.0, &params(2.0, 1.5, 0.25), None)
            .unwrap();
        let w = reference_window(&tr, 0.0, 4, 0.25);
        assert_eq!(w.states[1], Pose::new(0.5, 0.0, 0.0));
        assert!((w.inputs[0].vx - 2.0).abs() < 1e-12 && w.inputs[0].vy == 0.0);

        let turn = interpolate(
            &pts(&[(0.0, 0.0), (0.0, 5.0)]),
            0.0,
            &params(1.0, FRAC_PI_2, 0.25),
            None,
        )
        .unwrap();
        let w = reference_window(&turn, 0.0, 1, 0.25);
        assert!((w.states[1].theta - FRAC_PI_8).abs() < 1e-12);
        assert!((w.inputs[0].omega - FRAC_PI_2).abs() < 1e-12);
        assert!(w.inputs[0].vx.abs() < 1e-12);
    }

    #[test]
    fn duration_formula_and_polyline_containment() {
        let way = pts(&[(0.0, 0.0), (3.0, 1.0), (3.5, 4.0), (-1.0, 2.0)]);
        let p = params(1.3, 0.9, 0.2);
        let tr = interpolate(&way, 2.0, &p, None).unwrap();
        let mut expected = 0.0;
        let mut h = 2.0;
        for w in way.windows(2) {
            let d = w[1] - w[0];
            expected += d.norm() / p.v_nom + wrap_angle(d.angle() - h).abs() / p.omega_nom;
            h = d.angle();
        }
        assert!((tr.duration() - expected).abs() < 1e-12);
        let mut t = 0.0;
        while t <= tr.duration() {
            let q = tr.sample(t).0.position();
            let d = way
                .windows(2)
                .map(|w| point_segment_distance(q, w[0], w[1]))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-12, "left the path at t={t}");
            t += 0.013;
        }
        assert!(tr.knots().windows(2).all(|k| k[1].t > k[0].t));
    }

    proptest! {
        #[test]
        fn window_is_dynamically_consistent(
            raw in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..6),
            heading in -PI..PI,
            t0 in 0.0..20.0f64,
            dt in 0.05..0.5f64,
        ) {
            let tr = interpolate(&pts(&raw), heading, &params(1.5, 1.5, 0.25), None).unwrap();
            let w = reference_window(&tr, t0, 10, dt);
            for k in 0..10 {
                let next = step(w.states[k], w.inputs[k], dt);
                let expect = w.states[k + 1];
                prop_assert!((next.x - expect.x).abs() < 1e-9);
                prop_assert!((next.y - expect.y).abs() < 1e-9);
                prop_assert!(wrap_angle(next.theta - expect.theta).abs() < 1e-9);
            }
        }
    }
}
