//! Discrete planar kinematics with body-frame velocity inputs.
//!
//! `x' = x + (cos(th) vx - sin(th) vy) dt`, `y' = y + (sin(th) vx + cos(th) vy) dt`,
//! `th' = wrap(th + w dt)`.

use nalgebra::{Matrix3, Vector3};

use crate::geometry::wrap_angle;
use crate::trajectory::{BodyInput, Pose};

pub fn step(x: Pose, u: BodyInput, dt: f64) -> Pose {
    let (s, c) = x.theta.sin_cos();
    Pose {
        x: x.x + (c * u.vx - s * u.vy) * dt,
        y: x.y + (s * u.vx + c * u.vy) * dt,
        theta: wrap_angle(x.theta + u.omega * dt),
    }
}

/// Unwrapped step on raw vectors; used for finite differences and SQP
/// rollouts where heading continuity matters.
pub fn step_vec(x: &Vector3<f64>, u: &Vector3<f64>, dt: f64) -> Vector3<f64> {
    let (s, c) = x[2].sin_cos();
    Vector3::new(
        x[0] + (c * u[0] - s * u[1]) * dt,
        x[1] + (s * u[0] + c * u[1]) * dt,
        x[2] + u[2] * dt,
    )
}

/// The input that moves `from` to `to` in exactly one step of `dt`.
pub fn input_between(from: Pose, to: Pose, dt: f64) -> BodyInput {
    let (s, c) = from.theta.sin_cos();
    let dx = (to.x - from.x) / dt;
    let dy = (to.y - from.y) / dt;
    BodyInput {
        vx: c * dx + s * dy,
        vy: -s * dx + c * dy,
        omega: wrap_angle(to.theta - from.theta) / dt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedDynamics {
    pub a: Matrix3<f64>,
    pub b: Matrix3<f64>,
    pub state: Pose,
    pub input: BodyInput,
    pub dt: f64,
}

/// Analytic Jacobians of [`step`] at `(state, input)`.
pub fn linearize(state: Pose, input: BodyInput, dt: f64) -> LinearizedDynamics {
    let (s, c) = state.theta.sin_cos();
    let mut a = Matrix3::identity();
    a[(0, 2)] = (-s * input.vx - c * input.vy) * dt;
    a[(1, 2)] = (c * input.vx - s * input.vy) * dt;
    #[rustfmt::skip]
    let b = Matrix3::new(
        c * dt, -s * dt, 0.0,
        s * dt,  c * dt, 0.0,
        0.0,     0.0,    dt,
    );
    LinearizedDynamics {
        a,
        b,
        state,
        input,
        dt,
    }
}

pub fn pose_vec(p: Pose) -> Vector3<f64> {
    Vector3::new(p.x, p.y, p.theta)
}

pub fn input_vec(u: BodyInput) -> Vector3<f64> {
    Vector3::new(u.vx, u.vy, u.omega)
}

pub fn vec_input(v: &Vector3<f64>) -> BodyInput {
    BodyInput::new(v[0], v[1], v[2])
}
