//! Planar path planning and tracking for robots that pay for turning.
//!
//! The planner ([`davg`]) finds shortest paths on a visibility graph whose
//! states remember the incoming edge, so turning angles carry a cost. The
//! path is turned into a timed reference ([`trajectory`]) and tracked by a
//! model predictive controller ([`cfmpc`]) whose obstacle constraints are
//! always present and softened by slack variables. [`sim`] closes the loop.

pub mod bench;
pub mod cfmpc;
mod clock;
pub mod davg;
pub mod dynamics;
pub mod geometry;
pub mod obstacle_map;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod svg;
pub mod trajectory;
pub mod visibility;

use thiserror::Error;

pub use clock::Stopwatch;
pub use davg::{plan, PathResult, PlannerConfig};
pub use geometry::{Point2, Polygon2, Segment2};
pub use obstacle_map::{Obstacle, ObstacleId};
pub use trajectory::{BodyInput, Pose, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("unplannable: {0}")]
    Unplannable(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
