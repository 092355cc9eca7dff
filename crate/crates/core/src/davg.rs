//! Turning-aware shortest paths over the visibility graph.
//!
//! Each augmented state is a directed visibility edge `(past, current)`, so
//! the transition `(i, j) -> (j, k)` knows both the length of `j -> k` and
//! the turn taken at `j`. Transition weight is `d + lambda * turn`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::geometry::{turn_angle, Point2, DEFAULT_EPS};
use crate::obstacle_map::{active_set, polygonize, ActiveSet, Obstacle, ObstacleId, ObstaclePolygon};
use crate::trajectory::Pose;
use crate::visibility::{build_visibility_graph, VisibilityGraph, GOAL, START};
use crate::PlanError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Meters of path length traded for one radian of turning.
    pub turn_weight: f64,
    pub n_sides: usize,
    pub phase: f64,
    pub eps: f64,
    /// Extra margin around the active region rectangle.
    pub region_margin: f64,
    /// Added to every obstacle radius before polygonizing.
    pub inflation: f64,
    pub use_active_set: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            turn_weight: 1.0,
            n_sides: 18,
            phase: 0.0,
            eps: DEFAULT_EPS,
            region_margin: 0.0,
            inflation: 0.0,
            use_active_set: true,
        }
    }
}

pub fn edge_weight(distance: f64, turn: f64, turn_weight: f64) -> f64 {
    distance + turn_weight * turn
}

#[derive(Debug, Clone)]
pub struct AugmentedGraph {
    /// `(past, current)` visibility node ids.
    pub states: Vec<(usize, usize)>,
    /// Outgoing `(state, weight)` per state.
    pub out: Vec<Vec<(usize, f64)>>,
    pub start_state: usize,
    pub goal_state: usize,
}

impl AugmentedGraph {
    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }
}

/// Builds the augmented graph. `start_heading` is the robot heading at the
/// start; the goal state is entered with zero weight.
pub fn build_augmented(vg: &VisibilityGraph, start_heading: f64, turn_weight: f64) -> AugmentedGraph {
    let mut states = Vec::with_capacity(vg.edges.len() + 2);
    // state id of directed edge e is e + 2
    states.push((START, START));
    states.push((GOAL, GOAL));
    states.extend(vg.edges.iter().map(|e| (e.from, e.to)));
    let mut out = vec![Vec::new(); states.len()];
    let pos = |i: usize| vg.nodes[i].position;
    let heading = Point2::from_polar(1.0, start_heading);

    for &e in &vg.adjacency[START] {
        let edge = &vg.edges[e];
        let turn = turn_angle(heading, pos(edge.to) - pos(START)).expect("edges are nondegenerate");
        out[0].push((e + 2, edge_weight(edge.length, turn, turn_weight)));
    }
    for (e, edge) in vg.edges.iter().enumerate() {
        let dir_in = pos(edge.to) - pos(edge.from);
        let from_state = e + 2;
        for &next in &vg.adjacency[edge.to] {
            let nxt = &vg.edges[next];
            let turn = turn_angle(dir_in, pos(nxt.to) - pos(nxt.from)).expect("edges are nondegenerate");
            out[from_state].push((next + 2, edge_weight(nxt.length, turn, turn_weight)));
        }
        if edge.to == GOAL {
            out[from_state].push((1, 0.0));
        }
    }
    AugmentedGraph {
        states,
        out,
        start_state: 0,
        goal_state: 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    state: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, state)
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.state.cmp(&self.state))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from the start state to the goal state. Returns the visited
/// state sequence and its cost.
pub fn dijkstra(ag: &AugmentedGraph) -> Option<(Vec<usize>, f64)> {
    let n = ag.states.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[ag.start_state] = 0.0;
    heap.push(HeapEntry {
        cost: 0.0,
        state: ag.start_state,
    });
    while let Some(HeapEntry { cost, state }) = heap.pop() {
        if cost > dist[state] {
            continue;
        }
        if state == ag.goal_state {
            let mut seq = vec![state];
            let mut cur = state;
            while prev[cur] != usize::MAX {
                cur = prev[cur];
                seq.push(cur);
            }
            seq.reverse();
            return Some((seq, cost));
        }
        for &(next, w) in &ag.out[state] {
            let cand = cost + w;
            if cand < dist[next] {
                dist[next] = cand;
                prev[next] = state;
                heap.push(HeapEntry {
                    cost: cand,
                    state: next,
                });
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub waypoints: Vec<Point2>,
    pub cost: f64,
    pub distance: f64,
    /// Includes the initial turn away from the start heading.
    pub total_turn: f64,
    /// Wall-clock seconds spent planning.
    pub solve_time: f64,
    pub active: Vec<ObstacleId>,
}

/// Shortest path through the augmented graph.
pub fn shortest_path(
    vg: &VisibilityGraph,
    ag: &AugmentedGraph,
    start_heading: f64,
) -> Result<PathResult, PlanError> {
    let (states, cost) = dijkstra(ag).ok_or(PlanError::Unplannable("goal unreachable"))?;
    let mut nodes: Vec<usize> = states.iter().map(|&s| ag.states[s].1).collect();
    nodes.dedup();
    let waypoints: Vec<Point2> = nodes.iter().map(|&i| vg.nodes[i].position).collect();
    let (distance, total_turn) = path_metrics(&waypoints, start_heading);
    Ok(PathResult {
        waypoints,
        cost,
        distance,
        total_turn,
        solve_time: 0.0,
        active: Vec::new(),
    })
}

/// Length and total turning (starting from `start_heading`) of a polyline.
pub fn path_metrics(waypoints: &[Point2], start_heading: f64) -> (f64, f64) {
    let mut distance = 0.0;
    let mut turn = 0.0;
    let mut dir = Point2::from_polar(1.0, start_heading);
    for w in waypoints.windows(2) {
        let d = w[1] - w[0];
        distance += d.norm();
        turn += turn_angle(dir, d).unwrap_or(0.0);
        dir = d;
    }
    (distance, turn)
}

/// Intermediate products of one planning call, for inspection and plots.
#[derive(Debug, Clone)]
pub struct PlanArtifacts {
    pub polygons: Vec<ObstaclePolygon>,
    pub active: ActiveSet,
    pub graph: VisibilityGraph,
    pub augmented: AugmentedGraph,
    pub path: PathResult,
}

pub fn plan(
    start: Pose,
    goal: Pose,
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
) -> Result<PathResult, PlanError> {
    plan_with_artifacts(start, goal, obstacles, cfg).map(|a| a.path)
}

/// Full pipeline: polygonize, active set, visibility graph, augmented graph,
/// Dijkstra.
pub fn plan_with_artifacts(
    start: Pose,
    goal: Pose,
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
) -> Result<PlanArtifacts, PlanError> {
    let clock = Stopwatch::start();
    if !(cfg.turn_weight >= 0.0 && cfg.turn_weight.is_finite()) {
        return Err(PlanError::InvalidInput(format!(
            "turn weight must be finite and non-negative, got {}",
            cfg.turn_weight
        )));
    }
    let s = start.position();
    let g = goal.position();
    if !(s.is_finite() && g.is_finite() && start.theta.is_finite()) {
        return Err(PlanError::InvalidInput("non-finite start or goal".into()));
    }
    let polygons = obstacles
        .iter()
        .map(|o| polygonize(&o.inflated(cfg.inflation), cfg.n_sides, cfg.phase))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PlanError::InvalidInput(e.to_string()))?;

    if s.distance(g) <= cfg.eps {
        let path = PathResult {
            waypoints: vec![s],
            cost: 0.0,
            distance: 0.0,
            total_turn: 0.0,
            solve_time: clock.elapsed(),
            active: Vec::new(),
        };
        let region = crate::obstacle_map::ActiveRegion {
            origin: s,
            axis: Point2::new(1.0, 0.0),
            lo: 0.0,
            hi: 0.0,
            half_width: 0.0,
        };
        return Ok(PlanArtifacts {
            polygons,
            active: ActiveSet {
                active: Vec::new(),
                region,
                rounds: 0,
            },
            graph: VisibilityGraph::default(),
            augmented: AugmentedGraph {
                states: Vec::new(),
                out: Vec::new(),
                start_state: 0,
                goal_state: 0,
            },
            path,
        });
    }

    let active = if cfg.use_active_set {
        active_set(&polygons, s, g, cfg.region_margin, cfg.eps)
    } else {
        let mut all = active_set(&[], s, g, cfg.region_margin, cfg.eps);
        all.active = (0..polygons.len()).collect();
        all
    };
    let active_polys: Vec<ObstaclePolygon> =
        active.active.iter().map(|&i| polygons[i].clone()).collect();
    let heading = Point2::from_polar(1.0, start.theta);
    let graph = build_visibility_graph(s, g, heading, g - s, &active_polys, cfg.eps)?;
    let augmented = build_augmented(&graph, start.theta, cfg.turn_weight);
    let mut path = shortest_path(&graph, &augmented, start.theta)?;
    path.active = active_polys.iter().map(|p| p.source.id).collect();
    path.solve_time = clock.elapsed();
    Ok(PlanArtifacts {
        polygons,
        active,
        graph,
        augmented,
        path,
    })
}
