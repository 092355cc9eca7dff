//! Plain visibility graph over start, goal and uncovered obstacle vertices.

use std::fmt::Write as _;

use serde::Serialize;

use crate::geometry::{point_in_polygon, segment_points_blocked, Containment, Point2};
use crate::obstacle_map::{ObstacleId, ObstaclePolygon};
use crate::PlanError;

pub const START: usize = 0;
pub const GOAL: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NodeOrigin {
    Start,
    Goal,
    Vertex { obstacle: ObstacleId, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Node {
    pub position: Point2,
    pub origin: NodeOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub length: f64,
}

/// Node 0 is the start, node 1 the goal. Edges are stored in both
/// directions.
#[derive(Debug, Clone, Default, Serialize)]
pub struct VisibilityGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Outgoing edge indices per node.
    #[serde(skip)]
    pub adjacency: Vec<Vec<usize>>,
    /// Exit vertex used when the start is covered.
    pub start_exit: Option<usize>,
    /// Entry vertex used when the goal is covered.
    pub goal_exit: Option<usize>,
}

impl VisibilityGraph {
    fn add_undirected(&mut self, i: usize, j: usize, eps: f64) {
        let length = self.nodes[i].position.distance(self.nodes[j].position);
        if length <= eps {
            return;
        }
        for (from, to) in [(i, j), (j, i)] {
            self.adjacency[from].push(self.edges.len());
            self.edges.push(Edge { from, to, length });
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].iter().any(|&e| self.edges[e].to == j)
    }

    /// Debug dump: `node,id,x,y` rows followed by `edge,i,j,w` rows (one per
    /// undirected edge).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,a,b,c\n");
        for (id, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "node,{},{},{}", id, n.position.x, n.position.y);
        }
        for e in self.edges.iter().filter(|e| e.from < e.to) {
            let _ = writeln!(out, "edge,{},{},{}", e.from, e.to, e.length);
        }
        out
    }
}

fn covering_polygons(p: Point2, polys: &[ObstaclePolygon], eps: f64) -> Vec<usize> {
    polys
        .iter()
        .enumerate()
        .filter(|(_, poly)| point_in_polygon(p, &poly.polygon, eps) == Containment::Inside)
        .map(|(i, _)| i)
        .collect()
}

/// Picks the vertex used to leave (start mode) or reach (goal mode) a
/// covered point.
///
/// `candidates` are `(node id, position)` pairs in ascending vertex order.
/// Vertices in the open half-plane `(v - p) . direction > 0` are preferred,
/// closest first with ties going to the earlier candidate; when none
/// qualifies the globally closest candidate is used.
pub fn exit_vertex(p: Point2, direction: Point2, candidates: &[(usize, Point2)]) -> Option<usize> {
    let closest = |it: &mut dyn Iterator<Item = &(usize, Point2)>| {
        it.fold(None::<(usize, f64)>, |best, &(id, v)| {
            let d = v.distance(p);
            match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((id, d)),
            }
        })
        .map(|(id, _)| id)
    };
    let mut ahead = candidates.iter().filter(|(_, v)| (*v - p).dot(direction) > 0.0);
    closest(&mut ahead).or_else(|| closest(&mut candidates.iter()))
}

/// Builds the visibility graph for the given active polygons.
///
/// `start_heading` is the direction used to pick an exit vertex when the
/// start is covered; `goal_approach` is the direction of travel into the
/// goal (the entry vertex is chosen on the side the robot comes from).
pub fn build_visibility_graph(
    start: Point2,
    goal: Point2,
    start_heading: Point2,
    goal_approach: Point2,
    actives: &[ObstaclePolygon],
    eps: f64,
) -> Result<VisibilityGraph, PlanError> {
    let mut g = VisibilityGraph {
        nodes: vec![
            Node {
                position: start,
                origin: NodeOrigin::Start,
            },
            Node {
                position: goal,
                origin: NodeOrigin::Goal,
            },
        ],
        ..Default::default()
    };
    // vertex node ids per polygon, None when covered by another polygon
    let mut vertex_nodes: Vec<Vec<Option<usize>>> = Vec::with_capacity(actives.len());
    for (pi, poly) in actives.iter().enumerate() {
        let mut ids = Vec::with_capacity(poly.polygon.len());
        for (vi, &v) in poly.polygon.vertices().iter().enumerate() {
            let covered = actives.iter().enumerate().any(|(qi, other)| {
                qi != pi && point_in_polygon(v, &other.polygon, eps) == Containment::Inside
            });
            if covered {
                ids.push(None);
            } else {
                ids.push(Some(g.nodes.len()));
                g.nodes.push(Node {
                    position: v,
                    origin: NodeOrigin::Vertex {
                        obstacle: poly.source.id,
                        index: vi,
                    },
                });
            }
        }
        vertex_nodes.push(ids);
    }
    g.adjacency = vec![Vec::new(); g.nodes.len()];

    let start_cover = covering_polygons(start, actives, eps);
    let goal_cover = covering_polygons(goal, actives, eps);
    let free = |id: usize| match id {
        START => start_cover.is_empty(),
        GOAL => goal_cover.is_empty(),
        _ => true,
    };

    let n = g.nodes.len();
    for i in 0..n {
        if !free(i) {
            continue;
        }
        for j in i + 1..n {
            if !free(j) {
                continue;
            }
            let (a, b) = (g.nodes[i].position, g.nodes[j].position);
            let blocked = actives
                .iter()
                .any(|poly| segment_points_blocked(a, b, &poly.polygon, eps));
            if !blocked {
                g.add_undirected(i, j, eps);
            }
        }
    }

    let candidates_for = |cover: &[usize]| -> Vec<(usize, Point2)> {
        cover
            .iter()
            .flat_map(|&pi| vertex_nodes[pi].iter().flatten())
            .map(|&id| (id, g.nodes[id].position))
            .collect()
    };
    let start_cands = candidates_for(&start_cover);
    let goal_cands = candidates_for(&goal_cover);
    if !start_cover.is_empty() {
        let cands = start_cands;
        let v = exit_vertex(start, start_heading, &cands)
            .ok_or(PlanError::Unplannable("start is covered and its obstacle has no free vertex"))?;
        g.add_undirected(START, v, eps);
        g.start_exit = Some(v);
    }
    if !goal_cover.is_empty() {
        let cands = goal_cands;
        let v = exit_vertex(goal, -goal_approach, &cands)
            .ok_or(PlanError::Unplannable("goal is covered and its obstacle has no free vertex"))?;
        g.add_undirected(GOAL, v, eps);
        g.goal_exit = Some(v);
    }
    Ok(g)
}
