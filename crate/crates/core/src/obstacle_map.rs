//! Disk obstacles, their regular-polygon proxies, and the active-region
//! fixed point that decides which obstacles the planner has to look at.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    point_in_polygon, segment_points_blocked, segments_touch_or_cross, Containment, GeometryError,
    Point2, Polygon2,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObstacleId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: ObstacleId,
    pub center: Point2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObstacleError {
    #[error("regular polygon needs at least 3 sides, got {0}")]
    TooFewSides(usize),
    #[error("obstacle {id:?} has non-positive radius {radius}")]
    BadRadius { id: ObstacleId, radius: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl Obstacle {
    pub fn new(id: u32, center: Point2, radius: f64) -> Result<Self, ObstacleError> {
        let id = ObstacleId(id);
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ObstacleError::BadRadius { id, radius });
        }
        Point2::try_new(center.x, center.y)?;
        Ok(Self { id, center, radius })
    }

    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            radius: self.radius + margin,
            ..*self
        }
    }
}

/// Regular polygon circumscribing an obstacle disk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstaclePolygon {
    pub source: Obstacle,
    pub n_sides: usize,
    pub phase: f64,
    pub polygon: Polygon2,
}

/// Builds the regular `n_sides`-gon circumscribing the disk, first vertex
/// at angle `phase`. Vertex distance from the center is `R / cos(pi / n)`,
/// so every edge is tangent to the disk.
pub fn polygonize(
    obs: &Obstacle,
    n_sides: usize,
    phase: f64,
) -> Result<ObstaclePolygon, ObstacleError> {
    if n_sides < 3 {
        return Err(ObstacleError::TooFewSides(n_sides));
    }
    let circumradius = obs.radius / (PI / n_sides as f64).cos();
    let step = 2.0 * PI / n_sides as f64;
    let vertices = (0..n_sides)
        .map(|i| obs.center + Point2::from_polar(circumradius, phase + step * i as f64))
        .collect();
    Ok(ObstaclePolygon {
        source: *obs,
        n_sides,
        phase,
        polygon: Polygon2::new(vertices)?,
    })
}

/// Rectangle aligned with the start-goal line.
///
/// Local coordinates are `u` along `axis` from `origin` (the start) and `v`
/// perpendicular to it. The rectangle spans `u` in `[lo, hi]` and `v` in
/// `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActiveRegion {
    pub origin: Point2,
    pub axis: Point2,
    pub lo: f64,
    pub hi: f64,
    pub half_width: f64,
}

impl ActiveRegion {
    fn local(&self, p: Point2) -> (f64, f64) {
        let d = p - self.origin;
        (d.dot(self.axis), self.axis.cross(d))
    }

    fn world(&self, u: f64, v: f64) -> Point2 {
        self.origin + self.axis * u + self.axis.perp() * v
    }

    pub fn contains(&self, p: Point2, eps: f64) -> bool {
        let (u, v) = self.local(p);
        u >= self.lo - eps && u <= self.hi + eps && v.abs() <= self.half_width + eps
    }

    /// Corners in counter-clockwise order (duplicates when degenerate).
    pub fn corners(&self) -> [Point2; 4] {
        [
            self.world(self.lo, -self.half_width),
            self.world(self.hi, -self.half_width),
            self.world(self.hi, self.half_width),
            self.world(self.lo, self.half_width),
        ]
    }

    fn covering(
        start: Point2,
        goal: Point2,
        points: impl Iterator<Item = Point2>,
        margin: f64,
    ) -> Self {
        let axis = (goal - start)
            .normalized()
            .expect("start and goal are distinct");
        let mut region = Self {
            origin: start,
            axis,
            lo: 0.0,
            hi: goal.distance(start),
            half_width: 0.0,
        };
        let (mut lo, mut hi, mut w) = (region.lo, region.hi, 0.0_f64);
        for p in points {
            let (u, v) = region.local(p);
            lo = lo.min(u);
            hi = hi.max(u);
            w = w.max(v.abs());
        }
        region.lo = lo - margin;
        region.hi = hi + margin;
        region.half_width = w + margin;
        region
    }
}

/// True iff any polygon vertex lies in the region or any polygon edge meets
/// a region edge. A region swallowed whole by the polygon also counts.
pub fn region_contains_or_intersects(region: &ActiveRegion, poly: &ObstaclePolygon, eps: f64) -> bool {
    let vertices = poly.polygon.vertices();
    if vertices.iter().any(|&p| region.contains(p, eps)) {
        return true;
    }
    let corners = region.corners();
    let region_edges = (0..4).map(|i| (corners[i], corners[(i + 1) % 4]));
    for (c0, c1) in region_edges {
        if poly
            .polygon
            .edges()
            .any(|(a, b)| segments_touch_or_cross(a, b, c0, c1, eps))
        {
            return true;
        }
    }
    corners
        .iter()
        .any(|&c| point_in_polygon(c, &poly.polygon, eps) == Containment::Inside)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    /// Indices into the input slice, ascending.
    pub active: Vec<usize>,
    pub region: ActiveRegion,
    /// Number of region-growing rounds performed after seeding.
    pub rounds: usize,
}

/// Runs the active-obstacle fixed point.
///
/// Seeds with polygons blocking the start-goal segment, covers them with the
/// smallest rectangle in the start-goal frame, then keeps absorbing polygons
/// that touch the rectangle until nothing changes.
///
/// # Panics
/// If `start == goal`; callers validate this.
pub fn active_set(
    polys: &[ObstaclePolygon],
    start: Point2,
    goal: Point2,
    margin: f64,
    eps: f64,
) -> ActiveSet {
    assert!(start.distance(goal) > 0.0, "start and goal must differ");
    let mut is_active: Vec<bool> = polys
        .iter()
        .map(|p| segment_points_blocked(start, goal, &p.polygon, eps))
        .collect();
    let mut rounds = 0;
    loop {
        let region = ActiveRegion::covering(
            start,
            goal,
            polys
                .iter()
                .zip(&is_active)
                .filter(|(_, &a)| a)
                .flat_map(|(p, _)| p.polygon.vertices().iter().copied()),
            margin,
        );
        let joined: Vec<usize> = polys
            .iter()
            .enumerate()
            .filter(|(i, p)| !is_active[*i] && region_contains_or_intersects(&region, p, eps))
            .map(|(i, _)| i)
            .collect();
        if joined.is_empty() {
            let active = (0..polys.len()).filter(|&i| is_active[i]).collect();
            return ActiveSet {
                active,
                region,
                rounds,
            };
        }
        for i in joined {
            is_active[i] = true;
        }
        rounds += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DEFAULT_EPS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::SQRT_2;

    fn obs(id: u32, x: f64, y: f64, r: f64) -> Obstacle {
        Obstacle::new(id, Point2::new(x, y), r).unwrap()
    }

    #[test]
    fn square_proxy_vertices() {
        let p = polygonize(&obs(0, 0.0, 0.0, 1.0), 4, 0.0).unwrap();
        let v = p.polygon.vertices();
        assert!((v[0].x - SQRT_2).abs() < 1e-12 && v[0].y.abs() < 1e-12);
        for q in v {
            assert!((q.norm() - SQRT_2).abs() < 1e-12);
        }
    }

    #[test]
    fn many_sides_approach_the_circle() {
        let p = polygonize(&obs(0, 0.0, 0.0, 1.0), 10_000, 0.3).unwrap();
        assert!((p.polygon.vertices()[0].norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_sides_rejected() {
        assert_eq!(
            polygonize(&obs(0, 0.0, 0.0, 1.0), 2, 0.0),
            Err(ObstacleError::TooFewSides(2))
        );
        assert!(Obstacle::new(1, Point2::default(), 0.0).is_err());
    }

    #[test]
    fn eighteen_gon_contains_sampled_disk() {
        let o = obs(0, 1.0, -2.0, 0.5);
        let p = polygonize(&o, 18, 0.0).unwrap();
        let expected = 0.5 / (PI / 18.0).cos();
        for v in p.polygon.vertices() {
            assert!((v.distance(o.center) - expected).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let r = 0.5 * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..2.0 * PI);
            let q = o.center + Point2::from_polar(r, a);
            assert_ne!(point_in_polygon(q, &p.polygon, DEFAULT_EPS), Containment::Outside);
        }
        // the tangent points themselves sit on the boundary
        for k in 0..18 {
            let a = (k as f64 + 0.5) * 2.0 * PI / 18.0;
            let q = o.center + Point2::from_polar(0.5, a);
            assert_eq!(point_in_polygon(q, &p.polygon, 1e-9), Containment::Boundary);
        }
    }

    fn region_for(active: &[&ObstaclePolygon], s: Point2, g: Point2) -> ActiveRegion {
        ActiveRegion::covering(
            s,
            g,
            active.iter().flat_map(|p| p.polygon.vertices().iter().copied()),
            0.0,
        )
    }

    #[test]
    fn region_predicate_examples() {
        let s = Point2::new(0.0, 0.0);
        let g = Point2::new(10.0, 0.0);
        let big = polygonize(&obs(0, 5.0, 0.0, 2.0), 4, PI / 4.0).unwrap();
        let region = region_for(&[&big], s, g);
        let inside = polygonize(&obs(1, 3.0, 0.5, 0.3), 6, 0.0).unwrap();
        let far = polygonize(&obs(2, 5.0, 8.0, 0.5), 6, 0.0).unwrap();
        // straddles the top edge y = 2 without a vertex inside
        let crossing = polygonize(&obs(3, 5.0, 2.9, 1.0), 4, PI / 4.0).unwrap();
        assert!(region_contains_or_intersects(&region, &inside, DEFAULT_EPS));
        assert!(!region_contains_or_intersects(&region, &far, DEFAULT_EPS));
        assert!(region_contains_or_intersects(&region, &crossing, DEFAULT_EPS));
    }

    /// Direct evaluation of the fixed-point definition: the smallest set that
    /// contains every S-G blocker and is closed under "touches the covering
    /// rectangle".
    fn fixed_point_oracle(polys: &[ObstaclePolygon], s: Point2, g: Point2) -> Vec<usize> {
        let mut set: Vec<usize> = (0..polys.len())
            .filter(|&i| segment_points_blocked(s, g, &polys[i].polygon, DEFAULT_EPS))
            .collect();
        loop {
            let members: Vec<&ObstaclePolygon> = set.iter().map(|&i| &polys[i]).collect();
            let region = region_for(&members, s, g);
            let mut grown: Vec<usize> = (0..polys.len())
                .filter(|i| set.contains(i) || region_contains_or_intersects(&region, &polys[*i], DEFAULT_EPS))
                .collect();
            grown.sort_unstable();
            if grown == set {
                return set;
            }
            set = grown;
        }
    }

    #[test]
    fn far_obstacle_is_inactive() {
        let polys = vec![polygonize(&obs(0, 5.0, 6.0, 1.0), 8, 0.0).unwrap()];
        let act = active_set(&polys, Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), 0.0, DEFAULT_EPS);
        assert!(act.active.is_empty());
        assert_eq!(act.region.half_width, 0.0);
        assert_eq!((act.region.lo, act.region.hi), (0.0, 10.0));
    }

    #[test]
    fn straddling_obstacle_sets_region_extent() {
        let s = Point2::new(0.0, 0.0);
        let g = Point2::new(10.0, 0.0);
        let polys = vec![polygonize(&obs(0, 5.0, 0.3, 1.0), 4, 0.0).unwrap()];
        let act = active_set(&polys, s, g, 0.0, DEFAULT_EPS);
        assert_eq!(act.active, fixed_point_oracle(&polys, s, g));
        assert_eq!(act.active, vec![0]);
        // Vertices at (5 +- sqrt2, 0.3) and (5, 0.3 +- sqrt2).
        assert!((act.region.half_width - (0.3 + SQRT_2)).abs() < 1e-12);
        assert_eq!((act.region.lo, act.region.hi), (0.0, 10.0));
    }

    #[test]
    fn chain_of_obstacles_is_absorbed() {
        let s = Point2::new(0.0, 0.0);
        let g = Point2::new(10.0, 0.0);
        let polys = vec![
            // A blocks S-G, region half-width ~1.41
            polygonize(&obs(0, 5.0, 0.0, 1.0), 4, 0.0).unwrap(),
            // B clear of the S-G line but inside A's region
            polygonize(&obs(1, 2.0, 1.2, 0.3), 4, 0.0).unwrap(),
            // C well outside
            polygonize(&obs(2, 2.0, 6.0, 0.3), 4, 0.0).unwrap(),
        ];
        let act = active_set(&polys, s, g, 0.0, DEFAULT_EPS);
        assert_eq!(act.active, vec![0, 1]);
        assert_eq!(act.active, fixed_point_oracle(&polys, s, g));
    }

    #[test]
    fn active_set_matches_oracle_on_random_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(0..9);
            let polys: Vec<_> = (0..n)
                .map(|i| {
                    let o = obs(
                        i,
                        rng.random_range(-1.0..11.0),
                        rng.random_range(-4.0..4.0),
                        rng.random_range(0.2..1.0),
                    );
                    polygonize(&o, rng.random_range(3..10), rng.random_range(0.0..PI)).unwrap()
                })
                .collect();
            let s = Point2::new(0.0, 0.0);
            let g = Point2::new(10.0, rng.random_range(-1.0..1.0));
            let act = active_set(&polys, s, g, 0.0, DEFAULT_EPS);
            assert_eq!(act.active, fixed_point_oracle(&polys, s, g));
            for &i in &act.active {
                for v in polys[i].polygon.vertices() {
                    assert!(act.region.contains(*v, 1e-9));
                }
            }
            // bounded by obstacle count
            assert!(act.rounds <= polys.len());
        }
    }
}
