//! Shortest walkable paths, greedy DRP ordering and mission composition.

use crate::geometry::Point;
use crate::grid::{Cell, GridCost, NavGrid};
use crate::localization::Pose2D;
use crate::mission::{Mission, MissionWaypoint};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Non-walkable points are moved to the nearest walkable cell within this distance.
pub const SNAP_RADIUS: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("grid would need {cells} cells, above the 10^7 limit")]
    Resolution { cells: u64 },
    #[error("{what} at ({x:.3}, {y:.3}) is not within {SNAP_RADIUS} m of walkable space")]
    NotWalkable { what: String, x: f64, y: f64 },
    #[error("no walkable path from {from} to {to}")]
    NoPath { from: String, to: String },
    #[error("invalid mission parameters: {0}")]
    InvalidParameters(String),
}

/// Discrete reality point: where the robot stops to capture a panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drp {
    pub id: String,
    #[serde(flatten)]
    pub position: Point,
}

impl Drp {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self {
            id: id.into(),
            position: Point::new(x, y),
        }
    }
}

/// Polyline through the corners of a route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Point>,
    pub length: f64,
}

impl Path {
    pub fn new(waypoints: Vec<Point>) -> Self {
        let length = polyline_length(&waypoints);
        Self { waypoints, length }
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Point {
        let Some(&first) = self.waypoints.first() else {
            return Point::default();
        };
        if s <= 0.0 {
            return first;
        }
        let mut travelled = 0.0;
        for w in self.waypoints.windows(2) {
            let seg = w[0].distance(w[1]);
            if seg > 0.0 && travelled + seg >= s {
                return w[0].lerp(w[1], (s - travelled) / seg);
            }
            travelled += seg;
        }
        *self.waypoints.last().unwrap()
    }
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).fold(0.0, |a, d| a + d)
}

/// Grid route between two snapped points, before smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub start: Point,
    pub goal: Point,
    pub cells: Vec<Cell>,
    pub cost: GridCost,
}

impl Route {
    /// Start point, interior cell centres, goal point.
    pub fn raw_points(&self, grid: &NavGrid) -> Vec<Point> {
        if self.cells.len() <= 1 {
            return if self.start == self.goal {
                vec![self.start]
            } else {
                vec![self.start, self.goal]
            };
        }
        let mut pts = Vec::with_capacity(self.cells.len());
        pts.push(self.start);
        pts.extend(self.cells[1..self.cells.len() - 1].iter().map(|&c| grid.center(c)));
        pts.push(self.goal);
        pts
    }

    /// Grid cost in meters.
    pub fn grid_length(&self, grid: &NavGrid) -> f64 {
        self.cost.value() * grid.cell_size()
    }
}

fn snap(grid: &NavGrid, p: Point, what: &str) -> Result<(Cell, Point), PlanError> {
    grid.snap(p, SNAP_RADIUS).ok_or_else(|| PlanError::NotWalkable {
        what: what.to_string(),
        x: p.x,
        y: p.y,
    })
}

/// A* route between two points after snapping both onto the grid.
pub fn plan_route(grid: &NavGrid, start: Point, goal: Point) -> Result<Route, PlanError> {
    let (sc, sp) = snap(grid, start, "start")?;
    let (gc, gp) = snap(grid, goal, "goal")?;
    let (cost, cells) = grid.astar(sc, gc).ok_or_else(|| PlanError::NoPath {
        from: format!("({:.3}, {:.3})", start.x, start.y),
        to: format!("({:.3}, {:.3})", goal.x, goal.y),
    })?;
    Ok(Route {
        start: sp,
        goal: gp,
        cells,
        cost,
    })
}

/// Shortest walkable path as a corner polyline.
pub fn shortest_path(grid: &NavGrid, start: Point, goal: Point) -> Result<Path, PlanError> {
    let route = plan_route(grid, start, goal)?;
    Ok(Path::new(grid.smooth(&route.raw_points(grid))))
}

/// Greedy nearest-neighbour visiting order using walkable (grid) distance.
///
/// Ties go to the lexicographically smaller DRP id. Returned DRPs carry their
/// snapped positions.
pub fn order_drps_greedy(grid: &NavGrid, robot_position: Point, drps: &[Drp]) -> Result<Vec<Drp>, PlanError> {
    let (mut current, _) = snap(grid, robot_position, "robot position")?;
    let mut remaining = Vec::with_capacity(drps.len());
    for d in drps {
        let (cell, p) = snap(grid, d.position, &format!("DRP {}", d.id))?;
        remaining.push((cell, Drp { id: d.id.clone(), position: p }));
    }
    let mut order = Vec::with_capacity(drps.len());
    let mut first = true;
    while !remaining.is_empty() {
        let dist = grid.distances_from(current);
        if first {
            if let Some((_, d)) = remaining.iter().find(|(c, _)| dist[grid.index(*c)].is_none()) {
                return Err(PlanError::NoPath {
                    from: "robot position".into(),
                    to: format!("DRP {}", d.id),
                });
            }
            first = false;
        }
        let (pick, _) = remaining
            .iter()
            .enumerate()
            .min_by(|(_, (ca, a)), (_, (cb, b))| {
                let da = dist[grid.index(*ca)].expect("reachability checked");
                let db = dist[grid.index(*cb)].expect("reachability checked");
                da.cmp(&db).then_with(|| a.id.cmp(&b.id))
            })
            .expect("non-empty");
        let (cell, drp) = remaining.remove(pick);
        current = cell;
        order.push(drp);
    }
    Ok(order)
}

/// Renders a float the way the mission document does (6 decimals) and reads it back.
pub fn quantize(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}

/// Robot -> DRP1 -> ... -> DRPn along shortest walkable paths in greedy order.
///
/// Coordinates are quantized to the mission document's precision so the
/// in-memory mission equals its parsed wire form. The mission id is a digest
/// of the content and `created_at`.
pub fn compose_mission(
    grid: &NavGrid,
    robot_pose: &Pose2D,
    drps: &[Drp],
    speed_mps: f64,
    dwell_s: f64,
    created_at: &str,
) -> Result<Mission, PlanError> {
    if !(speed_mps.is_finite() && speed_mps > 0.0) {
        return Err(PlanError::InvalidParameters(format!("speed must be positive, got {speed_mps}")));
    }
    if !(dwell_s.is_finite() && dwell_s >= 0.0) {
        return Err(PlanError::InvalidParameters(format!("dwell must be non-negative, got {dwell_s}")));
    }
    let mut seen = std::collections::HashSet::new();
    for d in drps {
        if d.id.is_empty() || !seen.insert(d.id.as_str()) {
            return Err(PlanError::InvalidParameters(format!("DRP ids must be unique and non-empty (`{}`)", d.id)));
        }
    }

    let ordered = order_drps_greedy(grid, robot_pose.position(), drps)?;
    let (_, start) = snap(grid, robot_pose.position(), "robot position")?;
    let q = |p: Point| Point::new(quantize(p.x), quantize(p.y));

    let mut waypoints = vec![MissionWaypoint::plain(q(start))];
    let mut current = start;
    for drp in &ordered {
        let path = shortest_path(grid, current, drp.position).map_err(|e| match e {
            PlanError::NoPath { .. } => PlanError::NoPath {
                from: "previous stop".into(),
                to: format!("DRP {}", drp.id),
            },
            other => other,
        })?;
        for &p in path.waypoints.iter().skip(1).take(path.waypoints.len().saturating_sub(2)) {
            waypoints.push(MissionWaypoint::plain(q(p)));
        }
        waypoints.push(MissionWaypoint::drp(q(drp.position), drp.id.clone()));
        current = drp.position;
    }

    let speed_mps = quantize(speed_mps);
    let dwell_s = quantize(dwell_s);
    let mut hasher = Sha256::new();
    hasher.update(created_at.as_bytes());
    hasher.update(format!("{speed_mps:.6}/{dwell_s:.6}").as_bytes());
    for w in &waypoints {
        hasher.update(format!("{:.6},{:.6},{};", w.point.x, w.point.y, w.drp_id.as_deref().unwrap_or("")).as_bytes());
    }
    let digest = hasher.finalize();
    let mission_id = format!("m-{}", digest[..6].iter().map(|b| format!("{b:02x}")).collect::<String>());

    Ok(Mission {
        mission_id,
        created_at: created_at.to_string(),
        speed_mps,
        dwell_s,
        waypoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(w: usize, h: usize, origin: Point, cs: f64) -> NavGrid {
        NavGrid::from_occupancy(origin, cs, w, h, vec![true; w * h])
    }

    #[test]
    fn start_equals_goal() {
        let g = open(100, 100, Point::new(0.0, 0.0), 0.1);
        let p = shortest_path(&g, Point::new(3.0, 3.0), Point::new(3.0, 3.0)).unwrap();
        assert_eq!(p.waypoints.len(), 1);
        assert_eq!(p.length, 0.0);
    }

    #[test]
    fn straight_diagonal() {
        let g = open(100, 100, Point::new(0.0, 0.0), 0.1);
        let p = shortest_path(&g, Point::new(1.0, 1.0), Point::new(9.0, 9.0)).unwrap();
        assert!((p.length - 8.0 * 2f64.sqrt()).abs() <= 0.1, "{}", p.length);
    }

    #[test]
    fn greedy_collinear() {
        let g = open(100, 100, Point::new(-5.0, -5.0), 0.1);
        let drps = vec![Drp::new("c", 3.0, 0.0), Drp::new("a", 1.0, 0.0), Drp::new("b", 2.0, 0.0)];
        let order = order_drps_greedy(&g, Point::new(0.0, 0.0), &drps).unwrap();
        let ids: Vec<_> = order.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let single = order_drps_greedy(&g, Point::new(0.0, 0.0), &drps[..1]).unwrap();
        assert_eq!(single[0].id, "c");
    }

    #[test]
    fn greedy_tie_breaks_by_id() {
        let g = open(100, 100, Point::new(-5.0, -5.0), 0.1);
        let drps = vec![Drp::new("zeta", 1.05, 0.05), Drp::new("alpha", -0.95, 0.05)];
        let order = order_drps_greedy(&g, Point::new(0.05, 0.05), &drps).unwrap();
        assert_eq!(order[0].id, "alpha");
    }

    #[test]
    fn empty_mission() {
        let g = open(100, 100, Point::new(0.0, 0.0), 0.1);
        let m = compose_mission(&g, &Pose2D::new(2.0, 3.0, 0.0), &[], 0.4, 20.0, "t").unwrap();
        assert_eq!(m.waypoints.len(), 1);
        assert_eq!(m.path_length(), 0.0);
        assert_eq!(m.drp_count(), 0);
    }

    #[test]
    fn duplicate_drp_ids_rejected() {
        let g = open(100, 100, Point::new(0.0, 0.0), 0.1);
        let drps = vec![Drp::new("a", 1.0, 1.0), Drp::new("a", 2.0, 2.0)];
        assert!(matches!(
            compose_mission(&g, &Pose2D::default(), &drps, 0.4, 1.0, "t"),
            Err(PlanError::InvalidParameters(_))
        ));
    }

    #[test]
    fn unreachable_drp_is_named() {
        let mut occ = vec![true; 100];
        for y in 0..10 {
            occ[y * 10 + 5] = false;
        }
        let g = NavGrid::from_occupancy(Point::new(0.0, 0.0), 1.0, 10, 10, occ);
        let drps = vec![Drp::new("near", 2.5, 2.5), Drp::new("far", 8.5, 8.5)];
        let err = order_drps_greedy(&g, Point::new(0.5, 0.5), &drps).unwrap_err();
        assert_eq!(err, PlanError::NoPath { from: "robot position".into(), to: "DRP far".into() });
    }

    #[test]
    fn point_at_walks_polyline() {
        let p = Path::new(vec![Point::new(0.0, 0.0), Point::new(3.0, 0.0), Point::new(3.0, 4.0)]);
        assert_eq!(p.length, 7.0);
        assert_eq!(p.point_at(5.0), Point::new(3.0, 2.0));
        assert_eq!(p.point_at(100.0), Point::new(3.0, 4.0));
    }
}
