//! Occupancy grid over the walkable region and 8-connected A* search.

use crate::geometry::Point;
use crate::model::{cells_spanning, WalkableRegion};
use crate::planner::PlanError;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

pub const DEFAULT_CELL_SIZE: f64 = 0.1;
pub const MAX_CELLS: u64 = 10_000_000;

/// Column/row index of a grid cell.
pub type Cell = (usize, usize);

/// Cost of a grid path as counts of straight and diagonal moves.
///
/// Two distinct counts never have equal length (√2 is irrational), so the
/// pair is an exact representation of the path cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct GridCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl GridCost {
    /// Length in cell units.
    pub fn value(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    fn step(self, diagonal: bool) -> GridCost {
        if diagonal {
            GridCost { diagonal: self.diagonal + 1, ..self }
        } else {
            GridCost { straight: self.straight + 1, ..self }
        }
    }
}

impl PartialOrd for GridCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GridCost {
    fn cmp(&self, other: &Self) -> Ordering {
        if self == other {
            return Ordering::Equal;
        }
        self.value().total_cmp(&other.value())
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

#[derive(Debug, Clone, PartialEq)]
pub struct NavGrid {
    origin: Point,
    cell_size: f64,
    width: usize,
    height: usize,
    walkable: Vec<bool>,
}

/// Rasterizes `region`: a cell is walkable iff its centre is.
pub fn build_nav_grid(region: &WalkableRegion, cell_size: f64) -> Result<NavGrid, PlanError> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(PlanError::InvalidCellSize(cell_size));
    }
    let bounds = region.bounds();
    let nx = (bounds.width() / cell_size).ceil();
    let ny = (bounds.height() / cell_size).ceil();
    if nx * ny > MAX_CELLS as f64 {
        return Err(PlanError::Resolution {
            cells: (nx * ny) as u64,
        });
    }
    let width = cells_spanning(bounds.width(), cell_size);
    let height = cells_spanning(bounds.height(), cell_size);
    let mut walkable = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            let c = Point::new(
                bounds.min.x + (i as f64 + 0.5) * cell_size,
                bounds.min.y + (j as f64 + 0.5) * cell_size,
            );
            walkable.push(region.contains(c));
        }
    }
    Ok(NavGrid {
        origin: bounds.min,
        cell_size,
        width,
        height,
        walkable,
    })
}

impl NavGrid {
    /// Grid from an explicit occupancy raster, row-major from `origin`.
    pub fn from_occupancy(
        origin: Point,
        cell_size: f64,
        width: usize,
        height: usize,
        walkable: Vec<bool>,
    ) -> Self {
        assert!(cell_size > 0.0);
        assert_eq!(walkable.len(), width * height, "occupancy size mismatch");
        Self {
            origin,
            cell_size,
            width,
            height,
            walkable,
        }
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.walkable
    }

    pub fn index(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }

    pub fn cell_at_index(&self, idx: usize) -> Cell {
        (idx % self.width, idx / self.width)
    }

    pub fn is_walkable(&self, cell: Cell) -> bool {
        cell.0 < self.width && cell.1 < self.height && self.walkable[self.index(cell)]
    }

    pub fn walkable_count(&self) -> usize {
        self.walkable.iter().filter(|w| **w).count()
    }

    pub fn cell_of(&self, p: Point) -> Option<Cell> {
        let fx = ((p.x - self.origin.x) / self.cell_size).floor();
        let fy = ((p.y - self.origin.y) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn center(&self, (x, y): Cell) -> Point {
        Point::new(
            self.origin.x + (x as f64 + 0.5) * self.cell_size,
            self.origin.y + (y as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn point_is_walkable(&self, p: Point) -> bool {
        self.cell_of(p).is_some_and(|c| self.is_walkable(c))
    }

    /// Moves a point onto the grid: points in walkable cells stay put, others
    /// go to the nearest walkable cell centre within `max_distance`.
    pub fn snap(&self, p: Point, max_distance: f64) -> Option<(Cell, Point)> {
        if let Some(c) = self.cell_of(p).filter(|&c| self.is_walkable(c)) {
            return Some((c, p));
        }
        let to_index = |v: f64, o: f64| ((v - o) / self.cell_size).floor();
        let x0 = to_index(p.x - max_distance, self.origin.x).max(0.0) as usize;
        let y0 = to_index(p.y - max_distance, self.origin.y).max(0.0) as usize;
        let x1 = to_index(p.x + max_distance, self.origin.x);
        let y1 = to_index(p.y + max_distance, self.origin.y);
        if x1 < 0.0 || y1 < 0.0 {
            return None;
        }
        let x1 = (x1 as usize).min(self.width.saturating_sub(1));
        let y1 = (y1 as usize).min(self.height.saturating_sub(1));
        let mut best: Option<(f64, Cell)> = None;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if !self.is_walkable((x, y)) {
                    continue;
                }
                let d = self.center((x, y)).distance(p);
                if d <= max_distance && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, (x, y)));
                }
            }
        }
        best.map(|(_, c)| (c, self.center(c)))
    }

    /// Walkable neighbours with their move type. Diagonal moves must not cut
    /// a blocked corner.
    pub fn neighbours(&self, (x, y): Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
        NEIGHBOURS.iter().filter_map(move |&(dx, dy)| {
            let nx = x.checked_add_signed(dx)?;
            let ny = y.checked_add_signed(dy)?;
            if !self.is_walkable((nx, ny)) {
                return None;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !(self.is_walkable((nx, y)) && self.is_walkable((x, ny))) {
                return None;
            }
            Some(((nx, ny), diagonal))
        })
    }

    /// Octile distance in cell units; admissible and consistent for 8-connected moves.
    fn octile(&self, a: Cell, b: Cell) -> f64 {
        let dx = a.0.abs_diff(b.0) as f64;
        let dy = a.1.abs_diff(b.1) as f64;
        dx.max(dy) - dx.min(dy) + dx.min(dy) * SQRT_2
    }

    /// Minimal-cost cell sequence from `start` to `goal`, both inclusive.
    pub fn astar(&self, start: Cell, goal: Cell) -> Option<(GridCost, Vec<Cell>)> {
        if !self.is_walkable(start) || !self.is_walkable(goal) {
            return None;
        }
        let n = self.walkable.len();
        let mut best: Vec<Option<GridCost>> = vec![None; n];
        let mut parent = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        let s = self.index(start);
        let g = self.index(goal);
        best[s] = Some(GridCost::default());
        heap.push(Frontier {
            f: self.octile(start, goal),
            h: self.octile(start, goal),
            index: s,
            cost: GridCost::default(),
        });
        while let Some(Frontier { index, cost, .. }) = heap.pop() {
            if best[index] != Some(cost) {
                continue; // stale entry
            }
            if index == g {
                let mut cells = vec![goal];
                let mut at = g;
                while at != s {
                    at = parent[at];
                    cells.push(self.cell_at_index(at));
                }
                cells.reverse();
                return Some((cost, cells));
            }
            let cell = self.cell_at_index(index);
            for (next, diagonal) in self.neighbours(cell) {
                let ni = self.index(next);
                let nc = cost.step(diagonal);
                if best[ni].is_none_or(|old| nc < old) {
                    best[ni] = Some(nc);
                    parent[ni] = index;
                    let h = self.octile(next, goal);
                    heap.push(Frontier {
                        f: nc.value() + h,
                        h,
                        index: ni,
                        cost: nc,
                    });
                }
            }
        }
        None
    }

    /// Single-source costs to every cell (`None` for unreachable ones).
    pub fn distances_from(&self, start: Cell) -> Vec<Option<GridCost>> {
        let n = self.walkable.len();
        let mut best: Vec<Option<GridCost>> = vec![None; n];
        if !self.is_walkable(start) {
            return best;
        }
        let s = self.index(start);
        best[s] = Some(GridCost::default());
        let mut heap = BinaryHeap::new();
        heap.push(Frontier {
            f: 0.0,
            h: 0.0,
            index: s,
            cost: GridCost::default(),
        });
        while let Some(Frontier { index, cost, .. }) = heap.pop() {
            if best[index] != Some(cost) {
                continue;
            }
            for (next, diagonal) in self.neighbours(self.cell_at_index(index)) {
                let ni = self.index(next);
                let nc = cost.step(diagonal);
                if best[ni].is_none_or(|old| nc < old) {
                    best[ni] = Some(nc);
                    heap.push(Frontier {
                        f: nc.value(),
                        h: 0.0,
                        index: ni,
                        cost: nc,
                    });
                }
            }
        }
        best
    }

    /// Walkability check sampled every half cell along the segment.
    pub fn line_of_sight(&self, a: Point, b: Point) -> bool {
        let step = self.cell_size / 2.0;
        let n = (a.distance(b) / step).ceil().max(1.0) as usize;
        (0..=n).all(|i| self.point_is_walkable(a.lerp(b, i as f64 / n as f64)))
    }

    /// String pulling: drops every vertex that the previous kept vertex can see past.
    pub fn smooth(&self, points: &[Point]) -> Vec<Point> {
        if points.len() <= 2 {
            return points.to_vec();
        }
        let last = points.len() - 1;
        let mut out = vec![points[0]];
        let mut anchor = 0;
        let mut i = 1;
        while i < last {
            if !self.line_of_sight(points[anchor], points[i + 1]) {
                out.push(points[i]);
                anchor = i;
            }
            i += 1;
        }
        out.push(points[last]);
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Frontier {
    f: f64,
    h: f64,
    index: usize,
    cost: GridCost,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // Reversed: BinaryHeap is a max-heap and we pop the lowest f first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.index.cmp(&self.index))
    }
}
