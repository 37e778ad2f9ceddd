//! Viewpoint placement near a snapshot's objects, shortest paths inside the
//! explored region, and capped movement along a path.

use thiserror::Error;

use crate::grid::{GridIndex, OccupancyGrid};
use crate::model::{Pose, Position2};
use crate::sim::DistanceField;

/// Largest distance a non-navigable viewpoint may be moved to reach a navigable cell.
pub const SNAP_RADIUS: f64 = 0.3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NavError {
    #[error("no navigable viewpoint near the cluster")]
    UnreachableViewpoint,
    #[error("no path through the explored region")]
    NoPath,
    #[error("cluster is empty")]
    EmptyCluster,
}

/// Standoff point `obs_dist` from the cluster's anchor point.
///
/// One object: toward the centroid of navigable cells within `obs_dist`.
/// Two: along either side of the perpendicular bisector of the pair. More:
/// along either direction of the principal axis with the smallest variance,
/// from the centroid. Navigable candidates win, explored ones first, then the
/// lower `(row, col)`; failing that, the nearest navigable cell center within
/// [`SNAP_RADIUS`] of a candidate.
pub fn snapshot_nav_target(objects: &[Position2], grid: &OccupancyGrid, obs_dist: f64) -> Result<Position2, NavError> {
    let candidates: Vec<Position2> = match objects {
        [] => return Err(NavError::EmptyCluster),
        [o] => {
            let near: Vec<Position2> = grid
                .indices()
                .filter(|i| grid.is_navigable(*i))
                .map(|i| grid.center(i))
                .filter(|c| c.distance(*o) <= obs_dist)
                .collect();
            if near.is_empty() {
                return Err(NavError::UnreachableViewpoint);
            }
            let centroid = mean(&near);
            let dir = centroid.sub(*o);
            if dir.norm() < 1e-9 {
                compass().iter().map(|d| o.add(d.scale(obs_dist))).collect()
            } else {
                vec![o.add(dir.scale(obs_dist / dir.norm()))]
            }
        }
        [a, b] => {
            let mid = a.lerp(*b, 0.5);
            let d = b.sub(*a);
            if d.norm() < 1e-9 {
                compass().iter().map(|c| mid.add(c.scale(obs_dist))).collect()
            } else {
                let perp = Position2::new(-d.y, d.x).scale(obs_dist / d.norm());
                vec![mid.add(perp), mid.sub(perp)]
            }
        }
        many => {
            let c = mean(many);
            let axis = minor_axis(many, c);
            vec![c.add(axis.scale(obs_dist)), c.sub(axis.scale(obs_dist))]
        }
    };

    let rank = |p: Position2, idx: GridIndex| (!grid.is_explored(idx), idx, p);
    let exact = candidates
        .iter()
        .filter_map(|p| grid.index_of(*p).filter(|i| grid.is_navigable(*i)).map(|i| rank(*p, i)))
        .min_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    if let Some((_, _, p)) = exact {
        return Ok(p);
    }

    let mut best: Option<(bool, f64, GridIndex)> = None;
    for p in &candidates {
        for idx in cells_within(grid, *p, SNAP_RADIUS) {
            if !grid.is_navigable(idx) {
                continue;
            }
            let key = (!grid.is_explored(idx), grid.center(idx).distance(*p), idx);
            let better = best.is_none_or(|b| {
                key.0.cmp(&b.0).then(key.1.total_cmp(&b.1)).then(key.2.cmp(&b.2)).is_lt()
            });
            if better {
                best = Some(key);
            }
        }
    }
    best.map(|(_, _, i)| grid.center(i)).ok_or(NavError::UnreachableViewpoint)
}

fn compass() -> [Position2; 8] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [
        Position2::new(1.0, 0.0),
        Position2::new(0.0, 1.0),
        Position2::new(-1.0, 0.0),
        Position2::new(0.0, -1.0),
        Position2::new(h, h),
        Position2::new(-h, h),
        Position2::new(-h, -h),
        Position2::new(h, -h),
    ]
}

fn mean(points: &[Position2]) -> Position2 {
    let sum = points.iter().fold(Position2::default(), |acc, p| acc.add(*p));
    sum.scale(1.0 / points.len() as f64)
}

/// Unit eigenvector of the smallest eigenvalue of the points' covariance.
fn minor_axis(points: &[Position2], c: Position2) -> Position2 {
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p.sub(c);
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    if sxy.abs() < 1e-12 {
        return if sxx <= syy { Position2::new(1.0, 0.0) } else { Position2::new(0.0, 1.0) };
    }
    let half = (sxx + syy) / 2.0;
    let lambda = half - (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    let v1 = Position2::new(sxy, lambda - sxx);
    let v2 = Position2::new(lambda - syy, sxy);
    let v = if v1.norm() >= v2.norm() { v1 } else { v2 };
    v.scale(1.0 / v.norm())
}

fn cells_within(grid: &OccupancyGrid, p: Position2, r: f64) -> Vec<GridIndex> {
    let cs = grid.cell_size();
    let o = grid.origin();
    let span = (r / cs).ceil() as i64 + 1;
    let col = ((p.x - o.x) / cs).floor() as i64;
    let row = ((p.y - o.y) / cs).floor() as i64;
    let mut out = Vec::new();
    for dr in -span..=span {
        for dc in -span..=span {
            if let Some(i) = grid.checked(row + dr, col + dc) {
                if grid.center(i).distance(p) <= r {
                    out.push(i);
                }
            }
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    /// Cells after the start cell, ending at `goal_cell`.
    pub cells: Vec<GridIndex>,
    pub waypoints: Vec<Position2>,
    /// Cell-path cost in meters.
    pub length: f64,
    pub goal_cell: GridIndex,
}

/// Distance field over explored cells rooted at the cell containing `start`.
pub fn explored_field(grid: &OccupancyGrid, start: Position2) -> Result<DistanceField, NavError> {
    let s = grid.index_of(start).filter(|i| grid.is_explored(*i)).ok_or(NavError::NoPath)?;
    Ok(DistanceField::compute(grid, s, |i| grid.is_explored(i), true))
}

/// Shortest 8-connected path over explored cells to the explored cell nearest
/// `goal` (ties to the lower `(row, col)`). Diagonal moves may not cut the
/// corner of a cell outside the explored region.
pub fn plan_path(grid: &OccupancyGrid, start: Position2, goal: Position2) -> Result<PlannedPath, NavError> {
    let field = explored_field(grid, start)?;
    let target = nearest_explored(grid, goal, |_| true).ok_or(NavError::NoPath)?;
    path_from_field(grid, &field, target)
}

/// Like [`plan_path`], but settles for the reachable explored cell nearest `goal`.
pub fn plan_path_reachable(grid: &OccupancyGrid, start: Position2, goal: Position2) -> Result<PlannedPath, NavError> {
    let field = explored_field(grid, start)?;
    let target = nearest_explored(grid, goal, |i| field.distance(i).is_some()).ok_or(NavError::NoPath)?;
    path_from_field(grid, &field, target)
}

fn nearest_explored(grid: &OccupancyGrid, goal: Position2, keep: impl Fn(GridIndex) -> bool) -> Option<GridIndex> {
    if let Some(i) = grid.index_of(goal) {
        if grid.is_explored(i) && keep(i) {
            return Some(i);
        }
    }
    let mut best: Option<(f64, GridIndex)> = None;
    for i in grid.indices() {
        if !grid.is_explored(i) || !keep(i) {
            continue;
        }
        let d = grid.center(i).distance_sq(goal);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

fn path_from_field(grid: &OccupancyGrid, field: &DistanceField, target: GridIndex) -> Result<PlannedPath, NavError> {
    let mut cells = field.path_to_source(target).ok_or(NavError::NoPath)?;
    cells.reverse();
    cells.remove(0);
    Ok(PlannedPath {
        waypoints: cells.iter().map(|c| grid.center(*c)).collect(),
        length: field.distance(target).unwrap_or(0.0),
        cells,
        goal_cell: target,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub pose: Pose,
    pub moved: f64,
    pub arrived: bool,
    /// Waypoints fully reached, in order.
    pub reached: usize,
    /// Positions visited: every reached waypoint, then the final position.
    pub visited: Vec<Position2>,
}

/// Walks along `waypoints` for at most `move_limit` meters of arc length.
/// Arrival means the unwalked remainder is within `arrive_radius`.
pub fn step_toward(pose: Pose, waypoints: &[Position2], move_limit: f64, arrive_radius: f64) -> StepOutcome {
    let mut total = 0.0;
    let mut prev = pose.position;
    for w in waypoints {
        total += prev.distance(*w);
        prev = *w;
    }
    let budget = total.min(move_limit);
    let mut left = budget;
    let mut cur = pose.position;
    let mut heading = pose.heading;
    let mut reached = 0;
    let mut visited = Vec::new();
    for w in waypoints {
        let seg = cur.distance(*w);
        if seg <= left + 1e-12 {
            if seg > 0.0 {
                heading = cur.bearing_to(*w);
            }
            left -= seg;
            cur = *w;
            reached += 1;
            visited.push(cur);
        } else {
            if left > 0.0 {
                heading = cur.bearing_to(*w);
                cur = cur.lerp(*w, left / seg);
                visited.push(cur);
            }
            left = 0.0;
            break;
        }
    }
    if visited.last() != Some(&cur) {
        visited.push(cur);
    }
    let moved = budget - left.max(0.0);
    StepOutcome {
        pose: Pose::new(cur, heading),
        moved,
        arrived: total - moved <= arrive_radius + 1e-9,
        reached,
        visited,
    }
}
