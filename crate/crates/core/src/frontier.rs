//! Exploration bookkeeping on the occupancy grid and the frontier lifecycle:
//! free-space carving, explored marking, unexplored-region extraction,
//! IoU-gated updates, angular splitting and anchor placement.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellState, GridIndex, OccupancyGrid};
use crate::kmeans;
use crate::model::{EpisodeConfig, Frontier, FrontierId, Pose, Position2};

/// Ray-march step used when carving free space.
pub const RAY_STEP: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum FrontierError {
    #[error("pose ({x:.2}, {y:.2}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("vantage point lies inside the region")]
    DegenerateVantage,
    #[error("cannot split a region of {0} cells")]
    InvalidSplit(usize),
    #[error("region has no adjacent explored cell")]
    DetachedRegion,
}

/// Ground-truth occupancy consulted while carving: is the point inside an obstacle?
pub trait GroundTruth {
    fn blocked(&self, p: Position2) -> bool;
}

impl<F: Fn(Position2) -> bool> GroundTruth for F {
    fn blocked(&self, p: Position2) -> bool {
        self(p)
    }
}

/// Marks as navigable every cell reached by an unobstructed ray inside the
/// view wedge; the first obstructed cell on each ray becomes occupied. Cells
/// never revert from navigable. Returns the number of cells whose state changed.
pub fn carve_free_space(
    grid: &mut OccupancyGrid,
    pose: Pose,
    hfov_deg: f64,
    range: f64,
    truth: &impl GroundTruth,
) -> Result<usize, FrontierError> {
    let start = grid
        .index_of(pose.position)
        .ok_or(FrontierError::OutOfBounds { x: pose.position.x, y: pose.position.y })?;
    let mut changed = 0;
    let mut mark = |grid: &mut OccupancyGrid, idx: GridIndex, state: CellState| {
        if grid.state(idx) == CellState::Unknown {
            grid.set_state(idx, state);
            changed += 1;
        }
    };
    if !truth.blocked(grid.center(start)) {
        mark(grid, start, CellState::Navigable);
    }

    let hfov = hfov_deg.to_radians();
    let rays = ((hfov * range / RAY_STEP).ceil() as usize).max(1) + 1;
    let samples = (range / RAY_STEP).floor() as usize;
    for r in 0..rays {
        let theta = pose.heading - hfov / 2.0 + hfov * r as f64 / (rays - 1).max(1) as f64;
        let dir = Position2::new(theta.cos(), theta.sin());
        let mut last = start;
        for s in 1..=samples {
            let p = pose.position.add(dir.scale(s as f64 * RAY_STEP));
            let Some(idx) = grid.index_of(p) else { break };
            if idx == last {
                continue;
            }
            last = idx;
            if grid.state(idx) == CellState::Occupied || truth.blocked(grid.center(idx)) {
                mark(grid, idx, CellState::Occupied);
                break;
            }
            mark(grid, idx, CellState::Navigable);
        }
    }
    Ok(changed)
}

/// Flags every navigable cell whose center lies within `radius` of `waypoint`.
/// Returns the number of newly explored cells.
pub fn mark_explored(grid: &mut OccupancyGrid, waypoint: Position2, radius: f64) -> usize {
    let cs = grid.cell_size();
    let o = grid.origin();
    let r2 = radius * radius;
    let col_lo = (((waypoint.x - radius - o.x) / cs).floor() as i64).max(0);
    let col_hi = (((waypoint.x + radius - o.x) / cs).ceil() as i64).min(grid.width() as i64 - 1);
    let row_lo = (((waypoint.y - radius - o.y) / cs).floor() as i64).max(0);
    let row_hi = (((waypoint.y + radius - o.y) / cs).ceil() as i64).min(grid.height() as i64 - 1);
    let mut added = 0;
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            let idx = GridIndex::new(row as u32, col as u32);
            if grid.center(idx).distance_sq(waypoint) <= r2
                && grid.is_unexplored_navigable(idx)
                && grid.set_explored(idx)
            {
                added += 1;
            }
        }
    }
    added
}

/// 8-connected components of unexplored navigable cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionLabeling {
    /// Components larger than the size floor, ordered by their lowest cell.
    pub regions: Vec<BTreeSet<GridIndex>>,
    /// Components at or below the size floor.
    pub discarded: Vec<BTreeSet<GridIndex>>,
}

pub fn extract_unexplored_regions(grid: &OccupancyGrid, min_cells: usize) -> RegionLabeling {
    let mut seen = vec![false; grid.len()];
    let flat = |i: GridIndex| i.row as usize * grid.width() as usize + i.col as usize;
    let mut out = RegionLabeling::default();
    for idx in grid.indices() {
        if seen[flat(idx)] || !grid.is_unexplored_navigable(idx) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([idx]);
        seen[flat(idx)] = true;
        while let Some(c) = queue.pop_front() {
            comp.insert(c);
            for n in grid.neighbors8(c) {
                if !seen[flat(n)] && grid.is_unexplored_navigable(n) {
                    seen[flat(n)] = true;
                    queue.push_back(n);
                }
            }
        }
        if comp.len() > min_cells {
            out.regions.push(comp);
        } else {
            out.discarded.push(comp);
        }
    }
    out
}

/// `|a ∩ b| / |a ∪ b|`, or 1 when both are empty.
pub fn region_iou(a: &BTreeSet<GridIndex>, b: &BTreeSet<GridIndex>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Width in degrees of the smallest circular arc holding every bearing from
/// `vantage` to the region's cell centers.
pub fn angular_span(
    region: &BTreeSet<GridIndex>,
    vantage: Position2,
    grid: &OccupancyGrid,
) -> Result<f64, FrontierError> {
    if let Some(v) = grid.index_of(vantage) {
        if region.contains(&v) {
            return Err(FrontierError::DegenerateVantage);
        }
    }
    let mut bearings: Vec<f64> =
        region.iter().map(|c| vantage.bearing_to(grid.center(*c)).to_degrees()).collect();
    Ok(minimal_arc_deg(&mut bearings))
}

/// Smallest arc (degrees) covering all bearings (degrees in `[0, 360)`).
pub fn minimal_arc_deg(bearings: &mut [f64]) -> f64 {
    if bearings.len() < 2 {
        return 0.0;
    }
    bearings.sort_by(f64::total_cmp);
    let mut max_gap = bearings[0] + 360.0 - bearings[bearings.len() - 1];
    for w in bearings.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    360.0 - max_gap
}

pub fn split_region(
    region: &BTreeSet<GridIndex>,
    grid: &OccupancyGrid,
) -> Result<(BTreeSet<GridIndex>, BTreeSet<GridIndex>), FrontierError> {
    if region.len() < 2 {
        return Err(FrontierError::InvalidSplit(region.len()));
    }
    let pts: Vec<(GridIndex, Position2)> = region.iter().map(|c| (*c, grid.center(*c))).collect();
    let (a, b) = kmeans::split2(&pts);
    Ok((a.into_iter().collect(), b.into_iter().collect()))
}

/// Center of the explored cell bordering `region` that is nearest the region's
/// centroid; ties go to the lowest `(row, col)`.
pub fn frontier_anchor(region: &BTreeSet<GridIndex>, grid: &OccupancyGrid) -> Result<Position2, FrontierError> {
    if region.is_empty() {
        return Err(FrontierError::DetachedRegion);
    }
    let sum = region.iter().fold(Position2::default(), |acc, c| acc.add(grid.center(*c)));
    let centroid = sum.scale(1.0 / region.len() as f64);
    let mut candidates = BTreeSet::new();
    for c in region {
        for n in grid.neighbors8(*c) {
            if grid.is_explored(n) && !region.contains(&n) {
                candidates.insert(n);
            }
        }
    }
    let mut best: Option<(f64, GridIndex)> = None;
    for c in candidates {
        let d = grid.center(c).distance_sq(centroid);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, c));
        }
    }
    best.map(|(_, c)| grid.center(c)).ok_or(FrontierError::DetachedRegion)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "id", rename_all = "snake_case")]
pub enum FrontierEvent {
    Added(FrontierId),
    Updated(FrontierId),
    Removed(FrontierId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierUpdate {
    pub frontiers: BTreeMap<FrontierId, Frontier>,
    pub events: Vec<FrontierEvent>,
    /// Unexplored navigable cells not represented by any frontier (small or
    /// detached pieces).
    pub discarded: BTreeSet<GridIndex>,
}

/// Re-extracts unexplored regions, splits wide ones, and reconciles them with
/// the previous frontier set by greedy max-IoU matching.
///
/// A match at or above the IoU threshold keeps its id, observation and stale
/// flag, and only its region and anchor follow the map. A weaker match is
/// replaced and marked stale; unmatched regions become new stale frontiers
/// and unmatched old frontiers are removed. `next_id` supplies fresh ids.
pub fn update_frontiers(
    frontiers: &BTreeMap<FrontierId, Frontier>,
    grid: &OccupancyGrid,
    agent: Pose,
    cfg: &EpisodeConfig,
    mut next_id: impl FnMut() -> FrontierId,
) -> FrontierUpdate {
    let labeling = extract_unexplored_regions(grid, cfg.min_frontier_cells);
    let mut discarded: BTreeSet<GridIndex> = labeling.discarded.into_iter().flatten().collect();

    let mut pieces: Vec<(BTreeSet<GridIndex>, Position2)> = Vec::new();
    let mut work: Vec<BTreeSet<GridIndex>> = labeling.regions;
    while let Some(region) = work.pop() {
        if region.len() <= cfg.min_frontier_cells {
            discarded.extend(region);
            continue;
        }
        let too_wide = match angular_span(&region, agent.position, grid) {
            Ok(span) => span > cfg.span_split_threshold_deg,
            Err(_) => true,
        };
        if too_wide {
            if let Ok((a, b)) = split_region(&region, grid) {
                work.push(a);
                work.push(b);
                continue;
            }
        }
        match frontier_anchor(&region, grid) {
            Ok(anchor) => pieces.push((region, anchor)),
            Err(_) => discarded.extend(region),
        }
    }
    pieces.sort_by_key(|(r, _)| r.first().copied());

    let mut owner: BTreeMap<GridIndex, FrontierId> = BTreeMap::new();
    for f in frontiers.values() {
        for c in &f.region {
            owner.insert(*c, f.id);
        }
    }
    let mut pairs: Vec<(f64, FrontierId, usize)> = Vec::new();
    for (i, (region, _)) in pieces.iter().enumerate() {
        let mut overlap: BTreeMap<FrontierId, usize> = BTreeMap::new();
        for c in region {
            if let Some(id) = owner.get(c) {
                *overlap.entry(*id).or_default() += 1;
            }
        }
        for (id, inter) in overlap {
            let old = frontiers[&id].region.len();
            pairs.push((inter as f64 / (region.len() + old - inter) as f64, id, i));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut matched_new: BTreeMap<usize, (FrontierId, f64)> = BTreeMap::new();
    let mut matched_old: BTreeSet<FrontierId> = BTreeSet::new();
    for (iou, id, i) in pairs {
        if matched_old.contains(&id) || matched_new.contains_key(&i) {
            continue;
        }
        matched_old.insert(id);
        matched_new.insert(i, (id, iou));
    }

    let mut out = BTreeMap::new();
    let mut events = Vec::new();
    for (i, (region, anchor)) in pieces.into_iter().enumerate() {
        match matched_new.get(&i) {
            Some(&(id, iou)) => {
                let old = &frontiers[&id];
                let updated = iou < cfg.iou_update_threshold;
                if updated {
                    events.push(FrontierEvent::Updated(id));
                }
                out.insert(id, Frontier { id, region, anchor, stale: old.stale || updated, ..old.clone() });
            }
            None => {
                let id = next_id();
                events.push(FrontierEvent::Added(id));
                out.insert(
                    id,
                    Frontier { id, region, anchor, observed_from: agent, observed_step: 0, stale: true },
                );
            }
        }
    }
    for id in frontiers.keys() {
        if !matched_old.contains(id) {
            events.push(FrontierEvent::Removed(*id));
        }
    }
    FrontierUpdate { frontiers: out, events, discarded }
}

/// Re-captures every stale frontier from the current pose.
pub fn recapture_stale(frontiers: &mut BTreeMap<FrontierId, Frontier>, agent: Pose, step: u32) {
    for f in frontiers.values_mut().filter(|f| f.stale) {
        f.observed_from = agent;
        f.observed_step = step;
        f.stale = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_grid(w: f64, h: f64) -> OccupancyGrid {
        OccupancyGrid::covering(w, h, 0.1).unwrap()
    }

    fn cells(v: &[(u32, u32)]) -> BTreeSet<GridIndex> {
        v.iter().map(|&(r, c)| GridIndex::new(r, c)).collect()
    }

    #[test]
    fn carve_open_wedge() {
        let mut g = open_grid(12.0, 12.0);
        let pose = Pose::new(Position2::new(6.05, 6.05), 0.0);
        carve_free_space(&mut g, pose, 90.0, 5.0, &|_: Position2| false).unwrap();
        for idx in g.indices() {
            let c = g.center(idx);
            let d = c.distance(pose.position);
            let bearing = crate::model::angle_diff(pose.position.bearing_to(c), 0.0).to_degrees();
            if d <= 4.9 && d > 0.2 && bearing <= 44.0 {
                assert!(g.is_navigable(idx), "{idx:?} inside the wedge");
            }
            if d > 5.1 || (d > 0.2 && bearing > 46.0) {
                assert_eq!(g.state(idx), CellState::Unknown, "{idx:?} outside the wedge");
            }
        }
    }

    #[test]
    fn carve_stops_at_walls_and_is_idempotent() {
        let mut g = open_grid(10.0, 10.0);
        let wall = |p: Position2| p.x >= 3.0 && p.x < 3.2;
        let pose = Pose::new(Position2::new(1.05, 5.05), 0.0);
        carve_free_space(&mut g, pose, 90.0, 5.0, &wall).unwrap();
        let behind = g.index_of(Position2::new(4.0, 5.05)).unwrap();
        let front = g.index_of(Position2::new(2.5, 5.05)).unwrap();
        let wall_cell = g.index_of(Position2::new(3.05, 5.05)).unwrap();
        assert_eq!(g.state(behind), CellState::Unknown);
        assert_eq!(g.state(front), CellState::Navigable);
        assert_eq!(g.state(wall_cell), CellState::Occupied);
        let before = g.clone();
        assert_eq!(carve_free_space(&mut g, pose, 90.0, 5.0, &wall).unwrap(), 0);
        assert_eq!(g, before);
        assert_eq!(
            carve_free_space(&mut g, Pose::new(Position2::new(-1.0, 0.0), 0.0), 90.0, 5.0, &wall),
            Err(FrontierError::OutOfBounds { x: -1.0, y: 0.0 })
        );
    }

    #[test]
    fn explored_disc_only_on_navigable_cells() {
        let text = "\
            ??????????\n\
            ..........\n\
            ..........\n\
            ..........\n";
        let mut g = OccupancyGrid::from_ascii(text, Position2::default(), 0.1).unwrap();
        let n = mark_explored(&mut g, Position2::new(0.5, 0.2), 0.25);
        assert!(n > 0);
        for idx in g.indices() {
            let inside = g.center(idx).distance(Position2::new(0.5, 0.2)) <= 0.25;
            assert_eq!(g.is_explored(idx), inside && g.is_navigable(idx));
        }
        assert_eq!(mark_explored(&mut g, Position2::new(0.5, 0.2), 0.25), 0);
    }

    #[test]
    fn extraction_applies_size_floor_and_connectivity() {
        let mut g = open_grid(2.0, 1.0);
        for c in 0..25 {
            g.set_state(GridIndex::new(0, c % 20), CellState::Navigable);
            g.set_state(GridIndex::new(2, c % 5), CellState::Navigable);
        }
        for c in 0..5 {
            g.set_state(GridIndex::new(1, c), CellState::Navigable);
        }
        // Rows 0..=2 cols 0..5 form one blob plus the tail along row 0: 15 + 15 = 30 cells.
        let lab = extract_unexplored_regions(&g, 20);
        assert_eq!(lab.regions.len(), 1);
        assert_eq!(lab.regions[0].len(), 30);

        let mut g = open_grid(3.0, 1.0);
        for c in 0..25 {
            g.set_state(GridIndex::new(0, c), CellState::Navigable);
        }
        for c in 26..30 {
            for r in 0..3 {
                g.set_state(GridIndex::new(r, c), CellState::Navigable);
            }
        }
        let lab = extract_unexplored_regions(&g, 20);
        assert_eq!(lab.regions.len(), 1);
        assert_eq!(lab.regions[0].len(), 25);
        assert_eq!(lab.discarded.len(), 1);
        assert_eq!(lab.discarded[0].len(), 12);
    }

    #[test]
    fn iou_examples() {
        let a: BTreeSet<GridIndex> = (0..30).map(|c| GridIndex::new(0, c)).collect();
        assert_eq!(region_iou(&a, &a), 1.0);
        let b: BTreeSet<GridIndex> = (0..30).map(|c| GridIndex::new(1, c)).collect();
        assert_eq!(region_iou(&a, &b), 0.0);
        let shared: BTreeSet<GridIndex> = (0..20).map(|c| GridIndex::new(0, c)).collect();
        let grown: BTreeSet<GridIndex> = (0..25).map(|c| GridIndex::new(0, c)).collect();
        assert_eq!(region_iou(&shared, &grown), 0.8);
        assert_eq!(region_iou(&BTreeSet::new(), &BTreeSet::new()), 1.0);
    }

    #[test]
    fn span_examples() {
        assert_eq!(minimal_arc_deg(&mut [10.0, 170.0]), 160.0);
        assert_eq!(minimal_arc_deg(&mut [350.0, 10.0]), 20.0);
        assert_eq!(minimal_arc_deg(&mut [42.0]), 0.0);

        let g = open_grid(3.0, 3.0);
        let line = cells(&[(15, 20), (15, 22), (15, 25)]);
        let vantage = g.center(GridIndex::new(15, 10));
        assert!(angular_span(&line, vantage, &g).unwrap().abs() < 1e-9);
        assert_eq!(angular_span(&line, g.center(GridIndex::new(15, 22)), &g), Err(FrontierError::DegenerateVantage));
    }

    #[test]
    fn anchor_on_corridor_boundary() {
        let text = "eeeee....";
        let g = OccupancyGrid::from_ascii(text, Position2::default(), 0.1).unwrap();
        let region = cells(&[(0, 5), (0, 6), (0, 7), (0, 8)]);
        let a = frontier_anchor(&region, &g).unwrap();
        assert!((a.x - 0.45).abs() < 1e-12 && (a.y - 0.05).abs() < 1e-12);

        let g = OccupancyGrid::from_ascii("???...\n?e....\n??....", Position2::default(), 0.1).unwrap();
        let region = cells(&[(1, 2), (1, 3), (2, 3)]);
        let a = frontier_anchor(&region, &g).unwrap();
        assert_eq!(g.index_of(a), Some(GridIndex::new(1, 1)));

        let g = OccupancyGrid::from_ascii("???\n?.?\n???", Position2::default(), 0.1).unwrap();
        assert_eq!(frontier_anchor(&cells(&[(1, 1)]), &g), Err(FrontierError::DetachedRegion));
    }
}
