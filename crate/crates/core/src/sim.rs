//! Synthetic flat-plan environment: seeded room-grid scenes, a field-of-view
//! observation model with wall occlusion, and a ground-truth geodesic oracle.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontier::GroundTruth;
use crate::grid::{GridIndex, OccupancyGrid, NEIGHBORS8};
use crate::model::{angle_diff, FrameCandidate, FrameId, ObjectId, Pose, Position2, SceneObject};

pub const SCENE_FORMAT: &str = "snapscene/1";
pub const GT_CELL: f64 = 0.1;
pub const WALL_THICKNESS: f64 = 0.2;
pub const MIN_DOOR_WIDTH: f64 = 0.8;
pub const MAX_BOUNDS: f64 = 30.0;

const CATEGORIES: &[&str] = &[
    "armchair", "bathtub", "bed", "bookshelf", "cabinet", "chair", "clock", "coffee table", "couch",
    "desk", "dining table", "dishwasher", "dresser", "fireplace", "guitar", "ironing board", "lamp",
    "laptop", "microwave", "mirror", "nightstand", "ottoman", "oven", "painting", "piano", "pillow",
    "potted plant", "printer", "refrigerator", "rug", "shoe rack", "sink", "speaker", "stool",
    "stove", "television", "toilet", "towel", "vase", "washing machine",
];

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("scene generation failed: {0}")]
    GenerationFailed(String),
    #[error("pose ({x:.2}, {y:.2}) is not navigable")]
    InvalidPose { x: f64, y: f64 },
    #[error("no path between the given points")]
    Unreachable,
    #[error("malformed scene: {0}")]
    Malformed(String),
}

/// Axis-aligned rectangle with lower-left corner `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn contains(&self, p: Position2) -> bool {
        p.x >= self.x && p.x <= self.x + self.w && p.y >= self.y && p.y <= self.y + self.h
    }

    /// Whether the closed segment `a → b` touches the rectangle's interior.
    pub fn blocks_segment(&self, a: Position2, b: Position2) -> bool {
        // Liang-Barsky clipping against the open box.
        let d = b.sub(a);
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (p, q) in [
            (-d.x, a.x - self.x),
            (d.x, self.x + self.w - a.x),
            (-d.y, a.y - self.y),
            (d.y, self.y + self.h - a.y),
        ] {
            if p == 0.0 {
                if q <= 0.0 {
                    return false;
                }
                continue;
            }
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 >= t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ObjectEntry {
    id: ObjectId,
    category: String,
    x: f64,
    y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneDocument {
    format: String,
    bounds: Bounds,
    walls: Vec<Rect>,
    objects: Vec<ObjectEntry>,
    spawn_points: Vec<Position2>,
    seed: u64,
}

/// Immutable scene with a precomputed ground-truth occupancy raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SceneDocument", try_from = "SceneDocument")]
pub struct Scene {
    pub bounds: Bounds,
    pub walls: Vec<Rect>,
    pub objects: Vec<SceneObject>,
    pub spawn_points: Vec<Position2>,
    pub seed: u64,
    truth: OccupancyGrid,
}

impl From<Scene> for SceneDocument {
    fn from(s: Scene) -> Self {
        SceneDocument {
            format: SCENE_FORMAT.into(),
            bounds: s.bounds,
            walls: s.walls,
            objects: s
                .objects
                .into_iter()
                .map(|o| ObjectEntry { id: o.id, category: o.category, x: o.position.x, y: o.position.y })
                .collect(),
            spawn_points: s.spawn_points,
            seed: s.seed,
        }
    }
}

impl TryFrom<SceneDocument> for Scene {
    type Error = SimError;

    fn try_from(d: SceneDocument) -> Result<Self, SimError> {
        if d.format != SCENE_FORMAT {
            return Err(SimError::Malformed(format!("unsupported format {:?}", d.format)));
        }
        let objects = d
            .objects
            .into_iter()
            .map(|e| SceneObject { id: e.id, category: e.category, position: Position2::new(e.x, e.y), confidence: 1.0 })
            .collect();
        Scene::new(d.bounds, d.walls, objects, d.spawn_points, d.seed)
    }
}

impl Scene {
    pub fn new(
        bounds: Bounds,
        walls: Vec<Rect>,
        objects: Vec<SceneObject>,
        spawn_points: Vec<Position2>,
        seed: u64,
    ) -> Result<Self, SimError> {
        if !(bounds.width > 0.0 && bounds.height > 0.0 && bounds.width <= 1000.0 && bounds.height <= 1000.0) {
            return Err(SimError::Malformed("bounds must be positive".into()));
        }
        let mut truth = OccupancyGrid::covering(bounds.width, bounds.height, GT_CELL)
            .map_err(|e| SimError::Malformed(e.to_string()))?;
        let cells: Vec<GridIndex> = truth.indices().collect();
        for idx in cells {
            let c = truth.center(idx);
            let state = if walls.iter().any(|w| w.contains(c)) {
                crate::grid::CellState::Occupied
            } else {
                crate::grid::CellState::Navigable
            };
            truth.set_state(idx, state);
        }
        let mut ids = BTreeSet::new();
        for o in &objects {
            if !ids.insert(o.id) {
                return Err(SimError::Malformed(format!("duplicate object id {}", o.id)));
            }
            if o.category.is_empty() {
                return Err(SimError::Malformed(format!("object {} has no category", o.id)));
            }
        }
        let scene = Scene { bounds, walls, objects, spawn_points, seed, truth };
        for p in &scene.spawn_points {
            if !scene.is_navigable(*p) {
                return Err(SimError::Malformed(format!("spawn point ({}, {}) is not navigable", p.x, p.y)));
            }
        }
        Ok(scene)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Malformed(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization is infallible")
    }

    pub fn scene_id(&self) -> String {
        format!("scene-{}", self.seed)
    }

    /// Ground-truth occupancy at the 0.1 m resolution.
    pub fn truth(&self) -> &OccupancyGrid {
        &self.truth
    }

    /// An empty map with the same frame as the ground truth.
    pub fn blank_grid(&self) -> OccupancyGrid {
        OccupancyGrid::covering(self.bounds.width, self.bounds.height, GT_CELL).expect("bounds validated")
    }

    pub fn object(&self, id: ObjectId) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn is_navigable(&self, p: Position2) -> bool {
        self.truth.index_of(p).is_some_and(|i| self.truth.is_navigable(i))
    }

    pub fn segment_clear(&self, a: Position2, b: Position2) -> bool {
        !self.walls.iter().any(|w| w.blocks_segment(a, b))
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.objects.iter().map(|o| o.category.as_str()).collect()
    }
}

impl GroundTruth for Scene {
    fn blocked(&self, p: Position2) -> bool {
        !self.is_navigable(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub rooms: u32,
    pub objects_per_room: u32,
    /// Nominal room side length, meters.
    pub room_size: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { rooms: 3, objects_per_room: 5, room_size: 5.0 }
    }
}

fn quantize(v: f64, q: f64) -> f64 {
    (v / q).round() * q
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Deterministic room-grid scene for `(seed, params)`.
pub fn generate_scene(seed: u64, params: SceneParams) -> Result<Scene, SimError> {
    let fail = |m: &str| Err(SimError::GenerationFailed(m.into()));
    if !(1..=8).contains(&params.rooms) {
        return fail("rooms must be within 1..=8");
    }
    if !(1..=10).contains(&params.objects_per_room) {
        return fail("objects per room must be within 1..=10");
    }
    if !(2.0..=10.0).contains(&params.room_size) {
        return fail("room size must be within 2..=10 m");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.rooms as usize;
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);

    let span = |count: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..count).map(|_| round2(quantize(params.room_size * rng.gen_range(0.8..=1.2), GT_CELL))).collect()
    };
    let widths = span(cols, &mut rng);
    let heights = span(rows, &mut rng);
    let edges = |sizes: &[f64]| -> Vec<f64> {
        let mut e = vec![0.0];
        for s in sizes {
            let last = *e.last().unwrap();
            e.push(round2(last + WALL_THICKNESS + s));
        }
        e
    };
    let xe = edges(&widths);
    let ye = edges(&heights);
    let bounds = Bounds { width: round2(xe[cols] + WALL_THICKNESS), height: round2(ye[rows] + WALL_THICKNESS) };
    if bounds.width > MAX_BOUNDS || bounds.height > MAX_BOUNDS {
        return fail("layout exceeds 30 m bounds");
    }
    // Interior of layout cell (r, c).
    let interior = |r: usize, c: usize| Rect {
        x: round2(xe[c] + WALL_THICKNESS),
        y: round2(ye[r] + WALL_THICKNESS),
        w: widths[c],
        h: heights[r],
    };
    let used = |r: usize, c: usize| r * cols + c < n;

    // Random spanning tree over used cells, plus occasional extra doors.
    let mut adjacent: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        if c + 1 < cols && used(r, c + 1) {
            adjacent.push((i, i + 1));
        }
        if r + 1 < rows && used(r + 1, c) {
            adjacent.push((i, i + cols));
        }
    }
    adjacent.shuffle(&mut rng);
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut i = i;
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut doors: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(a, b) in &adjacent {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            doors.insert((a, b));
        } else if rng.gen_bool(0.3) {
            doors.insert((a, b));
        }
    }

    let mut walls = Vec::new();
    let door_gap = |lo: f64, len: f64, rng: &mut ChaCha8Rng| -> (f64, f64) {
        let width = round2(quantize(rng.gen_range(1.0..=1.4), GT_CELL)).max(MIN_DOOR_WIDTH);
        let slack = ((len - width - 0.6) / GT_CELL).floor().max(0.0) as u32;
        let start = round2(lo + 0.3 + GT_CELL * rng.gen_range(0..=slack) as f64);
        (start, width)
    };
    // Vertical wall lines.
    for (i, &x) in xe.iter().enumerate() {
        for r in 0..rows {
            let y0 = ye[r];
            let len = heights[r] + 2.0 * WALL_THICKNESS;
            let door = (i > 0 && i < cols)
                .then(|| (r * cols + i - 1, r * cols + i))
                .filter(|pair| doors.contains(pair));
            match door {
                Some(_) => {
                    let (gs, gw) = door_gap(y0 + WALL_THICKNESS, heights[r], &mut rng);
                    walls.push(Rect { x, y: y0, w: WALL_THICKNESS, h: round2(gs - y0) });
                    let top = round2(gs + gw);
                    walls.push(Rect { x, y: top, w: WALL_THICKNESS, h: round2(y0 + len - top) });
                }
                None => walls.push(Rect { x, y: y0, w: WALL_THICKNESS, h: round2(len) }),
            }
        }
    }
    // Horizontal wall lines.
    for (j, &y) in ye.iter().enumerate() {
        for c in 0..cols {
            let x0 = xe[c];
            let len = widths[c] + 2.0 * WALL_THICKNESS;
            let door = (j > 0 && j < rows)
                .then(|| ((j - 1) * cols + c, j * cols + c))
                .filter(|pair| doors.contains(pair));
            match door {
                Some(_) => {
                    let (gs, gw) = door_gap(x0 + WALL_THICKNESS, widths[c], &mut rng);
                    walls.push(Rect { x: x0, y, w: round2(gs - x0), h: WALL_THICKNESS });
                    let right = round2(gs + gw);
                    walls.push(Rect { x: right, y, w: round2(x0 + len - right), h: WALL_THICKNESS });
                }
                None => walls.push(Rect { x: x0, y, w: round2(len), h: WALL_THICKNESS }),
            }
        }
    }
    for i in n..rows * cols {
        walls.push(interior(i / cols, i % cols));
    }

    let mut pool: Vec<&str> = Vec::new();
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut spawn_points = Vec::new();
    for i in 0..n {
        let room = interior(i / cols, i % cols);
        let mut placed: Vec<Position2> = Vec::new();
        let sample = |margin: f64, rng: &mut ChaCha8Rng, placed: &[Position2]| -> Option<Position2> {
            for _ in 0..200 {
                let p = Position2::new(
                    round2(rng.gen_range(room.x + margin..=room.x + room.w - margin)),
                    round2(rng.gen_range(room.y + margin..=room.y + room.h - margin)),
                );
                if placed.iter().all(|q| q.distance(p) >= 0.6) {
                    return Some(p);
                }
            }
            None
        };
        for _ in 0..params.objects_per_room {
            if pool.is_empty() {
                pool = CATEGORIES.to_vec();
                pool.shuffle(&mut rng);
            }
            let category = pool.pop().expect("pool refilled").to_string();
            let Some(position) = sample(0.3, &mut rng, &placed) else {
                return fail("could not place objects without crowding");
            };
            placed.push(position);
            objects.push(SceneObject { id: ObjectId(objects.len() as u32), category, position, confidence: 1.0 });
        }
        let Some(spawn) = sample(0.5, &mut rng, &placed) else {
            return fail("could not place a spawn point");
        };
        spawn_points.push(spawn);
    }

    let scene = Scene::new(bounds, walls, objects, spawn_points, seed)?;
    let start = scene.truth.index_of(scene.spawn_points[0]).expect("spawn inside bounds");
    let reach = flood(&scene.truth, start);
    let targets = scene.spawn_points.iter().chain(scene.objects.iter().map(|o| &o.position));
    for p in targets {
        match scene.truth.index_of(*p) {
            Some(i) if reach.contains(&i) => {}
            _ => return fail("reachability check failed"),
        }
    }
    Ok(scene)
}

fn flood(grid: &OccupancyGrid, start: GridIndex) -> BTreeSet<GridIndex> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for n in grid.neighbors8(c) {
            if grid.is_navigable(n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen
}

/// Rounded, clamped distance-based detector confidence.
pub fn detection_confidence(distance: f64, range: f64) -> f64 {
    let c = (1.0 - distance / range).clamp(0.1, 1.0);
    (c * 1000.0).round() / 1000.0
}

/// One egocentric view. Objects count as visible when strictly inside the
/// horizontal field of view, no farther than `range`, and not occluded.
pub fn observe(
    scene: &Scene,
    pose: Pose,
    hfov_deg: f64,
    range: f64,
    id: FrameId,
    view_index: u32,
    step: u32,
) -> Result<FrameCandidate, SimError> {
    if !scene.is_navigable(pose.position) {
        return Err(SimError::InvalidPose { x: pose.position.x, y: pose.position.y });
    }
    let half = hfov_deg.to_radians() / 2.0;
    let mut visible_objects = std::collections::BTreeMap::new();
    for o in &scene.objects {
        let d = pose.position.distance(o.position);
        if d > range {
            continue;
        }
        if d > 0.0 && angle_diff(pose.position.bearing_to(o.position), pose.heading) >= half {
            continue;
        }
        if !scene.segment_clear(pose.position, o.position) {
            continue;
        }
        visible_objects.insert(o.id, detection_confidence(d, range));
    }
    Ok(FrameCandidate { id, pose, view_index, step, visible_objects })
}

/// `n` views centered on the pose heading, `gap_deg` apart, ascending by
/// heading offset; frame ids are consecutive from `first_id`.
pub fn egocentric_sweep(
    scene: &Scene,
    pose: Pose,
    n: u32,
    gap_deg: f64,
    hfov_deg: f64,
    range: f64,
    first_id: FrameId,
    step: u32,
) -> Result<Vec<FrameCandidate>, SimError> {
    (0..n)
        .map(|i| {
            let offset = (i as f64 - (n as f64 - 1.0) / 2.0) * gap_deg;
            let view = Pose::new(pose.position, pose.heading + offset.to_radians());
            observe(scene, view, hfov_deg, range, FrameId(first_id.0 + i), i, step)
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
struct Queued(f64, GridIndex);

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest-path distances over navigable cells of a grid,
/// 8-connected with Euclidean step costs.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    source: GridIndex,
    dist: Vec<f64>,
    parent: Vec<Option<GridIndex>>,
}

impl DistanceField {
    /// Dijkstra from `source` over cells accepted by `passable`. With
    /// `no_corner_cut`, a diagonal move also needs both orthogonal cells passable.
    pub fn compute(
        grid: &OccupancyGrid,
        source: GridIndex,
        passable: impl Fn(GridIndex) -> bool,
        no_corner_cut: bool,
    ) -> Self {
        let width = grid.width() as usize;
        let flat = |i: GridIndex| i.row as usize * width + i.col as usize;
        let mut dist = vec![f64::INFINITY; grid.len()];
        let mut parent = vec![None; grid.len()];
        let cs = grid.cell_size();
        let diag = std::f64::consts::SQRT_2 * cs;
        dist[flat(source)] = 0.0;
        let mut heap = BinaryHeap::from([Queued(0.0, source)]);
        while let Some(Queued(d, c)) = heap.pop() {
            if d > dist[flat(c)] {
                continue;
            }
            for (dr, dc) in NEIGHBORS8 {
                let Some(n) = grid.checked(c.row as i64 + dr, c.col as i64 + dc) else { continue };
                if !passable(n) {
                    continue;
                }
                if no_corner_cut && dr != 0 && dc != 0 {
                    let side_a = grid.checked(c.row as i64 + dr, c.col as i64);
                    let side_b = grid.checked(c.row as i64, c.col as i64 + dc);
                    if !side_a.is_some_and(&passable) || !side_b.is_some_and(&passable) {
                        continue;
                    }
                }
                let nd = d + if dr != 0 && dc != 0 { diag } else { cs };
                if nd < dist[flat(n)] {
                    dist[flat(n)] = nd;
                    parent[flat(n)] = Some(c);
                    heap.push(Queued(nd, n));
                }
            }
        }
        DistanceField { width, source, dist, parent }
    }

    fn flat(&self, i: GridIndex) -> usize {
        i.row as usize * self.width + i.col as usize
    }

    pub fn source(&self) -> GridIndex {
        self.source
    }

    pub fn distance(&self, to: GridIndex) -> Option<f64> {
        self.dist.get(self.flat(to)).copied().filter(|d| d.is_finite())
    }

    /// Cells from `to` back to the source, inclusive at both ends.
    pub fn path_to_source(&self, to: GridIndex) -> Option<Vec<GridIndex>> {
        self.distance(to)?;
        let mut path = vec![to];
        let mut c = to;
        while let Some(p) = self.parent[self.flat(c)] {
            path.push(p);
            c = p;
        }
        Some(path)
    }
}

/// Ground-truth distance field rooted at `from`.
pub fn geodesic_field(scene: &Scene, from: Position2) -> Result<DistanceField, SimError> {
    let truth = &scene.truth;
    let src = truth
        .index_of(from)
        .filter(|i| truth.is_navigable(*i))
        .ok_or(SimError::InvalidPose { x: from.x, y: from.y })?;
    Ok(DistanceField::compute(truth, src, |i| truth.is_navigable(i), false))
}

pub fn geodesic_distance(scene: &Scene, a: Position2, b: Position2) -> Result<f64, SimError> {
    let field = geodesic_field(scene, a)?;
    let bi = scene.truth.index_of(b).ok_or(SimError::Unreachable)?;
    field.distance(bi).ok_or(SimError::Unreachable)
}

/// Ground-truth shortest path from `a` to `b` as cell centers.
pub fn geodesic_polyline(scene: &Scene, a: Position2, b: Position2) -> Result<Vec<Position2>, SimError> {
    let field = geodesic_field(scene, b)?;
    let ai = scene.truth.index_of(a).ok_or(SimError::Unreachable)?;
    let path = field.path_to_source(ai).ok_or(SimError::Unreachable)?;
    Ok(path.into_iter().map(|c| scene.truth.center(c)).collect())
}

/// Distance from `p` to the nearest point of a polyline (a single point counts).
pub fn point_polyline_distance(p: Position2, line: &[Position2]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => p.distance(*only),
        _ => line
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let ab = b.sub(a);
                let len2 = ab.norm().powi(2);
                let t = if len2 == 0.0 { 0.0 } else { (p.sub(a).x * ab.x + p.sub(a).y * ab.y) / len2 };
                p.distance(a.lerp(b, t.clamp(0.0, 1.0)))
            })
            .fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Question,
    ObjectGoal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub kind: TaskKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_object: Option<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_position: Option<Position2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_key: Option<String>,
}

impl Task {
    pub fn object_goal(id: impl Into<String>, object: &SceneObject) -> Task {
        Task {
            id: id.into(),
            kind: TaskKind::ObjectGoal,
            text: format!("Can you find the {}?", object.category),
            goal_object: Some(object.id),
            goal_position: Some(object.position),
            answer_key: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id: must not be empty".into());
        }
        if self.text.trim().is_empty() {
            return Err("text: must not be empty".into());
        }
        match self.kind {
            TaskKind::ObjectGoal if self.goal_object.is_none() => Err("goal_object: required for object_goal".into()),
            TaskKind::Question if self.answer_key.is_none() => Err("answer_key: required for question".into()),
            _ => Ok(()),
        }
    }
}

/// `count` seeded tasks over the scene's objects, alternating kinds when
/// `kind` is `None`.
pub fn generate_tasks(scene: &Scene, seed: u64, count: usize, kind: Option<TaskKind>) -> Vec<Task> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c_0b1e);
    let mut order: Vec<&SceneObject> = scene.objects.iter().collect();
    order.shuffle(&mut rng);
    (0..count)
        .filter_map(|i| {
            let o = *order.get(i % order.len().max(1))?;
            let k = kind.unwrap_or(if i % 2 == 0 { TaskKind::ObjectGoal } else { TaskKind::Question });
            let id = format!("{}-t{}", scene.scene_id(), i);
            Some(match k {
                TaskKind::ObjectGoal => Task::object_goal(id, o),
                TaskKind::Question => Task {
                    id,
                    kind: TaskKind::Question,
                    text: format!("Is there a {} in the house?", o.category),
                    goal_object: Some(o.id),
                    goal_position: Some(o.position),
                    answer_key: Some("yes".into()),
                },
            })
        })
        .collect()
}
