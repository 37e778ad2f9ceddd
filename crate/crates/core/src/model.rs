//! Core domain model: identifiers, planar geometry, objects, frame candidates,
//! memory snapshots, frontiers, the episode configuration and the aggregate
//! [`SceneMemory`] together with its structural validator.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellState, GridIndex, OccupancyGrid};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(ObjectId, "o");
id_type!(FrameId, "I");
id_type!(SnapshotId, "S");
id_type!(FrontierId, "F");

/// Horizontal position in meters. Heights are never stored.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position2 {
    pub x: f64,
    pub y: f64,
}

impl Position2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, other: Position2) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(self, other: Position2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn add(self, o: Position2) -> Position2 {
        Position2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Position2) -> Position2 {
        Position2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, k: f64) -> Position2 {
        Position2::new(self.x * k, self.y * k)
    }

    /// Bearing of `to` seen from `self`, in `[0, 2π)`.
    pub fn bearing_to(self, to: Position2) -> f64 {
        normalize_angle((to.y - self.y).atan2(to.x - self.x))
    }

    pub fn lerp(self, to: Position2, t: f64) -> Position2 {
        Position2::new(self.x + (to.x - self.x) * t, self.y + (to.y - self.y) * t)
    }
}

/// Wraps an angle in radians into `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Absolute angular difference in `[0, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    if d > std::f64::consts::PI {
        TAU - d
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Position2,
    /// Radians in `[0, 2π)`.
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Position2, heading: f64) -> Self {
        Self { position, heading: normalize_angle(heading) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: ObjectId,
    pub category: String,
    pub position: Position2,
    pub confidence: f64,
}

/// One egocentric observation and the objects co-visible in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCandidate {
    pub id: FrameId,
    pub pose: Pose,
    pub view_index: u32,
    pub step: u32,
    #[serde(with = "visibility_list")]
    pub visible_objects: BTreeMap<ObjectId, f64>,
}

impl FrameCandidate {
    pub fn sees(&self, id: ObjectId) -> bool {
        self.visible_objects.contains_key(&id)
    }

    pub fn covers<'a>(&self, cluster: impl IntoIterator<Item = &'a ObjectId>) -> bool {
        cluster.into_iter().all(|id| self.visible_objects.contains_key(id))
    }
}

mod visibility_list {
    use super::ObjectId;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        id: ObjectId,
        confidence: f64,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<ObjectId, f64>, s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<Entry> = map.iter().map(|(id, c)| Entry { id: *id, confidence: *c }).collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ObjectId, f64>, D::Error> {
        let list = Vec::<Entry>::deserialize(d)?;
        let mut map = BTreeMap::new();
        for e in list {
            if map.insert(e.id, e.confidence).is_some() {
                return Err(serde::de::Error::custom(format!("duplicate visible object {}", e.id)));
            }
        }
        Ok(map)
    }
}

/// A frame candidate together with the cluster of objects it uniquely owns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub id: SnapshotId,
    pub frame: FrameId,
    pub cluster: BTreeSet<ObjectId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub id: FrontierId,
    pub region: BTreeSet<GridIndex>,
    pub anchor: Position2,
    pub observed_from: Pose,
    /// Step at which the frontier observation was last captured.
    pub observed_step: u32,
    pub stale: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} must be {requirement}")]
    Invalid { field: &'static str, requirement: &'static str },
}

/// Every tunable of an exploration episode. Defaults follow the reference
/// hyperparameters; `sensor_range` and `hfov_deg` are simulator choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub n_views: u32,
    pub view_gap_deg: f64,
    pub max_dist: f64,
    pub prefilter_k: usize,
    pub obs_dist: f64,
    pub step_budget: u32,
    pub move_limit: f64,
    pub arrive_radius: f64,
    pub explored_radius: f64,
    pub iou_update_threshold: f64,
    pub span_split_threshold_deg: f64,
    pub min_frontier_cells: usize,
    pub success_radius: f64,
    pub sensor_range: f64,
    pub hfov_deg: f64,
    pub cell_size: f64,
    pub seed: u64,
    /// Keep executing the previous decision until its target is reached
    /// instead of re-deciding after every step.
    pub navigate_to_completion: bool,
    /// Match detections to stored objects by category and proximity instead
    /// of by exact id.
    pub noisy_matching: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_views: 3,
            view_gap_deg: 60.0,
            max_dist: 3.5,
            prefilter_k: 10,
            obs_dist: 0.75,
            step_budget: 50,
            move_limit: 1.0,
            arrive_radius: 0.5,
            explored_radius: 1.7,
            iou_update_threshold: 0.95,
            span_split_threshold_deg: 150.0,
            min_frontier_cells: 20,
            success_radius: 1.0,
            sensor_range: 5.0,
            hfov_deg: 90.0,
            cell_size: 0.1,
            seed: 0,
            navigate_to_completion: false,
            noisy_matching: false,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks: [(bool, &'static str, &'static str); 12] = [
            (self.n_views >= 1, "n_views", "at least 1"),
            (self.prefilter_k >= 1, "prefilter_k", "at least 1"),
            (self.cell_size > 0.0 && self.cell_size.is_finite(), "cell_size", "positive"),
            (self.max_dist >= 0.0, "max_dist", "non-negative"),
            (self.sensor_range >= self.max_dist, "sensor_range", "at least max_dist"),
            (self.hfov_deg > 0.0 && self.hfov_deg <= 360.0, "hfov_deg", "in (0, 360]"),
            (self.move_limit > 0.0, "move_limit", "positive"),
            (self.arrive_radius >= 0.0, "arrive_radius", "non-negative"),
            (self.explored_radius > 0.0, "explored_radius", "positive"),
            (
                self.iou_update_threshold > 0.0 && self.iou_update_threshold <= 1.0,
                "iou_update_threshold",
                "in (0, 1]",
            ),
            (self.obs_dist > 0.0, "obs_dist", "positive"),
            (self.step_budget >= 1, "step_budget", "at least 1"),
        ];
        for (ok, field, requirement) in checks {
            if !ok {
                return Err(ConfigError::Invalid { field, requirement });
            }
        }
        Ok(())
    }
}

/// The full memory state of one episode: O_t, I_t, S_t, F_t, the map and the
/// agent trajectory, plus id counters so new entities get dense ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MemoryDocument", try_from = "MemoryDocument")]
pub struct SceneMemory {
    pub objects: BTreeMap<ObjectId, SceneObject>,
    pub frames: BTreeMap<FrameId, FrameCandidate>,
    pub snapshots: BTreeMap<SnapshotId, MemorySnapshot>,
    pub frontiers: BTreeMap<FrontierId, Frontier>,
    pub grid: OccupancyGrid,
    pub trajectory: Vec<Pose>,
    /// Size floor the frontier set was built under.
    pub min_frontier_cells: usize,
    pub(crate) next_frame: u32,
    pub(crate) next_snapshot: u32,
    pub(crate) next_frontier: u32,
}

impl SceneMemory {
    pub fn new(grid: OccupancyGrid, min_frontier_cells: usize) -> Self {
        Self {
            objects: BTreeMap::new(),
            frames: BTreeMap::new(),
            snapshots: BTreeMap::new(),
            frontiers: BTreeMap::new(),
            grid,
            trajectory: Vec::new(),
            min_frontier_cells,
            next_frame: 0,
            next_snapshot: 0,
            next_frontier: 0,
        }
    }

    pub fn alloc_frame_id(&mut self) -> FrameId {
        let id = FrameId(self.next_frame);
        self.next_frame += 1;
        id
    }

    pub fn alloc_snapshot_id(&mut self) -> SnapshotId {
        let id = SnapshotId(self.next_snapshot);
        self.next_snapshot += 1;
        id
    }

    pub fn alloc_frontier_id(&mut self) -> FrontierId {
        let id = FrontierId(self.next_frontier);
        self.next_frontier += 1;
        id
    }

    pub fn next_frame_id(&self) -> FrameId {
        FrameId(self.next_frame)
    }

    /// Snapshot owning `object`, if any.
    pub fn snapshot_of(&self, object: ObjectId) -> Option<&MemorySnapshot> {
        self.snapshots.values().find(|s| s.cluster.contains(&object))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("memory serialization is infallible")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NextIds {
    frame: u32,
    snapshot: u32,
    frontier: u32,
}

/// Versioned JSON form of [`SceneMemory`] (`"format": "snapmem/1"`).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MemoryDocument {
    format: String,
    objects: Vec<SceneObject>,
    frames: Vec<FrameCandidate>,
    snapshots: Vec<MemorySnapshot>,
    frontiers: Vec<Frontier>,
    grid: OccupancyGrid,
    trajectory: Vec<Pose>,
    min_frontier_cells: usize,
    next_ids: NextIds,
}

pub const MEMORY_FORMAT: &str = "snapmem/1";

impl From<SceneMemory> for MemoryDocument {
    fn from(m: SceneMemory) -> Self {
        MemoryDocument {
            format: MEMORY_FORMAT.to_string(),
            objects: m.objects.into_values().collect(),
            frames: m.frames.into_values().collect(),
            snapshots: m.snapshots.into_values().collect(),
            frontiers: m.frontiers.into_values().collect(),
            grid: m.grid,
            trajectory: m.trajectory,
            min_frontier_cells: m.min_frontier_cells,
            next_ids: NextIds { frame: m.next_frame, snapshot: m.next_snapshot, frontier: m.next_frontier },
        }
    }
}

impl TryFrom<MemoryDocument> for SceneMemory {
    type Error = String;

    fn try_from(d: MemoryDocument) -> Result<Self, Self::Error> {
        if d.format != MEMORY_FORMAT {
            return Err(format!("unsupported memory format {:?}", d.format));
        }
        fn keyed<K: Ord + Copy + fmt::Display, V>(
            items: Vec<V>,
            key: impl Fn(&V) -> K,
            what: &str,
        ) -> Result<BTreeMap<K, V>, String> {
            let mut map = BTreeMap::new();
            for v in items {
                let k = key(&v);
                if map.insert(k, v).is_some() {
                    return Err(format!("duplicate {what} id {k}"));
                }
            }
            Ok(map)
        }
        Ok(SceneMemory {
            objects: keyed(d.objects, |o| o.id, "object")?,
            frames: keyed(d.frames, |f| f.id, "frame")?,
            snapshots: keyed(d.snapshots, |s| s.id, "snapshot")?,
            frontiers: keyed(d.frontiers, |f| f.id, "frontier")?,
            grid: d.grid,
            trajectory: d.trajectory,
            min_frontier_cells: d.min_frontier_cells,
            next_frame: d.next_ids.frame,
            next_snapshot: d.next_ids.snapshot,
            next_frontier: d.next_ids.frontier,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// An object owned by more than one snapshot.
    Disjointness { object: ObjectId, snapshots: Vec<SnapshotId> },
    /// A cluster member not visible in the snapshot's frame.
    CoVisibility { snapshot: SnapshotId, object: ObjectId, frame: FrameId },
    UnknownObject { snapshot: SnapshotId, object: ObjectId },
    /// A stored object owned by no snapshot.
    Uncovered { object: ObjectId },
    DuplicateFrame { frame: FrameId, snapshots: Vec<SnapshotId> },
    MissingFrame { snapshot: SnapshotId, frame: FrameId },
    EmptyCluster { snapshot: SnapshotId },
    ConfidenceOutOfRange { object: ObjectId, confidence: f64 },
    NonFinitePosition { object: ObjectId },
    EmptyCategory { object: ObjectId },
    ExploredNotNavigable { cell: GridIndex },
    FrontierTooSmall { frontier: FrontierId, cells: usize },
    FrontierCell { frontier: FrontierId, cell: GridIndex },
    FrontierOverlap { cell: GridIndex, frontiers: Vec<FrontierId> },
    Anchor { frontier: FrontierId },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant of a memory state and reports each
/// breach with the offending ids. Never fails.
pub fn validate_memory(memory: &SceneMemory) -> ValidationReport {
    let mut violations = Vec::new();

    for obj in memory.objects.values() {
        if !(0.0..=1.0).contains(&obj.confidence) {
            violations.push(Violation::ConfidenceOutOfRange { object: obj.id, confidence: obj.confidence });
        }
        if !obj.position.is_finite() {
            violations.push(Violation::NonFinitePosition { object: obj.id });
        }
        if obj.category.is_empty() {
            violations.push(Violation::EmptyCategory { object: obj.id });
        }
    }

    let mut owners: BTreeMap<ObjectId, Vec<SnapshotId>> = BTreeMap::new();
    let mut frame_owners: BTreeMap<FrameId, Vec<SnapshotId>> = BTreeMap::new();
    for snap in memory.snapshots.values() {
        if snap.cluster.is_empty() {
            violations.push(Violation::EmptyCluster { snapshot: snap.id });
        }
        frame_owners.entry(snap.frame).or_default().push(snap.id);
        let frame = memory.frames.get(&snap.frame);
        if frame.is_none() {
            violations.push(Violation::MissingFrame { snapshot: snap.id, frame: snap.frame });
        }
        for &obj in &snap.cluster {
            owners.entry(obj).or_default().push(snap.id);
            if !memory.objects.contains_key(&obj) {
                violations.push(Violation::UnknownObject { snapshot: snap.id, object: obj });
            }
            if let Some(frame) = frame {
                if !frame.sees(obj) {
                    violations.push(Violation::CoVisibility { snapshot: snap.id, object: obj, frame: frame.id });
                }
            }
        }
    }
    for (object, snapshots) in &owners {
        if snapshots.len() > 1 {
            violations.push(Violation::Disjointness { object: *object, snapshots: snapshots.clone() });
        }
    }
    for (frame, snapshots) in frame_owners {
        if snapshots.len() > 1 {
            violations.push(Violation::DuplicateFrame { frame, snapshots });
        }
    }
    for id in memory.objects.keys() {
        if !owners.contains_key(id) {
            violations.push(Violation::Uncovered { object: *id });
        }
    }

    let grid = &memory.grid;
    for idx in grid.indices() {
        if grid.is_explored(idx) && grid.state(idx) != CellState::Navigable {
            violations.push(Violation::ExploredNotNavigable { cell: idx });
        }
    }

    let mut cell_owner: BTreeMap<GridIndex, Vec<FrontierId>> = BTreeMap::new();
    for f in memory.frontiers.values() {
        if f.region.len() <= memory.min_frontier_cells {
            violations.push(Violation::FrontierTooSmall { frontier: f.id, cells: f.region.len() });
        }
        for &cell in &f.region {
            cell_owner.entry(cell).or_default().push(f.id);
            if !grid.contains(cell) || !grid.is_unexplored_navigable(cell) {
                violations.push(Violation::FrontierCell { frontier: f.id, cell });
            }
        }
        let anchor_ok = grid.index_of(f.anchor).is_some_and(|a| {
            grid.is_explored(a)
                && grid.center(a).distance(f.anchor) < 1e-9
                && grid.neighbors8(a).any(|n| f.region.contains(&n))
        });
        if !anchor_ok {
            violations.push(Violation::Anchor { frontier: f.id });
        }
    }
    for (cell, frontiers) in cell_owner {
        if frontiers.len() > 1 {
            violations.push(Violation::FrontierOverlap { cell, frontiers });
        }
    }

    ValidationReport { violations }
}
