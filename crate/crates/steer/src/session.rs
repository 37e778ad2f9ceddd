//! Session bookkeeping and the JSON documents served for each session.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{PI, TAU};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use snapmem_core::agent::policy::{Decision, PolicyView};
use snapmem_core::agent::trace::Outcome;
use snapmem_core::agent::Episode;
use snapmem_core::{normalize_angle, FrameId, FrontierId, GridIndex, ObjectId, Pose, Position2, SceneMemory};

pub const SESSION_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingDecision,
    Advancing,
    Finished,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectGlyph {
    pub id: ObjectId,
    pub category: String,
    /// Signed bearing relative to the capture heading, radians in (-π, π].
    pub bearing: f64,
    pub distance: f64,
}

/// Schematic stand-in for a rendered frame.
#[derive(Debug, Clone, Serialize)]
pub struct FrameDescriptor {
    pub frame: FrameId,
    pub pose: Pose,
    pub objects: Vec<ObjectGlyph>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotCard {
    pub id: snapmem_core::SnapshotId,
    pub image_ref: String,
    pub classes: Vec<String>,
    pub descriptor: FrameDescriptor,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontierCard {
    pub id: FrontierId,
    pub image_ref: String,
    pub anchor: Position2,
    pub cells: usize,
    pub outline: Vec<GridIndex>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapLayers {
    pub origin: Position2,
    pub cell_size: f64,
    pub width: u32,
    pub height: u32,
    /// North row first. `?` unknown, `#` occupied, `.` free, `e` explored.
    pub rows: Vec<String>,
    pub pose: Pose,
    pub trajectory: Vec<Pose>,
}

/// Everything a client sees between two decisions.
#[derive(Debug, Clone, Serialize)]
pub struct StateDoc {
    pub step: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    pub view: Option<PolicyView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub commitment: Option<Decision>,
    pub snapshots: Vec<SnapshotCard>,
    pub frontiers: Vec<FrontierCard>,
    pub map: MapLayers,
}

/// Immutable copy of a session published after each mutation.
pub struct Published {
    pub state: StateDoc,
    pub memory: SceneMemory,
    pub trace_jsonl: String,
}

fn signed(a: f64) -> f64 {
    let d = normalize_angle(a);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

pub fn frame_descriptor(memory: &SceneMemory, frame: FrameId) -> Option<FrameDescriptor> {
    let f = memory.frames.get(&frame)?;
    let objects = f
        .visible_objects
        .keys()
        .filter_map(|id| memory.objects.get(id))
        .map(|o| ObjectGlyph {
            id: o.id,
            category: o.category.clone(),
            bearing: signed(f.pose.position.bearing_to(o.position) - f.pose.heading),
            distance: f.pose.position.distance(o.position),
        })
        .collect();
    Some(FrameDescriptor { frame, pose: f.pose, objects })
}

/// Region cells with at least one 4-neighbour outside the region.
pub fn outline(region: &std::collections::BTreeSet<GridIndex>) -> Vec<GridIndex> {
    region
        .iter()
        .filter(|c| {
            let (r, k) = (c.row as i64, c.col as i64);
            [(r + 1, k), (r - 1, k), (r, k + 1), (r, k - 1)].iter().any(|&(r, k)| {
                r < 0 || k < 0 || !region.contains(&GridIndex { row: r as u32, col: k as u32 })
            })
        })
        .copied()
        .collect()
}

fn publish(ep: &Episode) -> Published {
    let memory = ep.memory();
    let view = ep.view().cloned();
    let snapshots = view
        .iter()
        .flat_map(|v| &v.snapshots)
        .map(|s| SnapshotCard {
            id: s.id,
            image_ref: s.image_ref.clone(),
            classes: s.classes.clone(),
            descriptor: frame_descriptor(memory, s.frame).expect("snapshot frames are stored"),
        })
        .collect();
    let frontiers = view
        .iter()
        .flat_map(|v| &v.frontiers)
        .map(|f| FrontierCard {
            id: f.id,
            image_ref: f.image_ref.clone(),
            anchor: f.anchor,
            cells: f.cells,
            outline: outline(&memory.frontiers[&f.id].region),
        })
        .collect();
    let grid = &memory.grid;
    let map = MapLayers {
        origin: grid.origin(),
        cell_size: grid.cell_size(),
        width: grid.width(),
        height: grid.height(),
        rows: grid.render_ascii(&BTreeMap::new()).lines().map(str::to_string).collect(),
        pose: ep.pose(),
        trajectory: memory.trajectory.clone(),
    };
    Published {
        state: StateDoc {
            step: ep.step(),
            outcome: ep.outcome().cloned(),
            view,
            commitment: ep.commitment().cloned(),
            snapshots,
            frontiers,
            map,
        },
        memory: memory.clone(),
        trace_jsonl: ep.trace().to_jsonl(),
    }
}

pub struct Session {
    pub id: String,
    pub created_at: u64,
    episode: Mutex<Episode>,
    advancing: AtomicBool,
    published: RwLock<Arc<Published>>,
    last_used: Mutex<Instant>,
}

/// Held while a decision is being applied; dropping it reopens the session.
pub struct AdvanceGuard<'a>(&'a Session);

impl Drop for AdvanceGuard<'_> {
    fn drop(&mut self) {
        self.0.advancing.store(false, Ordering::Release);
    }
}

impl Session {
    fn new(episode: Episode) -> Self {
        let published = Arc::new(publish(&episode));
        Session {
            id: uuid::Uuid::new_v4().simple().to_string(),
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            episode: Mutex::new(episode),
            advancing: AtomicBool::new(false),
            published: RwLock::new(published),
            last_used: Mutex::new(Instant::now()),
        }
    }

    pub fn published(&self) -> Arc<Published> {
        self.published.read().expect("lock poisoned").clone()
    }

    pub fn phase(&self) -> Phase {
        if self.advancing.load(Ordering::Acquire) {
            Phase::Advancing
        } else if self.published().state.outcome.is_some() {
            Phase::Finished
        } else {
            Phase::AwaitingDecision
        }
    }

    /// Claims the single decision slot, or `None` if another decision is in
    /// flight.
    pub fn begin_advance(&self) -> Option<AdvanceGuard<'_>> {
        self.advancing
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| AdvanceGuard(self))
    }

    /// Applies a decision. The caller must hold the advance guard.
    pub fn apply(&self, _guard: &AdvanceGuard<'_>, decision: Decision) -> Result<ApplyResult, snapmem_core::agent::EpisodeError> {
        let mut ep = self.episode.lock().expect("lock poisoned");
        let report = ep.apply(decision)?;
        *self.published.write().expect("lock poisoned") = Arc::new(publish(&ep));
        Ok(ApplyResult { moved: report.moved, arrived: report.arrived, outcome: report.outcome, step: ep.step() })
    }

    fn touch(&self, now: Instant) {
        *self.last_used.lock().expect("lock poisoned") = now;
    }

    fn idle_since(&self) -> Instant {
        *self.last_used.lock().expect("lock poisoned")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ApplyResult {
    pub step: u32,
    pub moved: f64,
    pub arrived: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    ttl: Duration,
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::with_ttl(SESSION_TTL)
    }
}

impl SessionStore {
    pub fn with_ttl(ttl: Duration) -> Self {
        SessionStore { sessions: RwLock::new(HashMap::new()), ttl }
    }

    pub fn insert(&self, episode: Episode) -> Arc<Session> {
        let s = Arc::new(Session::new(episode));
        self.sessions.write().expect("lock poisoned").insert(s.id.clone(), s.clone());
        s
    }

    /// Looks up a live session and refreshes its idle timer.
    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        let now = Instant::now();
        let s = self.sessions.read().expect("lock poisoned").get(id).cloned()?;
        if now.duration_since(s.idle_since()) > self.ttl {
            self.sessions.write().expect("lock poisoned").remove(id);
            return None;
        }
        s.touch(now);
        Some(s)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn only_session(&self) -> Option<Arc<Session>> {
        let map = self.sessions.read().expect("lock poisoned");
        if map.len() == 1 {
            map.values().next().cloned()
        } else {
            None
        }
    }

    /// Drops sessions idle for longer than the TTL as of `now`; returns how many.
    pub fn purge_expired(&self, now: Instant) -> usize {
        let mut map = self.sessions.write().expect("lock poisoned");
        let before = map.len();
        map.retain(|_, s| now.saturating_duration_since(s.idle_since()) <= self.ttl);
        before - map.len()
    }
}
