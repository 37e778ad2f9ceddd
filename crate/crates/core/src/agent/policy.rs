//! Decisions, the state a policy sees, and the built-in policies.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::NOISY_MATCH_RADIUS;
use crate::model::{FrameId, FrontierId, ObjectId, Pose, Position2, SceneMemory, SnapshotId};
use crate::sim::{self, DistanceField, Scene, Task, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Answer(String),
    Object(ObjectId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WireDecision", into = "WireDecision")]
pub enum Decision {
    ChooseFrontier { id: FrontierId, rationale: String },
    ChooseSnapshot { id: SnapshotId, payload: Payload },
}

impl Decision {
    pub fn frontier(id: u32, rationale: impl Into<String>) -> Self {
        Decision::ChooseFrontier { id: FrontierId(id), rationale: rationale.into() }
    }

    pub fn answer(id: u32, text: impl Into<String>) -> Self {
        Decision::ChooseSnapshot { id: SnapshotId(id), payload: Payload::Answer(text.into()) }
    }

    pub fn object(id: u32, object: u32) -> Self {
        Decision::ChooseSnapshot { id: SnapshotId(id), payload: Payload::Object(ObjectId(object)) }
    }
}

/// Flat JSON form: `{"choose": "frontier"|"snapshot", "id": n, ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireDecision {
    pub choose: String,
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<u32>,
}

impl TryFrom<WireDecision> for Decision {
    type Error = String;

    fn try_from(w: WireDecision) -> Result<Self, String> {
        match (w.choose.as_str(), w.answer, w.object) {
            ("frontier", None, None) => Ok(Decision::frontier(w.id, w.rationale.unwrap_or_default())),
            ("frontier", _, _) => Err("frontier decisions take no answer or object".into()),
            ("snapshot", Some(a), None) => Ok(Decision::answer(w.id, a)),
            ("snapshot", None, Some(o)) => Ok(Decision::object(w.id, o)),
            ("snapshot", _, _) => Err("snapshot decisions need exactly one of answer or object".into()),
            (other, _, _) => Err(format!("unknown choice {other:?}")),
        }
    }
}

impl From<Decision> for WireDecision {
    fn from(d: Decision) -> Self {
        match d {
            Decision::ChooseFrontier { id, rationale } => WireDecision {
                choose: "frontier".into(),
                id: id.0,
                rationale: Some(rationale),
                answer: None,
                object: None,
            },
            Decision::ChooseSnapshot { id, payload } => {
                let (answer, object) = match payload {
                    Payload::Answer(a) => (Some(a), None),
                    Payload::Object(o) => (None, Some(o.0)),
                };
                WireDecision { choose: "snapshot".into(), id: id.0, rationale: None, answer, object }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub kind: TaskKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub id: ObjectId,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotView {
    pub id: SnapshotId,
    pub frame: FrameId,
    pub image_ref: String,
    /// Prefilter-kept categories present in the cluster, in ranked order.
    pub classes: Vec<String>,
    /// Cluster objects of the kept categories.
    pub objects: Vec<ObjectView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierView {
    pub id: FrontierId,
    pub anchor: Position2,
    pub image_ref: String,
    pub cells: usize,
}

/// What a policy is shown at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyView {
    pub step: u32,
    pub task: TaskView,
    pub pose: Pose,
    pub snapshots: Vec<SnapshotView>,
    pub frontiers: Vec<FrontierView>,
    /// This step's egocentric frames.
    pub frames: Vec<String>,
    pub kept_categories: Vec<String>,
}

pub fn frame_ref(id: FrameId) -> String {
    format!("frame-{}", id.0)
}

pub fn frontier_ref(id: FrontierId) -> String {
    format!("frontier-{}", id.0)
}

pub fn crop_ref(frame: FrameId, object: ObjectId) -> String {
    format!("crop-{}-{}", frame.0, object.0)
}

/// Ground truth and full memory, for policies allowed to cheat.
pub struct PolicyContext<'a> {
    pub scene: &'a Scene,
    pub task: &'a Task,
    pub memory: &'a SceneMemory,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PolicyError {
    #[error("no frontier to explore and the goal is not in memory")]
    Stuck,
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("policy unavailable: {0}")]
    PolicyUnavailable(String),
}

pub trait Policy: Send {
    fn name(&self) -> String;
    fn decide(&mut self, view: &PolicyView, ctx: &PolicyContext) -> Result<Decision, PolicyError>;
}

/// Checks that a decision references entities the agent actually has. Any
/// snapshot in memory is accepted, since the oracle bypasses prefiltering.
pub fn check_decision(decision: &Decision, view: &PolicyView, memory: &SceneMemory) -> Result<(), String> {
    match decision {
        Decision::ChooseFrontier { id, .. } => {
            if view.frontiers.iter().any(|f| f.id == *id) {
                Ok(())
            } else {
                Err(format!("frontier {id} is not available"))
            }
        }
        Decision::ChooseSnapshot { id, payload } => {
            let snap = memory.snapshots.get(id).ok_or_else(|| format!("snapshot {id} does not exist"))?;
            match payload {
                Payload::Object(o) if !snap.cluster.contains(o) => Err(format!("object {o} is not in snapshot {id}")),
                Payload::Answer(a) if a.trim().is_empty() => Err("answer must not be empty".into()),
                _ => Ok(()),
            }
        }
    }
}

/// Memory object standing for the task's goal: the goal id itself, or in
/// noisy matching a same-category object near the goal position.
pub fn goal_in_memory(task: &Task, scene: &Scene, memory: &SceneMemory) -> Option<ObjectId> {
    let goal = task.goal_object?;
    if memory.objects.contains_key(&goal) {
        return Some(goal);
    }
    let truth = scene.object(goal)?;
    memory
        .objects
        .values()
        .find(|o| o.category == truth.category && o.position.distance(truth.position) < NOISY_MATCH_RADIUS)
        .map(|o| o.id)
}

/// Chooses the snapshot holding the goal when memory has it, otherwise the
/// frontier whose anchor lies closest to the true shortest path to the goal.
#[derive(Default)]
pub struct OraclePolicy {
    field: Option<(Position2, DistanceField)>,
}

impl OraclePolicy {
    pub fn new() -> Self {
        Self::default()
    }

    fn polyline(&mut self, scene: &Scene, from: Position2, goal: Position2) -> Option<Vec<Position2>> {
        if self.field.as_ref().is_none_or(|(g, _)| *g != goal) {
            self.field = Some((goal, sim::geodesic_field(scene, goal).ok()?));
        }
        let (_, field) = self.field.as_ref()?;
        let cell = scene.truth().index_of(from)?;
        let path = field.path_to_source(cell)?;
        Some(path.into_iter().map(|c| scene.truth().center(c)).collect())
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn decide(&mut self, view: &PolicyView, ctx: &PolicyContext) -> Result<Decision, PolicyError> {
        if let Some(goal) = goal_in_memory(ctx.task, ctx.scene, ctx.memory) {
            if let Some(snap) = ctx.memory.snapshot_of(goal) {
                let payload = match ctx.task.kind {
                    TaskKind::ObjectGoal => Payload::Object(goal),
                    TaskKind::Question => Payload::Answer(ctx.task.answer_key.clone().unwrap_or_default()),
                };
                return Ok(Decision::ChooseSnapshot { id: snap.id, payload });
            }
        }
        let goal = ctx
            .task
            .goal_position
            .or_else(|| ctx.task.goal_object.and_then(|g| ctx.scene.object(g)).map(|o| o.position))
            .ok_or(PolicyError::Stuck)?;
        let line = self.polyline(ctx.scene, view.pose.position, goal).unwrap_or_else(|| vec![goal]);
        view.frontiers
            .iter()
            .map(|f| (sim::point_polyline_distance(f.anchor, &line), f.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| Decision::ChooseFrontier { id, rationale: "closest to the shortest path".into() })
            .ok_or(PolicyError::Stuck)
    }
}

/// Uniform choice over everything on offer, seeded.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, view: &PolicyView, _: &PolicyContext) -> Result<Decision, PolicyError> {
        let options = view.snapshots.len() + view.frontiers.len();
        if options == 0 {
            return Err(PolicyError::Stuck);
        }
        let pick = self.rng.gen_range(0..options);
        if let Some(f) = view.frontiers.get(pick) {
            return Ok(Decision::ChooseFrontier { id: f.id, rationale: "random".into() });
        }
        let snap = &view.snapshots[pick - view.frontiers.len()];
        let payload = match view.task.kind {
            TaskKind::Question => Payload::Answer("unknown".into()),
            TaskKind::ObjectGoal => match snap.objects.choose(&mut self.rng) {
                Some(o) => Payload::Object(o.id),
                None => return Ok(Decision::ChooseFrontier {
                    id: view.frontiers.first().ok_or(PolicyError::Stuck)?.id,
                    rationale: "random".into(),
                }),
            },
        };
        Ok(Decision::ChooseSnapshot { id: snap.id, payload })
    }
}

/// Replays a fixed decision list.
pub struct ScriptedPolicy {
    decisions: VecDeque<Decision>,
}

impl ScriptedPolicy {
    pub fn new(decisions: impl IntoIterator<Item = Decision>) -> Self {
        Self { decisions: decisions.into_iter().collect() }
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn decide(&mut self, _: &PolicyView, _: &PolicyContext) -> Result<Decision, PolicyError> {
        self.decisions.pop_front().ok_or(PolicyError::Stuck)
    }
}
