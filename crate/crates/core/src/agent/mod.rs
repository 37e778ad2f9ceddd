//! The observe, decide, move loop.
//!
//! [`Episode`] is a step-at-a-time state machine so that batch runs, trace
//! replay and the steering service all drive the same code.

pub mod nav;
pub mod policy;
pub mod prompt;
pub mod remote;
pub mod trace;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::covis::ClusterError;
use crate::frontier::{self, FrontierError};
use crate::grid::GridIndex;
use crate::memory::{self, Detection, LexicalRanker, PrefilterTrace};
use crate::model::{ConfigError, EpisodeConfig, FrameId, Pose, SceneMemory, SceneObject};
use crate::sim::{self, Scene, SimError, Task};

use nav::NavError;
use policy::{
    check_decision, frame_ref, frontier_ref, Decision, FrontierView, ObjectView, Payload, Policy, PolicyContext,
    PolicyError, PolicyView, SnapshotView, TaskView,
};
use trace::{memory_digest, EpisodeTrace, Outcome, StepRecord, TraceFooter, TraceHeader, TRACE_FORMAT};

#[derive(Debug, Error, PartialEq)]
pub enum EpisodeError {
    #[error("episode already finished")]
    Finished,
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("scene has no spawn point")]
    NoSpawn,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Frontier(#[from] FrontierError),
}

/// Observation-side parts of the current step's record.
#[derive(Debug, Clone)]
struct Observed {
    pose: Pose,
    digest: String,
    frames: Vec<FrameId>,
    new_objects: Vec<crate::model::ObjectId>,
    detections_dropped: usize,
    snapshots: memory::SnapshotUpdate,
    frontier_events: Vec<frontier::FrontierEvent>,
    prefilter: PrefilterTrace,
}

/// Result of applying one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub moved: f64,
    pub arrived: bool,
    pub outcome: Option<Outcome>,
}

pub struct Episode {
    scene: Arc<Scene>,
    task: Task,
    cfg: EpisodeConfig,
    memory: SceneMemory,
    pose: Pose,
    step: u32,
    path_length: f64,
    discarded: BTreeSet<GridIndex>,
    view: Option<PolicyView>,
    observed: Option<Observed>,
    committed: Option<Decision>,
    trace: EpisodeTrace,
}

/// Spawn pose drawn from the episode seed mixed with the scene seed.
pub fn start_pose(scene: &Scene, cfg: &EpisodeConfig) -> Result<Pose, EpisodeError> {
    if scene.spawn_points.is_empty() {
        return Err(EpisodeError::NoSpawn);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ scene.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let spawn = scene.spawn_points[rng.gen_range(0..scene.spawn_points.len())];
    let heading_deg: u32 = rng.gen_range(0..360);
    Ok(Pose::new(spawn, (heading_deg as f64).to_radians()))
}

impl Episode {
    pub fn new(scene: Arc<Scene>, task: Task, cfg: EpisodeConfig, policy_name: &str) -> Result<Self, EpisodeError> {
        cfg.validate()?;
        task.validate().map_err(EpisodeError::InvalidTask)?;
        if let Some(g) = task.goal_object {
            if scene.object(g).is_none() {
                return Err(EpisodeError::InvalidTask(format!("goal_object: {g} is not in the scene")));
            }
        }
        let pose = start_pose(&scene, &cfg)?;
        let memory = SceneMemory::new(scene.blank_grid(), cfg.min_frontier_cells);
        let header = TraceHeader {
            format: TRACE_FORMAT.into(),
            policy: policy_name.into(),
            scene: (*scene).clone(),
            task: task.clone(),
            cfg: cfg.clone(),
        };
        let mut ep = Episode {
            scene,
            task,
            cfg,
            memory,
            pose,
            step: 0,
            path_length: 0.0,
            discarded: BTreeSet::new(),
            view: None,
            observed: None,
            committed: None,
            trace: EpisodeTrace { header, steps: Vec::new(), footer: None },
        };
        ep.observe()?;
        Ok(ep)
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn cfg(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn memory(&self) -> &SceneMemory {
        &self.memory
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn path_length(&self) -> f64 {
        self.path_length
    }

    /// Unexplored navigable cells too small or detached to form a frontier.
    pub fn discarded_cells(&self) -> &BTreeSet<GridIndex> {
        &self.discarded
    }

    /// The pending policy view, or `None` once finished.
    pub fn view(&self) -> Option<&PolicyView> {
        self.view.as_ref()
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.trace.outcome()
    }

    pub fn is_finished(&self) -> bool {
        self.trace.footer.is_some()
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EpisodeTrace {
        self.trace
    }

    pub fn context(&self) -> PolicyContext<'_> {
        PolicyContext { scene: &self.scene, task: &self.task, memory: &self.memory }
    }

    /// The carried-over decision in navigate-to-completion mode, if still valid.
    pub fn commitment(&self) -> Option<&Decision> {
        let view = self.view.as_ref()?;
        self.committed.as_ref().filter(|d| check_decision(d, view, &self.memory).is_ok())
    }

    fn observe(&mut self) -> Result<(), EpisodeError> {
        let cfg = &self.cfg;
        let first = self.memory.next_frame_id();
        let frames = sim::egocentric_sweep(
            &self.scene,
            self.pose,
            cfg.n_views,
            cfg.view_gap_deg,
            cfg.hfov_deg,
            cfg.sensor_range,
            first,
            self.step,
        )?;
        for _ in &frames {
            self.memory.alloc_frame_id();
        }
        for f in &frames {
            frontier::carve_free_space(&mut self.memory.grid, f.pose, cfg.hfov_deg, cfg.sensor_range, &*self.scene)?;
        }
        frontier::mark_explored(&mut self.memory.grid, self.pose.position, cfg.explored_radius);

        let mut detections = Vec::new();
        for f in &frames {
            for (id, conf) in &f.visible_objects {
                let truth = self.scene.object(*id).expect("observed objects exist");
                detections.push(Detection {
                    object: SceneObject { confidence: *conf, ..truth.clone() },
                    frame: f.id,
                });
            }
        }
        let ingest = memory::ingest_step(&mut self.memory, frames, detections, self.pose.position, cfg)?;

        let frontier_events = self.refresh_frontiers();

        let inventory = memory::category_inventory(&self.memory);
        let kept = memory::prefilter(&self.task.text, &inventory, self.cfg.prefilter_k, &LexicalRanker);
        let offered = memory::apply_prefilter(self.memory.snapshots.values(), &kept, &self.memory);
        let prefilter = PrefilterTrace {
            step: self.step,
            query: self.task.text.clone(),
            inventory_size: inventory.len(),
            kept: kept.clone(),
            snapshots_before: self.memory.snapshots.len(),
            snapshots_after: offered.len(),
        };

        let reachable = nav::explored_field(&self.memory.grid, self.pose.position).ok();
        let frontiers = self
            .memory
            .frontiers
            .values()
            .filter(|f| {
                let cell = self.memory.grid.index_of(f.anchor);
                match (&reachable, cell) {
                    (Some(field), Some(c)) => field.distance(c).is_some(),
                    _ => false,
                }
            })
            .map(|f| FrontierView { id: f.id, anchor: f.anchor, image_ref: frontier_ref(f.id), cells: f.region.len() })
            .collect();
        let snapshots = offered
            .iter()
            .map(|s| {
                let members: Vec<&SceneObject> = s.cluster.iter().map(|id| &self.memory.objects[id]).collect();
                SnapshotView {
                    id: s.id,
                    frame: s.frame,
                    image_ref: frame_ref(s.frame),
                    classes: kept.iter().filter(|k| members.iter().any(|o| &o.category == *k)).cloned().collect(),
                    objects: members
                        .iter()
                        .filter(|o| kept.contains(&o.category))
                        .map(|o| ObjectView { id: o.id, category: o.category.clone() })
                        .collect(),
                }
            })
            .collect();
        self.view = Some(PolicyView {
            step: self.step,
            task: TaskView { kind: self.task.kind, text: self.task.text.clone() },
            pose: self.pose,
            snapshots,
            frontiers,
            frames: ingest.frames.iter().map(|f| frame_ref(*f)).collect(),
            kept_categories: kept,
        });
        self.observed = Some(Observed {
            pose: self.pose,
            digest: memory_digest(&self.memory),
            frames: ingest.frames,
            new_objects: ingest.new_objects,
            detections_dropped: ingest.detections_dropped,
            snapshots: ingest.snapshots,
            frontier_events,
            prefilter,
        });
        Ok(())
    }

    /// Reconciles the frontier set with the current map and re-captures stale
    /// frontiers from the current pose.
    fn refresh_frontiers(&mut self) -> Vec<frontier::FrontierEvent> {
        let mut next = self.memory.next_frontier;
        let update =
            frontier::update_frontiers(&self.memory.frontiers, &self.memory.grid, self.pose, &self.cfg, || {
                next += 1;
                crate::model::FrontierId(next - 1)
            });
        self.memory.next_frontier = next;
        self.memory.frontiers = update.frontiers;
        frontier::recapture_stale(&mut self.memory.frontiers, self.pose, self.step);
        self.discarded = update.discarded;
        update.events
    }

    /// Validates and executes one decision: movement, then (unless the
    /// episode ends) the next observation.
    pub fn apply(&mut self, decision: Decision) -> Result<StepReport, EpisodeError> {
        let view = self.view.as_ref().ok_or(EpisodeError::Finished)?;
        check_decision(&decision, view, &self.memory).map_err(EpisodeError::InvalidDecision)?;
        let committed = self.committed.as_ref() == Some(&decision);

        let mut outcome = None;
        let (moved, arrived) = match &decision {
            Decision::ChooseSnapshot { payload: Payload::Answer(text), .. } => {
                outcome = Some(Outcome::Answered { answer: text.clone() });
                (0.0, true)
            }
            Decision::ChooseSnapshot { payload: Payload::Object(oid), .. } => {
                let pos = self.memory.objects[oid].position;
                let grid = &self.memory.grid;
                let target = nav::snapshot_nav_target(&[pos], grid, self.cfg.obs_dist).ok();
                let goal = target.unwrap_or(pos);
                let path = nav::plan_path(grid, self.pose.position, goal)
                    .or_else(|_| nav::plan_path_reachable(grid, self.pose.position, goal));
                match path {
                    Ok(path) => {
                        let s = self.walk(&path.waypoints, 0.0);
                        let on_target = target.and_then(|t| grid_index(&self.memory, t)) == Some(path.goal_cell);
                        if s.0 && s.2 == path.waypoints.len() && on_target {
                            outcome = Some(Outcome::Reached { object: *oid });
                        }
                        (s.1, s.0)
                    }
                    Err(NavError::NoPath) | Err(_) => (0.0, false),
                }
            }
            Decision::ChooseFrontier { id, .. } => {
                let anchor = self.memory.frontiers[id].anchor;
                let grid = &self.memory.grid;
                let path = nav::plan_path(grid, self.pose.position, anchor)
                    .or_else(|_| nav::plan_path_reachable(grid, self.pose.position, anchor));
                match path {
                    Ok(path) => {
                        let s = self.walk(&path.waypoints, self.cfg.arrive_radius);
                        (s.1, s.0)
                    }
                    Err(_) => (0.0, false),
                }
            }
        };

        self.committed = (self.cfg.navigate_to_completion && outcome.is_none() && !arrived).then(|| decision.clone());
        let observed = self.observed.take().expect("observation precedes every decision");
        let offered = self.view.take().expect("view checked above");
        self.trace.steps.push(StepRecord {
            step: self.step,
            pose: observed.pose,
            digest: observed.digest,
            frames: observed.frames,
            new_objects: observed.new_objects,
            detections_dropped: observed.detections_dropped,
            snapshots: observed.snapshots,
            frontier_events: observed.frontier_events,
            prefilter: observed.prefilter,
            offered_snapshots: offered.snapshots.len(),
            offered_frontiers: offered.frontiers.len(),
            decision,
            committed,
            moved,
            arrived,
            pose_after: self.pose,
            path_length: self.path_length,
        });
        self.step += 1;
        if outcome.is_none() && self.step >= self.cfg.step_budget {
            outcome = Some(Outcome::BudgetExhausted);
        }
        match &outcome {
            Some(o) => {
                // The last move explored cells that no later observation will account for.
                self.refresh_frontiers();
                self.finish(o.clone());
            }
            None => self.observe()?,
        }
        Ok(StepReport { moved, arrived, outcome })
    }

    /// Moves along `waypoints`, marking the explored disc at every position
    /// passed. Returns (arrived, moved, waypoints reached).
    fn walk(&mut self, waypoints: &[crate::model::Position2], arrive_radius: f64) -> (bool, f64, usize) {
        let s = nav::step_toward(self.pose, waypoints, self.cfg.move_limit, arrive_radius);
        for p in &s.visited {
            frontier::mark_explored(&mut self.memory.grid, *p, self.cfg.explored_radius);
        }
        self.pose = s.pose;
        self.path_length += s.moved;
        self.memory.trajectory.push(s.pose);
        (s.arrived, s.moved, s.reached)
    }

    /// Ends the episode without a further decision.
    pub fn abort(&mut self, reason: impl Into<String>) {
        if !self.is_finished() {
            self.view = None;
            self.observed = None;
            self.finish(Outcome::Aborted { reason: reason.into() });
        }
    }

    fn finish(&mut self, outcome: Outcome) {
        let frames: BTreeSet<FrameId> = self.memory.snapshots.values().map(|s| s.frame).collect();
        self.trace.footer = Some(TraceFooter {
            outcome,
            steps: self.step,
            path_length: self.path_length,
            final_pose: self.pose,
            snapshots_final: self.memory.snapshots.len(),
            distinct_frames: frames.len(),
            observations_total: self.memory.frames.len(),
            final_digest: memory_digest(&self.memory),
        });
    }
}

fn grid_index(memory: &SceneMemory, p: crate::model::Position2) -> Option<GridIndex> {
    memory.grid.index_of(p)
}

/// Drives one episode to completion. Policy failures end the episode with an
/// aborted outcome recorded in the trace.
pub fn run_episode(
    scene: Arc<Scene>,
    task: Task,
    policy: &mut dyn Policy,
    cfg: EpisodeConfig,
) -> Result<EpisodeTrace, EpisodeError> {
    let mut ep = Episode::new(scene, task, cfg, &policy.name())?;
    while let Some(view) = ep.view() {
        let decision = match ep.commitment() {
            Some(d) => Ok(d.clone()),
            None => policy.decide(view, &ep.context()),
        };
        let decision = match decision {
            Ok(d) => d,
            Err(e) => {
                ep.abort(abort_reason(&e));
                break;
            }
        };
        match ep.apply(decision) {
            Ok(_) => {}
            Err(EpisodeError::InvalidDecision(msg)) => ep.abort(format!("invalid_decision: {msg}")),
            Err(e) => return Err(e),
        }
    }
    Ok(ep.into_trace())
}

fn abort_reason(e: &PolicyError) -> String {
    match e {
        PolicyError::Stuck => "stuck".into(),
        PolicyError::InvalidDecision(m) => format!("invalid_decision: {m}"),
        PolicyError::PolicyUnavailable(m) => format!("policy_unavailable: {m}"),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error("trace has no footer")]
    Incomplete,
    #[error("replay failed to start: {0}")]
    Start(String),
    #[error("step {step}: {what} differs from the recording")]
    Mismatch { step: u32, what: String },
}

/// Re-runs the recorded decisions and checks that every recorded step and the
/// footer come out identical.
pub fn replay_trace(recorded: &EpisodeTrace) -> Result<EpisodeTrace, ReplayError> {
    let footer = recorded.footer.as_ref().ok_or(ReplayError::Incomplete)?;
    let h = &recorded.header;
    let mut ep = Episode::new(Arc::new(h.scene.clone()), h.task.clone(), h.cfg.clone(), &h.policy)
        .map_err(|e| ReplayError::Start(e.to_string()))?;
    for rec in &recorded.steps {
        let mismatch = |what: &str| ReplayError::Mismatch { step: rec.step, what: what.into() };
        if ep.is_finished() {
            return Err(mismatch("episode end"));
        }
        ep.apply(rec.decision.clone()).map_err(|e| mismatch(&format!("decision ({e})")))?;
        let got = ep.trace.steps.last().expect("step recorded");
        for (what, same) in [
            ("pose", got.pose == rec.pose),
            ("memory digest", got.digest == rec.digest),
            ("movement", got.pose_after == rec.pose_after && got.moved == rec.moved),
            ("step record", got == rec),
        ] {
            if !same {
                return Err(mismatch(what));
            }
        }
    }
    if let Outcome::Aborted { reason } = &footer.outcome {
        ep.abort(reason.clone());
    }
    let replayed = ep.into_trace();
    if replayed.footer.as_ref() != Some(footer) {
        return Err(ReplayError::Mismatch { step: footer.steps, what: "footer".into() });
    }
    Ok(replayed)
}
