//! Episode trace records and their JSONL form.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::policy::Decision;
use crate::frontier::FrontierEvent;
use crate::memory::{PrefilterTrace, SnapshotUpdate};
use crate::model::{EpisodeConfig, FrameId, ObjectId, Pose, SceneMemory};
use crate::sim::{Scene, Task};

pub const TRACE_FORMAT: &str = "snaptrace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Answered { answer: String },
    Reached { object: ObjectId },
    BudgetExhausted,
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub policy: String,
    pub scene: Scene,
    pub task: Task,
    pub cfg: EpisodeConfig,
}

/// What the agent saw at one step and what it did about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub pose: Pose,
    /// Memory digest after this step's observation update.
    pub digest: String,
    pub frames: Vec<FrameId>,
    pub new_objects: Vec<ObjectId>,
    pub detections_dropped: usize,
    pub snapshots: SnapshotUpdate,
    pub frontier_events: Vec<FrontierEvent>,
    pub prefilter: PrefilterTrace,
    pub offered_snapshots: usize,
    pub offered_frontiers: usize,
    pub decision: Decision,
    /// True when the decision was carried over from an unfinished navigation.
    pub committed: bool,
    pub moved: f64,
    pub arrived: bool,
    pub pose_after: Pose,
    pub path_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub outcome: Outcome,
    pub steps: u32,
    pub path_length: f64,
    pub final_pose: Pose,
    pub snapshots_final: usize,
    pub distinct_frames: usize,
    pub observations_total: usize,
    pub final_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Step(Box<StepRecord>),
    Footer(TraceFooter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub footer: Option<TraceFooter>,
}

impl EpisodeTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: TraceLine| {
            out.push_str(&serde_json::to_string(&line).expect("trace serialization is infallible"));
            out.push('\n');
        };
        push(TraceLine::Header(self.header.clone()));
        for s in &self.steps {
            push(TraceLine::Step(Box::new(s.clone())));
        }
        if let Some(f) = &self.footer {
            push(TraceLine::Footer(f.clone()));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse = |(n, l): (usize, &str)| {
            serde_json::from_str::<TraceLine>(l).map_err(|e| format!("line {}: {e}", n + 1))
        };
        let header = match lines.next().map(parse).transpose()? {
            Some(TraceLine::Header(h)) => h,
            _ => return Err("trace must start with a header line".into()),
        };
        if header.format != TRACE_FORMAT {
            return Err(format!("unsupported trace format {:?}", header.format));
        }
        let mut trace = EpisodeTrace { header, steps: Vec::new(), footer: None };
        for entry in lines {
            let n = entry.0 + 1;
            if trace.footer.is_some() {
                return Err(format!("line {n}: content after footer"));
            }
            match parse(entry)? {
                TraceLine::Step(s) => trace.steps.push(*s),
                TraceLine::Footer(f) => trace.footer = Some(f),
                TraceLine::Header(_) => return Err(format!("line {n}: second header")),
            }
        }
        Ok(trace)
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.footer.as_ref().map(|f| &f.outcome)
    }

    pub fn prefilter_records(&self) -> impl Iterator<Item = &PrefilterTrace> {
        self.steps.iter().map(|s| &s.prefilter)
    }
}

/// Hex SHA-256 of the memory's canonical JSON.
pub fn memory_digest(memory: &SceneMemory) -> String {
    let hash = Sha256::digest(memory.to_json().as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
