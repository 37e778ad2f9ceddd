//! Episode scoring, compactness statistics and batch execution.

use std::collections::BTreeSet;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::policy::{OraclePolicy, Policy, RandomPolicy};
use crate::agent::remote::RemotePolicy;
use crate::agent::trace::{EpisodeTrace, Outcome};
use crate::agent::{run_episode, start_pose};
use crate::model::{EpisodeConfig, Position2};
use crate::sim::{self, Scene, Task, TaskKind};

pub fn success(final_pos: Position2, goal: Position2, radius: f64) -> bool {
    final_pos.distance(goal) <= radius
}

pub fn spl(success: bool, shortest: f64, actual: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = actual.max(shortest);
    if denom <= 0.0 {
        1.0
    } else {
        shortest / denom
    }
}

/// True when every token of `key` appears in `answer`, ignoring case.
pub fn answer_matches(answer: &str, key: &str) -> bool {
    let toks = |s: &str| -> BTreeSet<String> {
        s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
    };
    let key = toks(key);
    !key.is_empty() && key.is_subset(&toks(answer))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compactness {
    pub snapshots_final: usize,
    pub observations_total: usize,
    pub prefilter_kept_mean: f64,
    pub kept_ratio: f64,
    /// Set when no query saw a non-empty memory, so `kept_ratio` is the 1.0 placeholder.
    pub kept_ratio_undefined: bool,
}

pub fn compactness_stats(trace: &EpisodeTrace) -> Option<Compactness> {
    let footer = trace.footer.as_ref()?;
    let records: Vec<_> = trace.prefilter_records().collect();
    let kept_mean = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.snapshots_after as f64).sum::<f64>() / records.len() as f64
    };
    let ratios: Vec<f64> = records
        .iter()
        .filter(|r| r.snapshots_before > 0)
        .map(|r| r.snapshots_after as f64 / r.snapshots_before as f64)
        .collect();
    let undefined = ratios.is_empty();
    Some(Compactness {
        snapshots_final: footer.snapshots_final,
        observations_total: footer.observations_total,
        prefilter_kept_mean: kept_mean,
        kept_ratio: if undefined { 1.0 } else { ratios.iter().sum::<f64>() / ratios.len() as f64 },
        kept_ratio_undefined: undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub success: bool,
    pub spl: f64,
    pub path_length: f64,
    pub shortest_path: f64,
    pub snapshots_final: usize,
    pub observations_total: usize,
    pub prefilter_kept_mean: f64,
    pub kept_ratio: f64,
    pub kept_ratio_undefined: bool,
    pub steps: u32,
    pub outcome: String,
}

pub fn outcome_label(o: &Outcome) -> &'static str {
    match o {
        Outcome::Answered { .. } => "answered",
        Outcome::Reached { .. } => "reached",
        Outcome::BudgetExhausted => "budget_exhausted",
        Outcome::Aborted { .. } => "aborted",
    }
}

/// Scores a finished trace against ground truth. Aborted episodes never
/// succeed. Object-goal success is judged on the final position; question
/// success on the answer text.
pub fn score_episode(trace: &EpisodeTrace) -> Result<EpisodeScore, String> {
    let footer = trace.footer.as_ref().ok_or("trace is not finished")?;
    let scene = &trace.header.scene;
    let task = &trace.header.task;
    let cfg = &trace.header.cfg;
    let goal = goal_position(scene, task).ok_or("task has no resolvable goal position")?;
    let start = match trace.steps.first() {
        Some(s) => s.pose,
        None => start_pose(scene, cfg).map_err(|e| e.to_string())?,
    };
    let shortest = sim::geodesic_distance(scene, start.position, goal).map_err(|e| e.to_string())?;
    let ok = match (&footer.outcome, task.kind) {
        (Outcome::Aborted { .. }, _) => false,
        (Outcome::Answered { answer }, TaskKind::Question) => {
            task.answer_key.as_deref().is_some_and(|k| answer_matches(answer, k))
        }
        (_, TaskKind::Question) => false,
        (_, TaskKind::ObjectGoal) => success(footer.final_pose.position, goal, cfg.success_radius),
    };
    let c = compactness_stats(trace).expect("footer checked above");
    Ok(EpisodeScore {
        success: ok,
        spl: spl(ok, shortest, footer.path_length),
        path_length: footer.path_length,
        shortest_path: shortest,
        snapshots_final: c.snapshots_final,
        observations_total: c.observations_total,
        prefilter_kept_mean: c.prefilter_kept_mean,
        kept_ratio: c.kept_ratio,
        kept_ratio_undefined: c.kept_ratio_undefined,
        steps: footer.steps,
        outcome: outcome_label(&footer.outcome).into(),
    })
}

fn goal_position(scene: &Scene, task: &Task) -> Option<Position2> {
    task.goal_position.or_else(|| task.goal_object.and_then(|g| scene.object(g)).map(|o| o.position))
}

/// Which policy a batch or run uses. Parses `oracle`, `random`,
/// `random:<seed>` and `remote:<url>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySpec {
    Oracle,
    Random(Option<u64>),
    Remote(String),
}

impl FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "oracle" => Ok(Self::Oracle),
            None if s == "random" => Ok(Self::Random(None)),
            Some(("random", seed)) => seed.parse().map(|n| Self::Random(Some(n))).map_err(|_| format!("bad random seed {seed:?}")),
            Some(("remote", url)) if !url.is_empty() => Ok(Self::Remote(url.into())),
            _ => Err(format!("unknown policy {s:?} (expected oracle, random[:seed] or remote:<url>)")),
        }
    }
}

impl PolicySpec {
    /// A fresh policy instance; random policies without an explicit seed
    /// derive one from the episode seed.
    pub fn build(&self, episode_seed: u64) -> Box<dyn Policy> {
        match self {
            Self::Oracle => Box::new(OraclePolicy::new()),
            Self::Random(seed) => Box::new(RandomPolicy::new(seed.unwrap_or(episode_seed))),
            Self::Remote(url) => Box::new(RemotePolicy::http(url)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub scene: Arc<Scene>,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene_id: String,
    pub task_id: String,
    pub outcome: String,
    pub success: bool,
    pub spl: f64,
    pub path_m: f64,
    pub shortest_m: f64,
    pub steps: u32,
    pub snapshots_final: usize,
    pub observations: usize,
    pub prefilter_kept_mean: f64,
    pub kept_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_spl: f64,
    pub mean_path_m: f64,
    pub mean_steps: f64,
    pub mean_snapshots_final: f64,
    pub mean_observations: f64,
    pub mean_prefilter_kept: f64,
    pub mean_kept_ratio: f64,
    pub kept_ratio_undefined: usize,
    pub errors: usize,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub summary: Summary,
    /// Finished traces in row order; `None` where the episode failed to run.
    pub traces: Vec<Option<EpisodeTrace>>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER).expect("in-memory write");
        }
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serialization is infallible")
    }
}

pub const CSV_HEADER: [&str; 12] = [
    "scene_id",
    "task_id",
    "outcome",
    "success",
    "spl",
    "path_m",
    "shortest_m",
    "steps",
    "snapshots_final",
    "observations",
    "prefilter_kept_mean",
    "kept_ratio",
];

fn run_job(job: &Job, policy: &PolicySpec, cfg: &EpisodeConfig) -> (ReportRow, Option<EpisodeTrace>, bool) {
    let mut row = ReportRow {
        scene_id: job.scene.scene_id(),
        task_id: job.task.id.clone(),
        outcome: String::new(),
        success: false,
        spl: 0.0,
        path_m: 0.0,
        shortest_m: 0.0,
        steps: 0,
        snapshots_final: 0,
        observations: 0,
        prefilter_kept_mean: 0.0,
        kept_ratio: 1.0,
    };
    let mut p = policy.build(cfg.seed ^ job.scene.seed);
    let trace = match run_episode(job.scene.clone(), job.task.clone(), p.as_mut(), cfg.clone()) {
        Ok(t) => t,
        Err(e) => {
            row.outcome = format!("error: {e}");
            return (row, None, false);
        }
    };
    match score_episode(&trace) {
        Ok(s) => {
            row.outcome = s.outcome;
            row.success = s.success;
            row.spl = s.spl;
            row.path_m = s.path_length;
            row.shortest_m = s.shortest_path;
            row.steps = s.steps;
            row.snapshots_final = s.snapshots_final;
            row.observations = s.observations_total;
            row.prefilter_kept_mean = s.prefilter_kept_mean;
            row.kept_ratio = s.kept_ratio;
            (row, Some(trace), s.kept_ratio_undefined)
        }
        Err(e) => {
            row.outcome = format!("error: {e}");
            (row, Some(trace), false)
        }
    }
}

/// Runs every job on a pool of `parallelism` threads. Rows are sorted by
/// (scene_id, task_id) so the report does not depend on job order or
/// scheduling.
pub fn batch_run(jobs: &[Job], policy: &PolicySpec, cfg: &EpisodeConfig, parallelism: usize) -> Report {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool construction");
    let mut results: Vec<_> = pool.install(|| jobs.par_iter().map(|j| run_job(j, policy, cfg)).collect());
    results.sort_by(|a, b| (&a.0.scene_id, &a.0.task_id).cmp(&(&b.0.scene_id, &b.0.task_id)));

    let n = results.len();
    let mean = |f: &dyn Fn(&ReportRow) -> f64| {
        if n == 0 {
            0.0
        } else {
            results.iter().map(|r| f(&r.0)).sum::<f64>() / n as f64
        }
    };
    let summary = Summary {
        episodes: n,
        success_rate: 100.0 * mean(&|r| if r.success { 1.0 } else { 0.0 }),
        mean_spl: mean(&|r| r.spl),
        mean_path_m: mean(&|r| r.path_m),
        mean_steps: mean(&|r| r.steps as f64),
        mean_snapshots_final: mean(&|r| r.snapshots_final as f64),
        mean_observations: mean(&|r| r.observations as f64),
        mean_prefilter_kept: mean(&|r| r.prefilter_kept_mean),
        mean_kept_ratio: mean(&|r| r.kept_ratio),
        kept_ratio_undefined: results.iter().filter(|r| r.2).count(),
        errors: results.iter().filter(|r| r.0.outcome.starts_with("error")).count(),
    };
    let (rows, traces) = results.into_iter().map(|(r, t, _)| (r, t)).unzip();
    Report { rows, summary, traces }
}
