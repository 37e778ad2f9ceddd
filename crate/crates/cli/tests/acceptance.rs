//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snapmem_core::agent::policy::{Decision, Policy, PolicyContext, PolicyError, PolicyView, RandomPolicy};
use snapmem_core::agent::{replay_trace, run_episode, Episode};
use snapmem_core::covis::cluster_covisibility;
use snapmem_core::frontier::{angular_span, update_frontiers, FrontierEvent};
use snapmem_core::metrics::{batch_run, spl, Job, PolicySpec, Report};
use snapmem_core::sim::{generate_scene, generate_tasks, SceneParams, TaskKind};
use snapmem_core::{
    validate_memory, EpisodeConfig, FrameCandidate, FrameId, Frontier, FrontierId, GridIndex, MemorySnapshot,
    ObjectId, OccupancyGrid, Pose, Position2, SceneMemory, SceneObject,
};

// Pinned tolerances and thresholds.
const FUZZ_CASES: u64 = 1000;
const FUZZ_MAX_OBJECTS: usize = 40;
const FUZZ_MAX_FRAMES: usize = 60;
const FUZZ_TIME_LIMIT_S: f64 = 5.0;
const TINY_CASES: u64 = 200;
const TINY_MAX: usize = 6;
const TINY_RATIO_BOUND: usize = 2;
const TINY_PASS_FRACTION: f64 = 0.95;
const INCREMENTAL_EPISODES: u64 = 100;
const NAV_SCENES: u64 = 50;
const NAV_STEP_LIMIT: u32 = 50;
const NAV_MIN_MEAN_SPL: f64 = 0.6;
const NAV_TIME_LIMIT_S: f64 = 60.0;
const COMPACT_MAX_KEPT_RATIO: f64 = 0.5;
const COMPACT_MIN_CATEGORIES: usize = 15;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_instance(rng: &mut ChaCha8Rng, max_objects: usize, max_frames: usize) -> (Vec<SceneObject>, Vec<FrameCandidate>) {
    let n_obj = rng.gen_range(1..=max_objects);
    let n_frames = rng.gen_range(1..=max_frames);
    let objects: Vec<SceneObject> = (0..n_obj)
        .map(|i| SceneObject {
            id: ObjectId(i as u32),
            category: format!("cat{}", rng.gen_range(0..8)),
            position: Position2::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)),
            confidence: 1.0,
        })
        .collect();
    let density: f64 = rng.gen_range(0.05..0.6);
    let mut frames: Vec<FrameCandidate> = (0..n_frames)
        .map(|i| FrameCandidate {
            id: FrameId(i as u32),
            pose: Pose::new(Position2::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)), 0.0),
            view_index: 0,
            step: 0,
            visible_objects: BTreeMap::new(),
        })
        .collect();
    for o in &objects {
        for f in frames.iter_mut() {
            if rng.gen_bool(density) {
                f.visible_objects.insert(o.id, (rng.gen_range(100..=1000) as f64) / 1000.0);
            }
        }
        if !frames.iter().any(|f| f.visible_objects.contains_key(&o.id)) {
            let k = rng.gen_range(0..frames.len());
            frames[k].visible_objects.insert(o.id, 0.5);
        }
    }
    (objects, frames)
}

fn memory_of(objects: &[SceneObject], frames: &[FrameCandidate], snapshots: &[MemorySnapshot]) -> SceneMemory {
    let grid = OccupancyGrid::new(Position2::default(), 4, 4, 0.1).unwrap();
    let mut m = SceneMemory::new(grid, 20);
    m.objects = objects.iter().map(|o| (o.id, o.clone())).collect();
    m.frames = frames.iter().map(|f| (f.id, f.clone())).collect();
    m.snapshots = snapshots.iter().map(|s| (s.id, s.clone())).collect();
    m
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut invalid = 0;
    let mut errors = 0;
    for case in 0..FUZZ_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let (objects, frames) = random_instance(&mut rng, FUZZ_MAX_OBJECTS, FUZZ_MAX_FRAMES);
        match cluster_covisibility(&objects, &frames) {
            Ok(snaps) => {
                if !validate_memory(&memory_of(&objects, &frames, &snaps)).is_valid() {
                    invalid += 1;
                }
            }
            Err(_) => errors += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        invalid == 0 && errors == 0 && secs < FUZZ_TIME_LIMIT_S,
        format!("{FUZZ_CASES} instances, {invalid} invalid, {errors} errors, {secs:.2} s (limit {FUZZ_TIME_LIMIT_S} s)"),
    )
}

/// Feasibility checked from first principles: clusters partition the objects,
/// frames are distinct and each frame sees every member of its cluster.
fn feasible(objects: &[SceneObject], frames: &[FrameCandidate], snaps: &[MemorySnapshot]) -> bool {
    let mut owned = BTreeSet::new();
    let mut used = BTreeSet::new();
    for s in snaps {
        let Some(f) = frames.iter().find(|f| f.id == s.frame) else { return false };
        if s.cluster.is_empty() || !used.insert(s.frame) {
            return false;
        }
        for o in &s.cluster {
            if !f.visible_objects.contains_key(o) || !owned.insert(*o) {
                return false;
            }
        }
    }
    owned.len() == objects.len() && objects.iter().all(|o| owned.contains(&o.id))
}

/// Smallest number of frames whose views jointly cover every object, which is
/// the fewest snapshots any feasible memory can have.
fn minimum_snapshots(objects: &[SceneObject], frames: &[FrameCandidate]) -> usize {
    let all: BTreeSet<ObjectId> = objects.iter().map(|o| o.id).collect();
    let mut best = usize::MAX;
    for mask in 1u32..(1 << frames.len()) {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let seen: BTreeSet<ObjectId> = frames
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .flat_map(|(_, f)| f.visible_objects.keys().copied())
            .collect();
        if all.is_subset(&seen) {
            best = size;
        }
    }
    best
}

fn criterion_2() -> Verdict {
    let mut infeasible = 0;
    let mut within = 0;
    let mut histogram: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for case in 0..TINY_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + case);
        let (objects, frames) = random_instance(&mut rng, TINY_MAX, TINY_MAX);
        let snaps = match cluster_covisibility(&objects, &frames) {
            Ok(s) => s,
            Err(_) => {
                infeasible += 1;
                continue;
            }
        };
        if !feasible(&objects, &frames, &snaps) {
            infeasible += 1;
        }
        let min = minimum_snapshots(&objects, &frames);
        *histogram.entry((snaps.len(), min)).or_default() += 1;
        if snaps.len() <= TINY_RATIO_BOUND * min {
            within += 1;
        }
    }
    let fraction = within as f64 / TINY_CASES as f64;
    let optimal: usize = histogram.iter().filter(|((g, m), _)| g == m).map(|(_, n)| n).sum();
    verdict(
        infeasible == 0 && fraction >= TINY_PASS_FRACTION,
        format!(
            "{TINY_CASES} cases, {infeasible} infeasible, greedy <= {TINY_RATIO_BOUND}x minimum on {:.1}% (need {:.0}%), greedy optimal on {optimal}",
            fraction * 100.0,
            TINY_PASS_FRACTION * 100.0
        ),
    )
}

/// Always picks a random reachable frontier, so episodes run until the budget
/// or the map is exhausted.
struct Explorer(ChaCha8Rng);

impl Policy for Explorer {
    fn name(&self) -> String {
        "explorer".into()
    }

    fn decide(&mut self, view: &PolicyView, _: &PolicyContext) -> Result<Decision, PolicyError> {
        if view.frontiers.is_empty() {
            return Err(PolicyError::Stuck);
        }
        let f = &view.frontiers[self.0.gen_range(0..view.frontiers.len())];
        Ok(Decision::frontier(f.id.0, ""))
    }
}

fn criterion_3() -> (Verdict, f64) {
    let mut checks = 0usize;
    let mut failures = Vec::new();
    let mut kept_ratios = Vec::new();
    for seed in 0..INCREMENTAL_EPISODES {
        let scene = Arc::new(generate_scene(seed, SceneParams::default()).unwrap());
        let task = generate_tasks(&scene, seed, 1, Some(TaskKind::ObjectGoal)).remove(0);
        let cfg = EpisodeConfig { seed, ..EpisodeConfig::default() };
        let mut ep = Episode::new(scene, task, cfg, "explorer").unwrap();
        let mut policy = Explorer(ChaCha8Rng::seed_from_u64(seed));
        let mut prev_frames: BTreeSet<FrameId> = BTreeSet::new();
        let mut prev_objects: BTreeSet<ObjectId> = BTreeSet::new();
        loop {
            let m = ep.memory();
            let frames: BTreeSet<FrameId> = m.frames.keys().copied().collect();
            let objects: BTreeSet<ObjectId> = m.objects.keys().copied().collect();
            checks += 1;
            let report = validate_memory(m);
            if !report.is_valid() {
                failures.push(format!("seed {seed} step {}: {:?}", ep.step(), report.violations.first()));
            }
            if !prev_frames.is_subset(&frames) || !prev_objects.is_subset(&objects) {
                failures.push(format!("seed {seed} step {}: memory shrank", ep.step()));
            }
            prev_frames = frames;
            prev_objects = objects;
            let Some(view) = ep.view() else { break };
            match policy.decide(view, &ep.context()) {
                Ok(d) => {
                    ep.apply(d).unwrap();
                }
                Err(_) => ep.abort("stuck"),
            }
        }
        kept_ratios.extend(snapmem_core::metrics::compactness_stats(ep.trace()).map(|c| c.kept_ratio));
    }
    let long_kept = kept_ratios.iter().sum::<f64>() / kept_ratios.len() as f64;
    let v = verdict(
        failures.is_empty(),
        format!(
            "{INCREMENTAL_EPISODES} episodes, {checks} step checks, {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    );
    (v, long_kept)
}

fn grid(text: &str) -> OccupancyGrid {
    OccupancyGrid::from_ascii(text, Position2::default(), 0.1).unwrap()
}

fn rows(lines: &[String]) -> String {
    lines.join("\n")
}

fn anchor_ok(f: &Frontier, g: &OccupancyGrid) -> bool {
    let Some(a) = g.index_of(f.anchor) else { return false };
    g.is_explored(a) && f.region.iter().any(|c| g.neighbors8(*c).any(|n| n == a))
}

fn fresh_ids() -> impl FnMut() -> FrontierId {
    let mut n = 0;
    move || {
        n += 1;
        FrontierId(n - 1)
    }
}

fn frontier_from(id: u32, region: BTreeSet<GridIndex>, g: &OccupancyGrid) -> Frontier {
    let anchor = snapmem_core::frontier::frontier_anchor(&region, g).unwrap();
    Frontier { id: FrontierId(id), region, anchor, observed_from: Pose::default(), observed_step: 0, stale: false }
}

fn criterion_4() -> Verdict {
    let cfg = EpisodeConfig::default();
    let agent = Pose::new(Position2::new(0.05, 0.05), 0.0);
    let mut failures: Vec<&str> = Vec::new();
    let mut anchors = 0;
    let mut check_anchors = |fs: &BTreeMap<FrontierId, Frontier>, g: &OccupancyGrid, failures: &mut Vec<&str>| {
        for f in fs.values() {
            anchors += 1;
            if !anchor_ok(f, g) {
                failures.push("anchor not explored-adjacent");
            }
        }
    };

    // Floor: a 20-cell pocket is dropped; opening one more cell keeps it.
    let pocket = |extra: char| {
        let wall: String = std::iter::once(extra).chain(std::iter::repeat('#').take(29)).collect();
        rows(&[wall, format!("{}{}", ".".repeat(20), "#".repeat(10)), "e".repeat(30), "e".repeat(30), "e".repeat(30)])
    };
    let g = grid(&pocket('#'));
    let up = update_frontiers(&BTreeMap::new(), &g, agent, &cfg, fresh_ids());
    if !up.frontiers.is_empty() || up.discarded.len() != 20 {
        failures.push("20-cell pocket kept");
    }
    let g = grid(&pocket('.'));
    let up = update_frontiers(&BTreeMap::new(), &g, agent, &cfg, fresh_ids());
    let sizes: Vec<usize> = up.frontiers.values().map(|f| f.region.len()).collect();
    if sizes != vec![21] {
        failures.push("21-cell pocket dropped");
    }
    check_anchors(&up.frontiers, &g, &mut failures);

    // IoU boundary: a 40-cell band against remembered regions of 38 and 32 cells.
    let band = rows(&[".".repeat(40), "e".repeat(40), "e".repeat(40)]);
    let g = grid(&band);
    let current: BTreeSet<GridIndex> = (0..40).map(|c| GridIndex::new(2, c)).collect();
    let keep_region: BTreeSet<GridIndex> = (0..38).map(|c| GridIndex::new(2, c)).collect();
    let update_region: BTreeSet<GridIndex> = (0..32).map(|c| GridIndex::new(2, c)).collect();
    for (region, expect_update, label) in
        [(keep_region, false, "IoU 0.95 not kept"), (update_region, true, "IoU 0.8 not updated")]
    {
        let old = BTreeMap::from([(FrontierId(7), frontier_from(7, region, &g))]);
        let up = update_frontiers(&old, &g, agent, &cfg, fresh_ids());
        let f = up.frontiers.get(&FrontierId(7));
        let ok = match f {
            Some(f) if expect_update => {
                up.events == vec![FrontierEvent::Updated(FrontierId(7))] && f.stale && f.region == current
            }
            Some(f) => up.events.is_empty() && !f.stale && f.region == current,
            None => false,
        };
        if !ok || up.frontiers.len() != 1 {
            failures.push(label);
        }
        check_anchors(&up.frontiers, &g, &mut failures);
    }

    // Span: a two-row band seen from below at 170 degrees splits in two.
    let wide = rows(&[".".repeat(71), ".".repeat(71), "e".repeat(71), "e".repeat(71), "e".repeat(71)]);
    let g = grid(&wide);
    let vantage = Pose::new(g.center(GridIndex::new(0, 35)), 0.0);
    let whole: BTreeSet<GridIndex> = (3..5).flat_map(|r| (0..71).map(move |c| GridIndex::new(r, c))).collect();
    let span = angular_span(&whole, vantage.position, &g).unwrap();
    let up = update_frontiers(&BTreeMap::new(), &g, vantage, &cfg, fresh_ids());
    let spans: Vec<f64> =
        up.frontiers.values().map(|f| angular_span(&f.region, vantage.position, &g).unwrap()).collect();
    let union: BTreeSet<GridIndex> = up.frontiers.values().flat_map(|f| f.region.iter().copied()).collect();
    if !(165.0..175.0).contains(&span)
        || spans.len() != 2
        || spans.iter().any(|s| *s > cfg.span_split_threshold_deg)
        || union != whole
    {
        failures.push("170-degree region not split into two sub-threshold regions");
    }
    check_anchors(&up.frontiers, &g, &mut failures);

    // Anchors over generated episodes.
    for seed in 0..10 {
        let scene = Arc::new(generate_scene(seed, SceneParams::default()).unwrap());
        let task = generate_tasks(&scene, seed, 1, Some(TaskKind::ObjectGoal)).remove(0);
        let mut ep = Episode::new(scene, task, EpisodeConfig::default(), "random").unwrap();
        let mut policy = RandomPolicy::new(seed);
        while let Some(view) = ep.view() {
            check_anchors(&ep.memory().frontiers, &ep.memory().grid, &mut failures);
            let d = policy.decide(view, &ep.context()).unwrap();
            ep.apply(d).unwrap();
        }
    }
    let detail = format!(
        "floor, IoU keep/update, span split (measured {span:.1} deg -> {:?}), {anchors} anchors checked{}",
        spans.iter().map(|s| format!("{s:.1}")).collect::<Vec<_>>(),
        if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
    );
    verdict(failures.is_empty(), detail)
}

fn nav_jobs() -> Vec<Job> {
    (0..NAV_SCENES)
        .map(|seed| {
            let scene = generate_scene(seed, SceneParams { rooms: 3, objects_per_room: 5, ..SceneParams::default() }).unwrap();
            let task = generate_tasks(&scene, seed, 1, Some(TaskKind::ObjectGoal)).remove(0);
            Job { scene: Arc::new(scene), task }
        })
        .collect()
}

fn criterion_5(report: &Report, secs: f64) -> Verdict {
    let s = &report.summary;
    let over_budget = report.rows.iter().filter(|r| r.steps > NAV_STEP_LIMIT).count();
    verdict(
        s.success_rate == 100.0 && over_budget == 0 && s.mean_spl >= NAV_MIN_MEAN_SPL && secs < NAV_TIME_LIMIT_S,
        format!(
            "{} scenes, success {:.1}%, mean SPL {:.3} (min {NAV_MIN_MEAN_SPL}), max steps {}, {secs:.2} s",
            s.episodes,
            s.success_rate,
            s.mean_spl,
            report.rows.iter().map(|r| r.steps).max().unwrap_or(0)
        ),
    )
}

fn criterion_6(jobs: &[Job], report: &Report, long_kept: f64) -> Verdict {
    let mut ordering_ok = true;
    for t in report.traces.iter().flatten() {
        let f = t.footer.as_ref().unwrap();
        ordering_ok &= f.snapshots_final <= f.distinct_frames && f.distinct_frames <= f.observations_total;
    }
    let rich = jobs.iter().all(|j| j.scene.categories().len() >= COMPACT_MIN_CATEGORIES);
    let ratio = report.summary.mean_kept_ratio;
    verdict(
        ordering_ok && rich && ratio <= COMPACT_MAX_KEPT_RATIO,
        format!(
            "count ordering {}, scenes with >= {COMPACT_MIN_CATEGORIES} categories {}, mean kept_ratio {ratio:.3} (max {COMPACT_MAX_KEPT_RATIO}), mean kept {:.2} of {:.2} final snapshots; full-budget exploration episodes: {long_kept:.3}",
            if ordering_ok { "holds" } else { "violated" },
            if rich { "all" } else { "not all" },
            report.summary.mean_prefilter_kept,
            report.summary.mean_snapshots_final
        ),
    )
}

fn criterion_7(jobs: &[Job], report: &Report) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut rerun_diffs = 0;
    let mut replay_fail = 0;
    let mut stored = 0;
    let mut extra: Vec<(String, String)> = Vec::new();
    for (i, job) in jobs.iter().take(10).enumerate() {
        let cfg = EpisodeConfig { seed: i as u64, ..EpisodeConfig::default() };
        let mut p = RandomPolicy::new(i as u64);
        let a = run_episode(job.scene.clone(), job.task.clone(), &mut p, cfg.clone()).unwrap().to_jsonl();
        let mut p = RandomPolicy::new(i as u64);
        let b = run_episode(job.scene.clone(), job.task.clone(), &mut p, cfg).unwrap().to_jsonl();
        rerun_diffs += usize::from(a != b);
        extra.push((format!("random-{i}"), a));
    }
    let again = batch_run(jobs, &PolicySpec::Oracle, &EpisodeConfig::default(), 1);
    for (x, y) in report.traces.iter().zip(&again.traces) {
        let (x, y) = (x.as_ref().unwrap().to_jsonl(), y.as_ref().unwrap().to_jsonl());
        rerun_diffs += usize::from(x != y);
    }
    rerun_diffs += usize::from(report.to_csv() != again.to_csv());
    for (row, t) in report.rows.iter().zip(&report.traces) {
        extra.push((row.task_id.clone(), t.as_ref().unwrap().to_jsonl()));
    }
    for (name, text) in &extra {
        std::fs::write(dir.path().join(format!("{name}.jsonl")), text).unwrap();
        stored += 1;
        let t = snapmem_core::agent::trace::EpisodeTrace::from_jsonl(text).unwrap();
        if replay_trace(&t).map(|r| r.to_jsonl() != *text).unwrap_or(true) {
            replay_fail += 1;
        }
    }
    let cli = Command::new(env!("CARGO_BIN_EXE_snapmem"))
        .args(["replay", "--verify", "--trace"])
        .arg(dir.path())
        .output()
        .unwrap();
    let cli_ok = cli.status.code() == Some(0);
    verdict(
        rerun_diffs == 0 && replay_fail == 0 && cli_ok,
        format!(
            "{rerun_diffs} re-run differences, {stored} stored traces, {replay_fail} in-process replay failures, `replay --verify` exit {:?}",
            cli.status.code()
        ),
    )
}

fn criterion_8() -> Verdict {
    let c = EpisodeConfig::default();
    let exact = c.n_views == 3
        && c.view_gap_deg == 60.0
        && c.max_dist == 3.5
        && c.prefilter_k == 10
        && c.obs_dist == 0.75
        && c.move_limit == 1.0
        && c.arrive_radius == 0.5
        && c.success_radius == 1.0
        && c.step_budget == 50
        && c.cell_size == 0.1
        && c.explored_radius == 1.7
        && c.iou_update_threshold == 0.95
        && c.span_split_threshold_deg == 150.0
        && c.min_frontier_cells == 20;
    let cli = Command::new(env!("CARGO_BIN_EXE_snapmem")).arg("self-test").output().unwrap();
    verdict(
        exact && cli.status.code() == Some(0),
        format!("14 defaults {}, `self-test` exit {:?}", if exact { "equal" } else { "differ" }, cli.status.code()),
    )
}

fn criterion_9() -> Verdict {
    let cases = [(spl(true, 4.0, 8.0), 0.5), (spl(false, 4.0, 8.0), 0.0), (spl(true, 4.0, 3.0), 1.0), (spl(true, 5.0, 5.0), 1.0)];
    let ok = cases.iter().all(|(got, want)| got == want);
    verdict(ok, format!("{:?}", cases.iter().map(|c| c.0).collect::<Vec<_>>()))
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    results.push((1, "clustering feasibility fuzz", criterion_1()));
    results.push((2, "tiny-instance oracle", criterion_2()));
    let (v3, long_kept) = criterion_3();
    results.push((3, "incremental invariants", v3));
    results.push((4, "frontier suite", criterion_4()));

    let jobs = nav_jobs();
    let start = Instant::now();
    let report = batch_run(&jobs, &PolicySpec::Oracle, &EpisodeConfig::default(), 1);
    let secs = start.elapsed().as_secs_f64();
    results.push((5, "oracle navigation", criterion_5(&report, secs)));
    results.push((6, "compactness", criterion_6(&jobs, &report, long_kept)));
    results.push((7, "determinism and replay", criterion_7(&jobs, &report)));
    results.push((8, "default hyperparameters", criterion_8()));
    results.push((9, "SPL unit checks", criterion_9()));

    let mut failed = 0;
    for (n, name, v) in &results {
        failed += usize::from(!v.pass);
        println!("criterion {n} [{name}]: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
