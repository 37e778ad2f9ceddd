//! Incremental snapshot memory and category prefiltering.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::covis::{self, ClusterError};
use crate::model::{
    EpisodeConfig, FrameCandidate, FrameId, MemorySnapshot, ObjectId, Position2, SceneMemory, SceneObject,
    SnapshotId,
};

/// Noisy-mode association radius, meters (strict).
pub const NOISY_MATCH_RADIUS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub object: SceneObject,
    pub frame: FrameId,
}

pub fn filter_by_distance(detections: Vec<Detection>, agent: Position2, max_dist: f64) -> Vec<Detection> {
    detections.into_iter().filter(|d| d.object.position.distance(agent) <= max_dist).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    ExactId,
    Noisy,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeOutcome {
    /// Objects inserted by this call, ascending.
    pub new_ids: Vec<ObjectId>,
    /// Detection id to the id it is stored under. Identity except in noisy mode.
    pub remap: BTreeMap<ObjectId, ObjectId>,
}

/// Folds detections into the object set.
///
/// Exact-id mode keeps the highest confidence seen per id. Noisy mode ignores
/// detection ids for association: a detection joins the nearest stored object
/// of the same category closer than [`NOISY_MATCH_RADIUS`] (ties to the lower
/// id), and positions merge by confidence weight. An unmatched noisy detection
/// whose id is already taken falls back to that id.
pub fn match_and_merge_objects(
    objects: &mut BTreeMap<ObjectId, SceneObject>,
    detections: &[Detection],
    mode: MatchMode,
) -> MergeOutcome {
    let mut out = MergeOutcome::default();
    for d in detections {
        let det = &d.object;
        let target = match mode {
            MatchMode::ExactId => objects.contains_key(&det.id).then_some(det.id),
            MatchMode::Noisy => nearest_same_category(objects, det).or(objects.contains_key(&det.id).then_some(det.id)),
        };
        match target {
            Some(id) => {
                let o = objects.get_mut(&id).expect("target exists");
                if mode == MatchMode::Noisy {
                    let w = o.confidence + det.confidence;
                    if w > 0.0 {
                        o.position = o.position.scale(o.confidence / w).add(det.position.scale(det.confidence / w));
                    }
                }
                o.confidence = o.confidence.max(det.confidence);
                out.remap.insert(det.id, id);
            }
            None => {
                objects.insert(det.id, det.clone());
                out.new_ids.push(det.id);
                out.remap.insert(det.id, det.id);
            }
        }
    }
    out.new_ids.sort();
    out.new_ids.dedup();
    out
}

fn nearest_same_category(objects: &BTreeMap<ObjectId, SceneObject>, det: &SceneObject) -> Option<ObjectId> {
    let mut best: Option<(f64, ObjectId)> = None;
    for o in objects.values() {
        if o.category != det.category {
            continue;
        }
        let d = o.position.distance(det.position);
        if d < NOISY_MATCH_RADIUS && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, o.id));
        }
    }
    best.map(|(_, id)| id)
}

/// Snapshots whose cluster shares an object with `detected`, in id order.
pub fn affected_snapshots<'a>(
    snapshots: impl IntoIterator<Item = &'a MemorySnapshot>,
    detected: &BTreeSet<ObjectId>,
) -> Vec<MemorySnapshot> {
    snapshots.into_iter().filter(|s| !s.cluster.is_disjoint(detected)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Absorption {
    pub absorbed: SnapshotId,
    pub into: SnapshotId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotUpdate {
    /// The affected snapshots that were dissolved and re-clustered.
    pub replaced: Vec<SnapshotId>,
    /// Snapshots surviving the step that did not exist before it.
    pub created: Vec<SnapshotId>,
    pub absorbed: Vec<Absorption>,
    pub work_items: usize,
    pub splits: usize,
}

/// Re-clusters the affected snapshots together with newly inserted objects
/// against every frame in memory, then merges snapshots sharing a frame.
/// `memory.frames` must already include this step's frames.
pub fn update_snapshots(
    memory: &mut SceneMemory,
    detected: &BTreeSet<ObjectId>,
    new_ids: &[ObjectId],
) -> Result<SnapshotUpdate, ClusterError> {
    let prev = affected_snapshots(memory.snapshots.values(), detected);
    let mut input: BTreeSet<ObjectId> = prev.iter().flat_map(|s| s.cluster.iter().copied()).collect();
    input.extend(new_ids.iter().copied());
    let objects: Vec<&SceneObject> = input.iter().map(|id| &memory.objects[id]).collect();
    let outcome = covis::cluster_groups(objects, memory.frames.values())?;

    let mut update = SnapshotUpdate {
        replaced: prev.iter().map(|s| s.id).collect(),
        work_items: outcome.work_items,
        splits: outcome.splits,
        ..Default::default()
    };
    let mut all: Vec<MemorySnapshot> =
        memory.snapshots.values().filter(|s| !update.replaced.contains(&s.id)).cloned().collect();
    let mut fresh = Vec::new();
    for g in outcome.groups {
        let id = memory.alloc_snapshot_id();
        fresh.push(id);
        all.push(MemorySnapshot { id, frame: g.frame, cluster: g.cluster });
    }

    let before: BTreeMap<SnapshotId, FrameId> = all.iter().map(|s| (s.id, s.frame)).collect();
    let merged = covis::merge_same_frame(all);
    let by_frame: BTreeMap<FrameId, SnapshotId> = merged.iter().map(|s| (s.frame, s.id)).collect();
    for (id, frame) in before {
        let into = by_frame[&frame];
        if into != id {
            update.absorbed.push(Absorption { absorbed: id, into });
        }
    }
    update.created = fresh.into_iter().filter(|id| merged.iter().any(|s| s.id == *id)).collect();
    memory.snapshots = merged.into_iter().map(|s| (s.id, s)).collect();
    Ok(update)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub frames: Vec<FrameId>,
    pub detections_kept: usize,
    pub detections_dropped: usize,
    pub new_objects: Vec<ObjectId>,
    pub snapshots: SnapshotUpdate,
}

/// One observation step: applies the distance gate to detections, restricts
/// each frame's visibility list to the surviving detections, appends the
/// frames, merges objects and updates snapshots.
pub fn ingest_step(
    memory: &mut SceneMemory,
    mut frames: Vec<FrameCandidate>,
    detections: Vec<Detection>,
    agent: Position2,
    cfg: &EpisodeConfig,
) -> Result<IngestReport, ClusterError> {
    let total = detections.len();
    let kept = filter_by_distance(detections, agent, cfg.max_dist);
    let mode = if cfg.noisy_matching { MatchMode::Noisy } else { MatchMode::ExactId };
    let merge = match_and_merge_objects(&mut memory.objects, &kept, mode);

    let mut seen: BTreeMap<FrameId, BTreeMap<ObjectId, f64>> = BTreeMap::new();
    for d in &kept {
        let id = merge.remap[&d.object.id];
        let slot = seen.entry(d.frame).or_default().entry(id).or_insert(d.object.confidence);
        *slot = slot.max(d.object.confidence);
    }
    for f in &mut frames {
        f.visible_objects = seen.remove(&f.id).unwrap_or_default();
        memory.frames.insert(f.id, f.clone());
    }
    let detected: BTreeSet<ObjectId> = kept.iter().map(|d| merge.remap[&d.object.id]).collect();
    let snapshots = update_snapshots(memory, &detected, &merge.new_ids)?;
    Ok(IngestReport {
        frames: frames.iter().map(|f| f.id).collect(),
        detections_kept: kept.len(),
        detections_dropped: total - kept.len(),
        new_objects: merge.new_ids,
        snapshots,
    })
}

/// Distinct categories in lexicographic (case-sensitive) order.
pub fn category_inventory(memory: &SceneMemory) -> Vec<String> {
    let set: BTreeSet<&str> = memory.objects.values().map(|o| o.category.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

/// Orders categories by relevance to a query.
pub trait CategoryRanker {
    fn rank(&self, query: &str, inventory: &[String]) -> Vec<String>;
}

/// Counts shared lowercase tokens between query and category name.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalRanker;

impl LexicalRanker {
    pub fn score(query: &str, category: &str) -> usize {
        let q = tokens(query);
        tokens(category).intersection(&q).count()
    }
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

impl CategoryRanker for LexicalRanker {
    fn rank(&self, query: &str, inventory: &[String]) -> Vec<String> {
        let mut scored: Vec<(usize, &String)> = inventory.iter().map(|c| (Self::score(query, c), c)).collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.into_iter().map(|(_, c)| c.clone()).collect()
    }
}

/// Top `k` categories from the ranker's order, dropping duplicates and names
/// not in the inventory.
pub fn prefilter(query: &str, inventory: &[String], k: usize, ranker: &dyn CategoryRanker) -> Vec<String> {
    let known: BTreeSet<&String> = inventory.iter().collect();
    let mut seen = BTreeSet::new();
    ranker
        .rank(query, inventory)
        .into_iter()
        .filter(|c| known.contains(c) && seen.insert(c.clone()))
        .take(k)
        .collect()
}

pub fn apply_prefilter<'a>(
    snapshots: impl IntoIterator<Item = &'a MemorySnapshot>,
    kept: &[String],
    memory: &SceneMemory,
) -> Vec<MemorySnapshot> {
    let kept: BTreeSet<&str> = kept.iter().map(String::as_str).collect();
    snapshots
        .into_iter()
        .filter(|s| {
            s.cluster.iter().any(|id| memory.objects.get(id).is_some_and(|o| kept.contains(o.category.as_str())))
        })
        .cloned()
        .collect()
}

/// One JSONL record per prefilter query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefilterTrace {
    pub step: u32,
    pub query: String,
    pub inventory_size: usize,
    pub kept: Vec<String>,
    pub snapshots_before: usize,
    pub snapshots_after: usize,
}

impl PrefilterTrace {
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("trace serialization is infallible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::OccupancyGrid;
    use crate::model::{validate_memory, Pose};

    fn obj(id: u32, cat: &str, x: f64, y: f64, conf: f64) -> SceneObject {
        SceneObject { id: ObjectId(id), category: cat.into(), position: Position2::new(x, y), confidence: conf }
    }

    fn det(o: SceneObject, frame: u32) -> Detection {
        Detection { object: o, frame: FrameId(frame) }
    }

    fn frame(id: u32, seen: &[u32]) -> FrameCandidate {
        FrameCandidate {
            id: FrameId(id),
            pose: Pose::default(),
            view_index: 0,
            step: 0,
            visible_objects: seen.iter().map(|o| (ObjectId(*o), 0.5)).collect(),
        }
    }

    fn ids(v: &[u32]) -> BTreeSet<ObjectId> {
        v.iter().map(|i| ObjectId(*i)).collect()
    }

    fn snap(id: u32, cluster: &[u32], frame: u32) -> MemorySnapshot {
        MemorySnapshot { id: SnapshotId(id), frame: FrameId(frame), cluster: ids(cluster) }
    }

    fn memory() -> SceneMemory {
        SceneMemory::new(OccupancyGrid::covering(1.0, 1.0, 0.1).unwrap(), 20)
    }

    #[test]
    fn distance_gate_is_inclusive() {
        let d = vec![
            det(obj(1, "a", 3.4, 0.0, 0.5), 0),
            det(obj(2, "a", 3.6, 0.0, 0.5), 0),
            det(obj(3, "a", 3.5, 0.0, 0.5), 0),
        ];
        let kept: Vec<u32> = filter_by_distance(d, Position2::default(), 3.5).iter().map(|d| d.object.id.0).collect();
        assert_eq!(kept, vec![1, 3]);
    }

    #[test]
    fn exact_merge_keeps_max_confidence() {
        let mut objs = BTreeMap::from([(ObjectId(3), obj(3, "cup", 0.0, 0.0, 0.6))]);
        let out = match_and_merge_objects(&mut objs, &[det(obj(3, "cup", 0.0, 0.0, 0.9), 0)], MatchMode::ExactId);
        assert!(out.new_ids.is_empty());
        assert_eq!(objs[&ObjectId(3)].confidence, 0.9);
        match_and_merge_objects(&mut objs, &[det(obj(3, "cup", 0.0, 0.0, 0.2), 0)], MatchMode::ExactId);
        assert_eq!(objs[&ObjectId(3)].confidence, 0.9);
        let out = match_and_merge_objects(&mut objs, &[det(obj(7, "cup", 5.0, 0.0, 0.4), 0)], MatchMode::ExactId);
        assert_eq!(out.new_ids, vec![ObjectId(7)]);
    }

    #[test]
    fn noisy_merge_by_category_and_radius() {
        let mut objs = BTreeMap::from([(ObjectId(1), obj(1, "chair", 1.10, 0.0, 0.5))]);
        let out = match_and_merge_objects(&mut objs, &[det(obj(9, "chair", 1.00, 0.0, 0.5), 0)], MatchMode::Noisy);
        assert!(out.new_ids.is_empty());
        assert_eq!(out.remap[&ObjectId(9)], ObjectId(1));
        assert!((objs[&ObjectId(1)].position.x - 1.05).abs() < 1e-12);

        let out = match_and_merge_objects(&mut objs, &[det(obj(8, "table", 1.0, 0.0, 0.5), 0)], MatchMode::Noisy);
        assert_eq!(out.new_ids, vec![ObjectId(8)]);
        let out = match_and_merge_objects(&mut objs, &[det(obj(6, "chair", 1.35, 0.0, 0.5), 0)], MatchMode::Noisy);
        assert_eq!(out.new_ids, vec![ObjectId(6)]);
    }

    #[test]
    fn affected_examples() {
        let s = [snap(0, &[1, 2], 1), snap(1, &[3], 2)];
        let got = |d: &[u32]| affected_snapshots(&s, &ids(d)).iter().map(|s| s.id.0).collect::<Vec<_>>();
        assert_eq!(got(&[1]), vec![0]);
        assert_eq!(got(&[]), Vec::<u32>::new());
        assert_eq!(got(&[1, 3]), vec![0, 1]);
    }

    fn seed_memory(objs: &[SceneObject], frames: &[FrameCandidate], snaps: &[MemorySnapshot]) -> SceneMemory {
        let mut m = memory();
        for o in objs {
            m.objects.insert(o.id, o.clone());
        }
        for f in frames {
            m.frames.insert(f.id, f.clone());
        }
        for s in snaps {
            m.snapshots.insert(s.id, s.clone());
        }
        m.next_snapshot = snaps.len() as u32;
        m.next_frame = frames.iter().map(|f| f.id.0 + 1).max().unwrap_or(0);
        m
    }

    fn clusters(m: &SceneMemory) -> Vec<(BTreeSet<ObjectId>, FrameId)> {
        m.snapshots.values().map(|s| (s.cluster.clone(), s.frame)).collect()
    }

    #[test]
    fn update_without_overlap_is_disjoint_union() {
        let mut m = seed_memory(&[obj(1, "a", 0.0, 0.0, 0.5)], &[frame(1, &[1])], &[snap(0, &[1], 1)]);
        m.objects.insert(ObjectId(3), obj(3, "c", 1.0, 0.0, 0.5));
        m.frames.insert(FrameId(5), frame(5, &[3]));
        let up = update_snapshots(&mut m, &ids(&[3]), &[ObjectId(3)]).unwrap();
        assert_eq!(clusters(&m), vec![(ids(&[1]), FrameId(1)), (ids(&[3]), FrameId(5))]);
        assert_eq!(m.snapshots[&SnapshotId(0)].cluster, ids(&[1]));
        assert!(up.replaced.is_empty() && up.absorbed.is_empty());
        assert!(validate_memory(&m).is_valid());
    }

    #[test]
    fn update_consolidates_into_covering_frame() {
        let mut m = seed_memory(
            &[obj(1, "a", 0.0, 0.0, 0.5), obj(2, "b", 1.0, 0.0, 0.5)],
            &[frame(1, &[1]), frame(2, &[2])],
            &[snap(0, &[1], 1), snap(1, &[2], 2)],
        );
        m.frames.insert(FrameId(3), frame(3, &[1, 2]));
        update_snapshots(&mut m, &ids(&[1, 2]), &[]).unwrap();
        assert_eq!(clusters(&m), vec![(ids(&[1, 2]), FrameId(3))]);
        assert!(validate_memory(&m).is_valid());
    }

    #[test]
    fn update_repartitions_by_split() {
        // a=1 (0,0), b=2 (0,1), c=3 (0.5,0)
        let mut m = seed_memory(
            &[obj(1, "a", 0.0, 0.0, 0.5), obj(2, "b", 0.0, 1.0, 0.5)],
            &[frame(1, &[1, 2])],
            &[snap(0, &[1, 2], 1)],
        );
        m.objects.insert(ObjectId(3), obj(3, "c", 0.5, 0.0, 0.5));
        m.frames.insert(FrameId(5), frame(5, &[1, 3]));
        let up = update_snapshots(&mut m, &ids(&[1, 3]), &[ObjectId(3)]).unwrap();
        let mut got = clusters(&m);
        got.sort_by_key(|(c, _)| c.first().copied());
        assert_eq!(got, vec![(ids(&[1, 3]), FrameId(5)), (ids(&[2]), FrameId(1))]);
        assert_eq!(up.splits, 1);
        assert!(validate_memory(&m).is_valid());
    }

    #[test]
    fn global_merge_absorbs_new_group_into_untouched_snapshot() {
        // Untouched ⟨{1}, I1⟩; new object 2 is only visible in I1.
        let mut m = seed_memory(&[obj(1, "a", 0.0, 0.0, 0.5)], &[frame(1, &[1, 2])], &[snap(0, &[1], 1)]);
        m.objects.insert(ObjectId(2), obj(2, "b", 1.0, 0.0, 0.5));
        let up = update_snapshots(&mut m, &ids(&[2]), &[ObjectId(2)]).unwrap();
        assert_eq!(clusters(&m), vec![(ids(&[1, 2]), FrameId(1))]);
        assert_eq!(up.absorbed, vec![Absorption { absorbed: SnapshotId(1), into: SnapshotId(0) }]);
        assert!(up.created.is_empty());
        assert!(validate_memory(&m).is_valid());
    }

    #[test]
    fn ingest_restricts_frames_to_kept_detections() {
        let mut m = memory();
        let cfg = EpisodeConfig::default();
        let f = frame(0, &[]);
        let dets = vec![det(obj(1, "a", 1.0, 0.0, 0.8), 0), det(obj(2, "b", 4.0, 0.0, 0.2), 0)];
        m.next_frame = 1;
        let r = ingest_step(&mut m, vec![f], dets, Position2::default(), &cfg).unwrap();
        assert_eq!(r.detections_kept, 1);
        assert_eq!(r.detections_dropped, 1);
        assert_eq!(m.frames[&FrameId(0)].visible_objects.keys().copied().collect::<Vec<_>>(), vec![ObjectId(1)]);
        assert!(validate_memory(&m).is_valid());
    }

    #[test]
    fn inventory_dedups_case_sensitively() {
        let mut m = memory();
        for (i, c) in ["chair", "chair", "sink", "Bed", "bed"].iter().enumerate() {
            m.objects.insert(ObjectId(i as u32), obj(i as u32, c, 0.0, 0.0, 0.5));
        }
        assert_eq!(category_inventory(&m), vec!["Bed", "bed", "chair", "sink"]);
        assert!(category_inventory(&memory()).is_empty());
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn prefilter_examples() {
        let inv = strings(&["bed", "sink", "table"]);
        assert_eq!(prefilter("Is the sink clean?", &inv, 2, &LexicalRanker), strings(&["sink", "bed"]));
        assert_eq!(prefilter("Is the sink clean?", &inv, 10, &LexicalRanker), strings(&["sink", "bed", "table"]));
        assert_eq!(prefilter("what time is it", &inv, 2, &LexicalRanker), strings(&["bed", "sink"]));
        assert_eq!(LexicalRanker::score("Where is the coffee table?", "coffee table"), 2);
    }

    struct Sloppy;
    impl CategoryRanker for Sloppy {
        fn rank(&self, _: &str, _: &[String]) -> Vec<String> {
            strings(&["ghost", "sink", "sink", "bed"])
        }
    }

    #[test]
    fn prefilter_sanitizes_ranker_output() {
        let inv = strings(&["bed", "sink"]);
        assert_eq!(prefilter("q", &inv, 5, &Sloppy), strings(&["sink", "bed"]));
    }

    #[test]
    fn apply_prefilter_examples() {
        let mut m = memory();
        for (i, c) in ["sink", "towel", "bed"].iter().enumerate() {
            m.objects.insert(ObjectId(i as u32), obj(i as u32, c, 0.0, 0.0, 0.5));
        }
        let snaps = [snap(0, &[0, 1], 0), snap(1, &[2], 1)];
        let kept_ids = |k: &[&str]| apply_prefilter(&snaps, &strings(k), &m).iter().map(|s| s.id.0).collect::<Vec<_>>();
        assert_eq!(kept_ids(&["sink"]), vec![0]);
        assert_eq!(kept_ids(&["sink", "towel", "bed"]), vec![0, 1]);
        assert_eq!(kept_ids(&[]), Vec::<u32>::new());
    }
}
