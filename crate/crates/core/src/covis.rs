//! Co-visibility clustering: partitions an object set into memory snapshots,
//! each owning a cluster of objects that one frame candidate sees together.
//!
//! The largest unsettled cluster is matched to the best frame that sees all of
//! it; when no frame does, the cluster is bisected by 2-way K-Means on object
//! positions. Finally, snapshots that landed on the same frame are merged.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::kmeans;
use crate::model::{FrameCandidate, FrameId, MemorySnapshot, ObjectId, SceneObject, SnapshotId};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k-means split needs at least two objects, got {0}")]
    InvalidSplit(usize),
    #[error("object {0} is not visible in any frame candidate")]
    UncoverableObject(ObjectId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub count: usize,
    pub confidence_sum: f64,
}

impl FrameScore {
    fn cmp_rank(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then(self.confidence_sum.partial_cmp(&other.confidence_sum).unwrap_or(Ordering::Equal))
    }
}

/// Counts only the objects of `eligible` the frame sees.
pub fn frame_score(frame: &FrameCandidate, eligible: &BTreeSet<ObjectId>) -> FrameScore {
    let mut count = 0;
    let mut confidence_sum = 0.0;
    for (id, conf) in &frame.visible_objects {
        if eligible.contains(id) {
            count += 1;
            confidence_sum += conf;
        }
    }
    FrameScore { count, confidence_sum }
}

/// Frames whose visibility set is a superset of `cluster`, ascending by id.
pub fn find_covering_frames<'a>(
    cluster: &BTreeSet<ObjectId>,
    frames: impl IntoIterator<Item = &'a FrameCandidate>,
) -> Vec<FrameId> {
    let mut ids: Vec<FrameId> = frames.into_iter().filter(|f| f.covers(cluster)).map(|f| f.id).collect();
    ids.sort();
    ids
}

/// Highest `(count, confidence_sum)` wins; exact ties go to the lowest frame id.
/// Returns `None` when no candidate is known.
pub fn select_best_frame<'a>(
    candidates: &[FrameId],
    frames: impl IntoIterator<Item = &'a FrameCandidate>,
    eligible: &BTreeSet<ObjectId>,
) -> Option<FrameId> {
    let lookup: BTreeMap<FrameId, &FrameCandidate> = frames.into_iter().map(|f| (f.id, f)).collect();
    let mut ids: Vec<FrameId> = candidates.iter().copied().filter(|id| lookup.contains_key(id)).collect();
    ids.sort();
    best_of(ids.into_iter().map(|id| lookup[&id]), eligible)
}

fn best_of<'a>(
    sorted_frames: impl Iterator<Item = &'a FrameCandidate>,
    eligible: &BTreeSet<ObjectId>,
) -> Option<FrameId> {
    let mut best: Option<(FrameId, FrameScore)> = None;
    for f in sorted_frames {
        let score = frame_score(f, eligible);
        match &best {
            Some((_, b)) if score.cmp_rank(b) != Ordering::Greater => {}
            _ => best = Some((f.id, score)),
        }
    }
    best.map(|(id, _)| id)
}

/// Splits at least two objects in two by their planar positions.
pub fn kmeans_split2(objects: &[SceneObject]) -> Result<(BTreeSet<ObjectId>, BTreeSet<ObjectId>), ClusterError> {
    if objects.len() < 2 {
        return Err(ClusterError::InvalidSplit(objects.len()));
    }
    let pts: Vec<(ObjectId, _)> = objects.iter().map(|o| (o.id, o.position)).collect();
    let (a, b) = kmeans::split2(&pts);
    Ok((a.into_iter().collect(), b.into_iter().collect()))
}

/// A cluster assigned to a frame, before snapshot ids are attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterGroup {
    pub frame: FrameId,
    pub cluster: BTreeSet<ObjectId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    /// Merged groups, ordered by their lowest object id.
    pub groups: Vec<ClusterGroup>,
    /// Work items ever queued (the initial set plus two per split).
    pub work_items: usize,
    pub splits: usize,
}

#[derive(PartialEq, Eq)]
struct WorkItem(BTreeSet<ObjectId>);

impl Ord for WorkItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Largest first; among equals the one holding the lowest object id.
        (self.0.len(), Reverse(self.0.first())).cmp(&(other.0.len(), Reverse(other.0.first())))
    }
}

impl PartialOrd for WorkItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs the clustering and reports the work statistics alongside the groups.
pub fn cluster_groups<'a, 'b>(
    objects: impl IntoIterator<Item = &'a SceneObject>,
    frames: impl IntoIterator<Item = &'b FrameCandidate>,
) -> Result<ClusterOutcome, ClusterError> {
    let objects: BTreeMap<ObjectId, &SceneObject> = objects.into_iter().map(|o| (o.id, o)).collect();
    let mut frames: Vec<&FrameCandidate> = frames.into_iter().collect();
    frames.sort_by_key(|f| f.id);
    frames.dedup_by_key(|f| f.id);

    for id in objects.keys() {
        if !frames.iter().any(|f| f.sees(*id)) {
            return Err(ClusterError::UncoverableObject(*id));
        }
    }
    if objects.is_empty() {
        return Ok(ClusterOutcome { groups: Vec::new(), work_items: 0, splits: 0 });
    }

    let eligible: BTreeSet<ObjectId> = objects.keys().copied().collect();
    let mut queue = BinaryHeap::new();
    queue.push(WorkItem(eligible.clone()));
    let mut work_items = 1;
    let mut splits = 0;
    let mut assigned: Vec<ClusterGroup> = Vec::new();

    while let Some(WorkItem(cluster)) = queue.pop() {
        let covering = frames.iter().copied().filter(|f| f.covers(&cluster));
        if let Some(frame) = best_of(covering, &eligible) {
            assigned.push(ClusterGroup { frame, cluster });
            continue;
        }
        let members: Vec<SceneObject> = cluster.iter().map(|id| objects[id].clone()).collect();
        // A singleton is always covered because every object is visible somewhere.
        let (a, b) = kmeans_split2(&members)?;
        queue.push(WorkItem(a));
        queue.push(WorkItem(b));
        work_items += 2;
        splits += 1;
    }

    Ok(ClusterOutcome { groups: merge_groups(assigned), work_items, splits })
}

fn merge_groups(groups: Vec<ClusterGroup>) -> Vec<ClusterGroup> {
    let mut by_frame: BTreeMap<FrameId, BTreeSet<ObjectId>> = BTreeMap::new();
    for g in groups {
        by_frame.entry(g.frame).or_default().extend(g.cluster);
    }
    let mut out: Vec<ClusterGroup> =
        by_frame.into_iter().map(|(frame, cluster)| ClusterGroup { frame, cluster }).collect();
    out.sort_by_key(|g| g.cluster.first().copied());
    out
}

/// Partitions `objects` into memory snapshots. Snapshot ids are dense from
/// zero in order of each cluster's lowest object id.
pub fn cluster_covisibility<'a, 'b>(
    objects: impl IntoIterator<Item = &'a SceneObject>,
    frames: impl IntoIterator<Item = &'b FrameCandidate>,
) -> Result<Vec<MemorySnapshot>, ClusterError> {
    let outcome = cluster_groups(objects, frames)?;
    Ok(outcome
        .groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| MemorySnapshot { id: SnapshotId(i as u32), frame: g.frame, cluster: g.cluster })
        .collect())
}

/// Collapses snapshots that share a frame into one whose cluster is the union.
/// The merged snapshot keeps the lowest id; output is ordered by id.
pub fn merge_same_frame(snapshots: Vec<MemorySnapshot>) -> Vec<MemorySnapshot> {
    let mut by_frame: BTreeMap<FrameId, MemorySnapshot> = BTreeMap::new();
    for s in snapshots {
        match by_frame.get_mut(&s.frame) {
            Some(existing) => {
                existing.id = existing.id.min(s.id);
                existing.cluster.extend(s.cluster);
            }
            None => {
                by_frame.insert(s.frame, s);
            }
        }
    }
    let mut out: Vec<MemorySnapshot> = by_frame.into_values().collect();
    out.sort_by_key(|s| s.id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Pose, Position2};

    fn obj(id: u32, x: f64, y: f64) -> SceneObject {
        SceneObject { id: ObjectId(id), category: "thing".into(), position: Position2::new(x, y), confidence: 0.5 }
    }

    fn frame(id: u32, seen: &[(u32, f64)]) -> FrameCandidate {
        FrameCandidate {
            id: FrameId(id),
            pose: Pose::default(),
            view_index: 0,
            step: 0,
            visible_objects: seen.iter().map(|(o, c)| (ObjectId(*o), *c)).collect(),
        }
    }

    fn ids(v: &[u32]) -> BTreeSet<ObjectId> {
        v.iter().map(|i| ObjectId(*i)).collect()
    }

    // a = 1, b = 2, c = 3, d = 4
    fn abc_frames() -> Vec<FrameCandidate> {
        vec![
            frame(1, &[(1, 0.5), (2, 0.5)]),
            frame(2, &[(1, 0.5), (2, 0.5), (3, 0.5)]),
            frame(3, &[(2, 0.5), (3, 0.5)]),
        ]
    }

    #[test]
    fn frame_score_counts_eligible_only() {
        let f = frame(0, &[(1, 0.9), (2, 0.8)]);
        let s = frame_score(&f, &ids(&[1, 2, 3]));
        assert_eq!(s.count, 2);
        assert!((s.confidence_sum - 1.7).abs() < 1e-12);
        let s = frame_score(&frame(0, &[(1, 0.9)]), &ids(&[]));
        assert_eq!((s.count, s.confidence_sum), (0, 0.0));
        let s = frame_score(&frame(0, &[(1, 0.5), (2, 0.5), (3, 0.5)]), &ids(&[2]));
        assert_eq!((s.count, s.confidence_sum), (1, 0.5));
    }

    #[test]
    fn covering_frames_are_supersets() {
        let frames = abc_frames();
        assert_eq!(find_covering_frames(&ids(&[1, 2]), &frames), vec![FrameId(1), FrameId(2)]);
        assert_eq!(find_covering_frames(&ids(&[1, 2, 3]), &frames), vec![FrameId(2)]);
        assert!(find_covering_frames(&ids(&[1, 4]), &frames).is_empty());
    }

    #[test]
    fn best_frame_by_count_then_confidence_then_id() {
        let eligible = ids(&[1, 2, 3]);
        let frames = vec![frame(1, &[(1, 0.9), (2, 0.9)]), frame(2, &[(1, 0.1), (2, 0.1), (3, 0.1)])];
        assert_eq!(select_best_frame(&[FrameId(1), FrameId(2)], &frames, &eligible), Some(FrameId(2)));

        let frames = vec![frame(1, &[(1, 0.75), (2, 0.75)]), frame(2, &[(1, 1.0), (2, 1.0)])];
        assert_eq!(select_best_frame(&[FrameId(1), FrameId(2)], &frames, &eligible), Some(FrameId(2)));

        let frames = vec![frame(4, &[(1, 0.5)]), frame(3, &[(1, 0.5)])];
        assert_eq!(select_best_frame(&[FrameId(4), FrameId(3)], &frames, &eligible), Some(FrameId(3)));
        assert_eq!(select_best_frame(&[], &frames, &eligible), None);
    }

    #[test]
    fn kmeans_split_examples() {
        let (a, b) = kmeans_split2(&[obj(1, 0.0, 0.0), obj(2, 0.1, 0.0), obj(3, 10.0, 0.0), obj(4, 10.1, 0.0)]).unwrap();
        assert_eq!((a, b), (ids(&[1, 2]), ids(&[3, 4])));
        let (a, b) = kmeans_split2(&[obj(1, 0.0, 0.0), obj(2, 5.0, 0.0), obj(3, 10.0, 0.0)]).unwrap();
        assert_eq!((a, b), (ids(&[1, 2]), ids(&[3])));
        let (a, b) = kmeans_split2(&[obj(1, 2.0, 2.0), obj(2, 2.0, 2.0)]).unwrap();
        assert_eq!((a, b), (ids(&[1]), ids(&[2])));
        assert_eq!(kmeans_split2(&[obj(1, 0.0, 0.0)]), Err(ClusterError::InvalidSplit(1)));
    }

    #[test]
    fn single_object_single_frame() {
        let out = cluster_covisibility(&[obj(1, 0.0, 0.0)], &[frame(1, &[(1, 0.7)])]).unwrap();
        assert_eq!(out, vec![MemorySnapshot { id: SnapshotId(0), frame: FrameId(1), cluster: ids(&[1]) }]);
    }

    #[test]
    fn full_cover_frame_wins() {
        let objects = [obj(1, 0.0, 0.0), obj(2, 1.0, 0.0), obj(3, 2.0, 0.0)];
        let frames = abc_frames();
        // Exhaustive check that only I2 covers everything.
        let full: Vec<_> = frames.iter().filter(|f| f.covers(&ids(&[1, 2, 3]))).map(|f| f.id).collect();
        assert_eq!(full, vec![FrameId(2)]);
        let out = cluster_covisibility(&objects, &frames).unwrap();
        assert_eq!(out, vec![MemorySnapshot { id: SnapshotId(0), frame: FrameId(2), cluster: ids(&[1, 2, 3]) }]);
    }

    #[test]
    fn split_then_merge_same_frame() {
        let objects = [obj(1, 0.0, 0.0), obj(2, 5.0, 0.0), obj(3, 10.0, 0.0)];
        let frames = [frame(1, &[(1, 0.5), (3, 0.5)]), frame(2, &[(2, 0.5)])];
        let outcome = cluster_groups(&objects, &frames).unwrap();
        assert_eq!(outcome.splits, 2);
        assert_eq!(outcome.work_items, 5);
        assert_eq!(
            outcome.groups,
            vec![
                ClusterGroup { frame: FrameId(1), cluster: ids(&[1, 3]) },
                ClusterGroup { frame: FrameId(2), cluster: ids(&[2]) },
            ]
        );
    }

    #[test]
    fn uncoverable_object_is_rejected() {
        let err = cluster_covisibility(&[obj(1, 0.0, 0.0), obj(2, 1.0, 0.0)], &[frame(1, &[(1, 0.5)])]);
        assert_eq!(err, Err(ClusterError::UncoverableObject(ObjectId(2))));
    }

    #[test]
    fn merge_same_frame_examples() {
        let s = |id: u32, f: u32, c: &[u32]| MemorySnapshot { id: SnapshotId(id), frame: FrameId(f), cluster: ids(c) };
        assert_eq!(merge_same_frame(vec![s(0, 1, &[1]), s(1, 1, &[3])]), vec![s(0, 1, &[1, 3])]);
        assert_eq!(merge_same_frame(vec![s(0, 1, &[1]), s(1, 2, &[2])]), vec![s(0, 1, &[1]), s(1, 2, &[2])]);
        assert_eq!(merge_same_frame(vec![s(2, 1, &[1]), s(0, 1, &[2]), s(1, 1, &[3])]), vec![s(0, 1, &[1, 2, 3])]);
    }
}
