//! Deterministic 2-way K-Means over keyed planar points.
//!
//! Centers start at the farthest pair of points (lowest key pair on ties),
//! Lloyd iterations run until assignments settle or `MAX_ROUNDS` is hit, and a
//! point equidistant to both centers goes to the center seeded by the lower key.
//! If every point coincides, or Lloyd empties a side, the keys are split into
//! ordered halves instead.

use crate::model::Position2;

pub const MAX_ROUNDS: usize = 50;

/// Splits `points` (at least two, any order) into two non-empty key sets.
/// Both returned vectors are sorted by key.
pub fn split2<K: Ord + Copy>(points: &[(K, Position2)]) -> (Vec<K>, Vec<K>) {
    assert!(points.len() >= 2, "split2 needs at least two points");
    let mut pts: Vec<(K, Position2)> = points.to_vec();
    pts.sort_by(|a, b| a.0.cmp(&b.0));

    let mut best = (0usize, 1usize, -1.0f64);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d = pts[i].1.distance_sq(pts[j].1);
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    if best.2 <= 0.0 {
        return halves(&pts);
    }

    let mut centers = [pts[best.0].1, pts[best.1].1];
    let mut assign: Vec<u8> = pts.iter().map(|(_, p)| nearest(&centers, *p)).collect();
    for _ in 0..MAX_ROUNDS {
        let mut sum = [Position2::default(); 2];
        let mut n = [0usize; 2];
        for ((_, p), &a) in pts.iter().zip(&assign) {
            sum[a as usize] = sum[a as usize].add(*p);
            n[a as usize] += 1;
        }
        if n[0] == 0 || n[1] == 0 {
            break;
        }
        centers = [sum[0].scale(1.0 / n[0] as f64), sum[1].scale(1.0 / n[1] as f64)];
        let next: Vec<u8> = pts.iter().map(|(_, p)| nearest(&centers, *p)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }

    let a: Vec<K> = pts.iter().zip(&assign).filter(|(_, &s)| s == 0).map(|((k, _), _)| *k).collect();
    let b: Vec<K> = pts.iter().zip(&assign).filter(|(_, &s)| s == 1).map(|((k, _), _)| *k).collect();
    if a.is_empty() || b.is_empty() {
        return halves(&pts);
    }
    (a, b)
}

fn nearest(centers: &[Position2; 2], p: Position2) -> u8 {
    if p.distance_sq(centers[0]) <= p.distance_sq(centers[1]) {
        0
    } else {
        1
    }
}

fn halves<K: Copy>(sorted: &[(K, Position2)]) -> (Vec<K>, Vec<K>) {
    let mid = sorted.len() / 2;
    (
        sorted[..mid].iter().map(|(k, _)| *k).collect(),
        sorted[mid..].iter().map(|(k, _)| *k).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Position2 {
        Position2::new(x, y)
    }

    #[test]
    fn separates_two_pairs() {
        let (a, b) = split2(&[(1, p(0.0, 0.0)), (2, p(0.1, 0.0)), (3, p(10.0, 0.0)), (4, p(10.1, 0.0))]);
        assert_eq!((a, b), (vec![1, 2], vec![3, 4]));
    }

    #[test]
    fn midpoint_tie_goes_to_lower_seed() {
        // Farthest pair is (1, 3); key 2 sits exactly between the seeds.
        let (a, b) = split2(&[(1, p(0.0, 0.0)), (2, p(5.0, 0.0)), (3, p(10.0, 0.0))]);
        assert_eq!((a, b), (vec![1, 2], vec![3]));
    }

    #[test]
    fn coincident_points_split_in_key_order() {
        let (a, b) = split2(&[(7, p(1.0, 1.0)), (3, p(1.0, 1.0)), (5, p(1.0, 1.0))]);
        assert_eq!((a, b), (vec![3], vec![5, 7]));
    }
}
