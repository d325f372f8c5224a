use serde::{Deserialize, Serialize};

use crate::geom::{angle_diff, Point};
use crate::traj::{TrackPoint, Trajectory};

/// Slack for threshold comparisons on decimal timestamps and coordinates.
const TOL: f64 = 1e-9;

/// Thresholds for linking the end of one pedestrian track to the start of the
/// next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeCriteria {
    /// s
    pub max_time_gap: f64,
    /// m
    pub max_distance_gap: f64,
    /// degrees
    pub max_heading_diff: f64,
    /// degrees
    pub max_traj_angle_diff: f64,
}

impl Default for MergeCriteria {
    fn default() -> Self {
        MergeCriteria {
            max_time_gap: 0.2,
            max_distance_gap: 1.0,
            max_heading_diff: 90.0,
            max_traj_angle_diff: 120.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MergeOutcome {
    pub trajectories: Vec<Trajectory>,
    /// (predecessor id, successor id) for every link made.
    pub links: Vec<(String, String)>,
}

fn bearing(v: Point) -> Option<f64> {
    (v.norm() > 0.0).then(|| v.y.atan2(v.x))
}

/// Heading at one end of a track: the velocity direction, or the displacement
/// across the three outermost points when nearly stationary.
fn end_heading(valid: &[&TrackPoint], at_end: bool) -> Option<f64> {
    let p = if at_end { valid.last()? } else { valid.first()? };
    if p.speed() >= 0.1 {
        return bearing(p.vel());
    }
    let k = valid.len().min(3);
    if k < 2 {
        return None;
    }
    let d = if at_end {
        valid[valid.len() - 1].pos().sub(valid[valid.len() - k].pos())
    } else {
        valid[k - 1].pos().sub(valid[0].pos())
    };
    bearing(d)
}

/// First-to-last chord bearing.
fn chord_bearing(valid: &[&TrackPoint]) -> Option<f64> {
    bearing(valid.last()?.pos().sub(valid.first()?.pos()))
}

/// (time gap, distance, heading difference) if `next` qualifies as the
/// immediate successor of `prev`.
fn link_score(prev: &Trajectory, next: &Trajectory, c: &MergeCriteria) -> Option<(f64, f64, f64)> {
    let a: Vec<&TrackPoint> = prev.valid_points().collect();
    let b: Vec<&TrackPoint> = next.valid_points().collect();
    let (end, start) = (a.last()?, b.first()?);
    let dt = next.start_time() - prev.end_time();
    if dt <= 0.0 || dt > c.max_time_gap + TOL {
        return None;
    }
    let dist = end.pos().dist(start.pos());
    if dist > c.max_distance_gap + TOL {
        return None;
    }
    let dh = angle_diff(end_heading(&a, true)?, end_heading(&b, false)?).to_degrees();
    if dh > c.max_heading_diff + TOL {
        return None;
    }
    let da = angle_diff(chord_bearing(&a)?, chord_bearing(&b)?).to_degrees();
    if da > c.max_traj_angle_diff + TOL {
        return None;
    }
    Some((dt, dist, dh))
}

/// Greedily chains pedestrian tracks that look like one person.
///
/// Heads are processed in start-time order. Each chain keeps taking the
/// qualifying unused successor with the smallest (time gap, distance, heading
/// difference) until none remains. A merged track keeps its head's id.
pub fn merge_pedestrian_trajectories(trajs: &[Trajectory], criteria: &MergeCriteria) -> MergeOutcome {
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    order.sort_by(|&i, &j| trajs[i].start_time().total_cmp(&trajs[j].start_time()).then(i.cmp(&j)));
    let mut used = vec![false; trajs.len()];
    let mut out = Vec::new();
    let mut links = Vec::new();

    for (pos, &head) in order.iter().enumerate() {
        if used[head] {
            continue;
        }
        used[head] = true;
        let mut chain = trajs[head].clone();
        loop {
            let mut best: Option<((f64, f64, f64), usize)> = None;
            for &j in &order[pos + 1..] {
                if used[j] {
                    continue;
                }
                if let Some(score) = link_score(&chain, &trajs[j], criteria) {
                    let better = best.is_none_or(|(b, _)| {
                        score.0.total_cmp(&b.0).then(score.1.total_cmp(&b.1)).then(score.2.total_cmp(&b.2)).is_lt()
                    });
                    if better {
                        best = Some((score, j));
                    }
                }
            }
            let Some((_, j)) = best else { break };
            used[j] = true;
            links.push((chain.id.clone(), trajs[j].id.clone()));
            chain.points.extend_from_slice(&trajs[j].points);
            chain.frame_classes.extend_from_slice(&trajs[j].frame_classes);
        }
        out.push(chain);
    }
    MergeOutcome {
        trajectories: out,
        links,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::ObjectClass;

    /// Straight walk at `speed` along `heading_deg` starting at `start`.
    fn walk(id: &str, t0: f64, start: Point, heading_deg: f64, speed: f64, n: usize) -> Trajectory {
        let h = heading_deg.to_radians();
        let v = Point::new(h.cos(), h.sin()).scale(speed);
        let pts = (0..n)
            .map(|i| {
                let dt = i as f64 * 0.1;
                let p = start.add(v.scale(dt));
                TrackPoint::new(t0 + dt, p.x, p.y, v.x, v.y, 0.0)
            })
            .collect();
        Trajectory::with_class(id, ObjectClass::Pedestrian, pts).unwrap()
    }

    /// Track ending at `end` at time `t_end`.
    fn walk_to(id: &str, t_end: f64, end: Point, heading_deg: f64, speed: f64, n: usize) -> Trajectory {
        let h = heading_deg.to_radians();
        let v = Point::new(h.cos(), h.sin()).scale(speed);
        let dur = (n - 1) as f64 * 0.1;
        walk(id, t_end - dur, end.sub(v.scale(dur)), heading_deg, speed, n)
    }

    #[test]
    fn aligned_pair_merges() {
        let a = walk_to("a", 10.0, Point::new(0.0, 0.0), 0.0, 1.4, 30);
        let b = walk("b", 10.1, Point::new(0.5, 0.0), 0.0, 1.4, 30);
        let out = merge_pedestrian_trajectories(&[a, b], &MergeCriteria::default());
        assert_eq!(out.trajectories.len(), 1);
        assert_eq!(out.trajectories[0].points.len(), 60);
        assert_eq!(out.links, vec![("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn distance_gap_too_large() {
        let a = walk_to("a", 10.0, Point::new(0.0, 0.0), 0.0, 1.4, 30);
        let b = walk("b", 10.1, Point::new(1.5, 0.0), 0.0, 1.4, 30);
        let out = merge_pedestrian_trajectories(&[a, b], &MergeCriteria::default());
        assert_eq!(out.trajectories.len(), 2);
    }

    #[test]
    fn smaller_time_gap_wins() {
        let a = walk_to("a", 10.0, Point::new(0.0, 0.0), 0.0, 1.4, 30);
        let far = walk("late", 10.2, Point::new(0.2, 0.0), 0.0, 1.4, 30);
        let near = walk("early", 10.1, Point::new(0.8, 0.0), 0.0, 1.4, 30);
        let out = merge_pedestrian_trajectories(&[a, far, near], &MergeCriteria::default());
        assert_eq!(out.links[0], ("a".to_string(), "early".to_string()));
    }

    #[test]
    fn boundaries_are_inclusive() {
        let c = MergeCriteria::default();
        let a = walk_to("a", 10.0, Point::new(0.0, 0.0), 0.0, 1.4, 30);
        // time gap exactly 0.2 s
        let b = walk("b", 10.2, Point::new(0.3, 0.0), 0.0, 1.4, 30);
        assert!(link_score(&a, &b, &c).is_some());
        let b = walk("b", 10.3, Point::new(0.3, 0.0), 0.0, 1.4, 30);
        assert!(link_score(&a, &b, &c).is_none());
        // distance exactly 1 m
        let b = walk("b", 10.1, Point::new(0.6, 0.8), 0.0, 1.4, 30);
        assert!(link_score(&a, &b, &c).is_some());
        let b = walk("b", 10.1, Point::new(0.6, 0.81), 0.0, 1.4, 30);
        assert!(link_score(&a, &b, &c).is_none());
        // heading exactly 90°
        let b = walk("b", 10.1, Point::new(0.1, 0.0), 90.0, 1.4, 30);
        assert!(link_score(&a, &b, &c).is_some());
        let b = walk("b", 10.1, Point::new(0.1, 0.0), 91.0, 1.4, 30);
        assert!(link_score(&a, &b, &c).is_none());
    }

    #[test]
    fn chord_angle_boundary() {
        // Heading check relaxed so only the chord angle decides.
        let c = MergeCriteria {
            max_heading_diff: 180.0,
            ..MergeCriteria::default()
        };
        let a = walk_to("a", 10.0, Point::new(0.0, 0.0), 0.0, 1.4, 30);
        for (deg, ok) in [(120.0, true), (121.0, false), (-120.0, true)] {
            let b = walk("b", 10.1, Point::new(0.0, 0.0), deg, 1.4, 30);
            assert_eq!(link_score(&a, &b, &c).is_some(), ok, "{deg}");
        }
    }

    #[test]
    fn chain_of_three_and_idempotence() {
        let a = walk_to("a", 5.0, Point::new(0.0, 0.0), 0.0, 1.4, 20);
        let b = walk("b", 5.1, Point::new(0.2, 0.0), 0.0, 1.4, 20);
        let b_end = b.points.last().unwrap().pos();
        let c = walk("c", b.end_time() + 0.1, b_end.add(Point::new(0.1, 0.0)), 0.0, 1.4, 20);
        let other = walk("x", 0.0, Point::new(50.0, 50.0), 90.0, 1.4, 20);
        let total = a.points.len() + b.points.len() + c.points.len() + other.points.len();
        let crit = MergeCriteria::default();
        let out = merge_pedestrian_trajectories(&[c, other, b, a], &crit);
        assert_eq!(out.trajectories.len(), 2);
        assert_eq!(out.trajectories.iter().map(|t| t.points.len()).sum::<usize>(), total);
        for t in &out.trajectories {
            assert!(t.points.windows(2).all(|w| w[1].t > w[0].t));
        }
        let again = merge_pedestrian_trajectories(&out.trajectories, &crit);
        assert!(again.links.is_empty());
        assert_eq!(again.trajectories, out.trajectories);
    }

    #[test]
    fn stationary_end_uses_displacement() {
        let mut a = walk_to("a", 10.0, Point::new(0.0, 0.0), 0.0, 1.4, 30);
        for p in a.points.iter_mut().rev().take(3) {
            p.vx = 0.0;
            p.vy = 0.0;
        }
        let valid: Vec<&TrackPoint> = a.valid_points().collect();
        let h = end_heading(&valid, true).unwrap();
        assert!(h.abs() < 1e-9);
    }
}
