//! Surrogate safety measures (TTC, PET), PET ground truth and detection scoring.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{segment_closest, segment_disc_interval, Point};
use crate::risk::KinematicState;
use crate::traj::{Dataset, ObjectClass, Trajectory};

/// Time until the constant-velocity extrapolations of two agents come within
/// `radius` of each other; 0 if they already are.
pub fn compute_ttc(a: &KinematicState, b: &KinematicState, radius: f64) -> Option<f64> {
    let r = Point::new(b.x - a.x, b.y - a.y);
    let v = Point::new(b.vx - a.vx, b.vy - a.vy);
    let c = r.dot(r) - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let qa = v.dot(v);
    let qb = 2.0 * r.dot(v);
    if qa == 0.0 || qb >= 0.0 {
        return None;
    }
    let disc = qb * qb - 4.0 * qa * c;
    if disc < 0.0 {
        return None;
    }
    // Smaller root in the cancellation-free form; qb < 0 here.
    let q = -0.5 * (qb - disc.sqrt());
    Some(c / q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstAgent {
    Vehicle,
    Pedestrian,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictEvent {
    pub vehicle_id: String,
    pub pedestrian_id: String,
    /// From the first entry into the zone to the last exit, s.
    pub window: (f64, f64),
    pub pet: f64,
    pub zone_center: Point,
    /// Who left the zone first; `Both` when the occupancies overlap.
    pub first: FirstAgent,
}

fn polyline(t: &Trajectory) -> Vec<(f64, Point)> {
    t.valid_points().map(|p| (p.t, p.pos())).collect()
}

/// Segments of a polyline; a single point becomes one degenerate segment.
fn segments(line: &[(f64, Point)]) -> impl Iterator<Item = ((f64, Point), (f64, Point))> + '_ {
    let single = (line.len() == 1).then(|| (line[0], line[0]));
    single.into_iter().chain(line.windows(2).map(|w| (w[0], w[1])))
}

/// First entry and last exit time of a polyline in a disc.
fn occupancy(line: &[(f64, Point)], center: Point, radius: f64) -> Option<(f64, f64)> {
    let mut span: Option<(f64, f64)> = None;
    for ((ta, a), (tb, b)) in segments(line) {
        if let Some((s0, s1)) = segment_disc_interval(a, b, center, radius) {
            let t0 = ta + s0 * (tb - ta);
            let t1 = ta + s1 * (tb - ta);
            span = Some(match span {
                None => (t0, t1),
                Some((lo, hi)) => (lo.min(t0), hi.max(t1)),
            });
        }
    }
    span
}

/// Post-encroachment time around the closest approach of the two observed
/// paths. The zone is a disc of `zone_radius` centred between the closest
/// points; absent if the paths never come that close.
pub fn compute_pet(veh: &Trajectory, ped: &Trajectory, zone_radius: f64) -> Option<ConflictEvent> {
    let lv = polyline(veh);
    let lp = polyline(ped);
    if lv.is_empty() || lp.is_empty() {
        return None;
    }
    let mut best: Option<(f64, Point)> = None;
    for ((_, a0), (_, a1)) in segments(&lv) {
        for ((_, b0), (_, b1)) in segments(&lp) {
            let (s, t, d) = segment_closest(a0, a1, b0, b1);
            if best.is_none_or(|(bd, _)| d < bd) {
                let pa = a0.add(a1.sub(a0).scale(s));
                let pb = b0.add(b1.sub(b0).scale(t));
                best = Some((d, pa.midpoint(pb)));
            }
        }
    }
    let (dist, center) = best?;
    if dist > zone_radius {
        return None;
    }
    let (v_in, v_out) = occupancy(&lv, center, zone_radius)?;
    let (p_in, p_out) = occupancy(&lp, center, zone_radius)?;
    let (pet, first) = if v_out < p_in {
        (p_in - v_out, FirstAgent::Vehicle)
    } else if p_out < v_in {
        (v_in - p_out, FirstAgent::Pedestrian)
    } else {
        (0.0, FirstAgent::Both)
    };
    Some(ConflictEvent {
        vehicle_id: veh.id.clone(),
        pedestrian_id: ped.id.clone(),
        window: (v_in.min(p_in), v_out.max(p_out)),
        pet,
        zone_center: center,
        first,
    })
}

/// Vehicle-pedestrian index pairs whose observation windows overlap, in
/// dataset order.
pub fn co_present_pairs(ds: &Dataset) -> Vec<(usize, usize)> {
    let class_idx = |c| -> Vec<usize> {
        (0..ds.trajectories.len())
            .filter(|&i| ds.trajectories[i].class == c)
            .collect()
    };
    let vehicles = class_idx(ObjectClass::Vehicle);
    let peds = class_idx(ObjectClass::Pedestrian);
    let mut out = Vec::new();
    for &v in &vehicles {
        for &p in &peds {
            if ds.trajectories[v].overlaps_in_time(&ds.trajectories[p]) {
                out.push((v, p));
            }
        }
    }
    out
}

/// Ground-truth conflicts: co-present pairs with PET at or below `threshold`,
/// sorted by (vehicle id, pedestrian id).
pub fn identify_conflicts_pet(ds: &Dataset, threshold: f64, zone_radius: f64) -> Vec<ConflictEvent> {
    let mut events: Vec<ConflictEvent> = co_present_pairs(ds)
        .into_iter()
        .filter_map(|(v, p)| compute_pet(&ds.trajectories[v], &ds.trajectories[p], zone_radius))
        .filter(|e| e.pet <= threshold)
        .collect();
    events.sort_by(|a, b| (&a.vehicle_id, &a.pedestrian_id).cmp(&(&b.vehicle_id, &b.pedestrian_id)));
    events
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub positives: usize,
    pub negatives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// TP/(TP+FN) at score > 0; absent without positives.
    pub sensitivity: Option<f64>,
    /// FP/(FP+TN) at score > 0; absent without negatives.
    pub false_alarm_rate: Option<f64>,
    /// Absent unless both classes occur.
    pub auc: Option<f64>,
    /// Starts at (0, 0) with an infinite threshold, then one point per distinct score.
    pub roc: Vec<RocPoint>,
}

/// Event-level scoring: one sample per pair, scored by its maximum risk.
/// Pairs listed in `truth` are positives, every other scored pair a negative.
pub fn evaluate_detection(
    scores: &BTreeMap<(String, String), f64>,
    truth: &[ConflictEvent],
) -> Result<DetectionReport> {
    let positive: BTreeSet<(String, String)> = truth
        .iter()
        .map(|e| (e.vehicle_id.clone(), e.pedestrian_id.clone()))
        .collect();
    for key in &positive {
        if !scores.contains_key(key) {
            return Err(Error::InvalidInput(format!(
                "conflict {} / {} has no risk stream",
                key.0, key.1
            )));
        }
    }
    let mut samples: Vec<(f64, bool)> = scores.iter().map(|(k, &s)| (s, positive.contains(k))).collect();
    let p = samples.iter().filter(|s| s.1).count();
    let n = samples.len() - p;
    let tp = samples.iter().filter(|s| s.1 && s.0 > 0.0).count();
    let fp = samples.iter().filter(|s| !s.1 && s.0 > 0.0).count();
    let rate = |k: usize, total: usize| (total > 0).then(|| k as f64 / total as f64);

    samples.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut roc = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut ctp, mut cfp) = (0usize, 0usize);
    let mut i = 0;
    while i < samples.len() {
        let thr = samples[i].0;
        while i < samples.len() && samples[i].0 == thr {
            if samples[i].1 {
                ctp += 1;
            } else {
                cfp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint {
            threshold: thr,
            tpr: if p > 0 { ctp as f64 / p as f64 } else { 0.0 },
            fpr: if n > 0 { cfp as f64 / n as f64 } else { 0.0 },
        });
    }
    let auc = (p > 0 && n > 0).then(|| {
        roc.windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[1].tpr + w[0].tpr))
            .sum::<f64>()
    });
    Ok(DetectionReport {
        positives: p,
        negatives: n,
        true_positives: tp,
        false_positives: fp,
        sensitivity: rate(tp, p),
        false_alarm_rate: rate(fp, n),
        auc,
        roc,
    })
}

impl DetectionReport {
    pub fn roc_csv(&self) -> String {
        let mut s = String::from("threshold,tpr,fpr\n");
        for r in &self.roc {
            s.push_str(&format!("{},{},{}\n", r.threshold, r.tpr, r.fpr));
        }
        s
    }
}
