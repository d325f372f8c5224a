use serde::{Deserialize, Serialize};

use crate::geom::Polygon;
use crate::traj::Trajectory;

/// Reasons a pedestrian track is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    /// Duration or first-to-last displacement at or below the minimum.
    TooShort,
    /// Share of invalid points at or above the maximum.
    MostlyInvalid,
    /// A run of consecutive valid points at or above pedestrian top speed.
    TooFast,
    /// Never on a crosswalk or the roadway, or on the roadway outside every
    /// crosswalk corridor.
    OffCrosswalk,
}

impl FilterRule {
    pub const ALL: [FilterRule; 4] = [
        FilterRule::TooShort,
        FilterRule::MostlyInvalid,
        FilterRule::TooFast,
        FilterRule::OffCrosswalk,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterCriteria {
    /// s
    pub min_duration: f64,
    /// m
    pub min_length: f64,
    pub max_invalid_fraction: f64,
    /// m/s
    pub fast_speed: f64,
    pub fast_run: usize,
}

impl Default for FilterCriteria {
    fn default() -> Self {
        FilterCriteria {
            min_duration: 1.0,
            min_length: 5.0,
            max_invalid_fraction: 0.5,
            fast_speed: 3.0,
            fast_run: 10,
        }
    }
}

/// Membership regions for rule [`FilterRule::OffCrosswalk`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regions {
    pub crosswalks: Vec<Polygon>,
    pub roadway: Polygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedTrajectory {
    pub id: String,
    /// Every rule the track violates, in [`FilterRule::ALL`] order.
    pub rules: Vec<FilterRule>,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<Trajectory>,
    pub removed: Vec<RemovedTrajectory>,
}

/// Rules violated by one track, in [`FilterRule::ALL`] order.
pub fn violated_rules(traj: &Trajectory, regions: &Regions, c: &FilterCriteria) -> Vec<FilterRule> {
    let mut rules = Vec::new();
    let (first, last) = (traj.first_valid(), traj.last_valid());
    let length = match (first, last) {
        (Some(a), Some(b)) => a.pos().dist(b.pos()),
        _ => 0.0,
    };
    if traj.duration() <= c.min_duration || length <= c.min_length {
        rules.push(FilterRule::TooShort);
    }
    let invalid = traj.points.iter().filter(|p| !p.valid).count();
    if invalid as f64 >= c.max_invalid_fraction * traj.points.len() as f64 {
        rules.push(FilterRule::MostlyInvalid);
    }
    let mut run = 0usize;
    let mut longest = 0usize;
    for p in &traj.points {
        if p.valid && p.speed() >= c.fast_speed {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    if longest >= c.fast_run {
        rules.push(FilterRule::TooFast);
    }
    let mut on_road_or_crosswalk = false;
    let mut strays = false;
    for p in traj.valid_points() {
        let pos = p.pos();
        let in_crosswalk = regions.crosswalks.iter().any(|poly| poly.contains(pos));
        let in_roadway = regions.roadway.contains(pos);
        on_road_or_crosswalk |= in_crosswalk || in_roadway;
        strays |= in_roadway && !in_crosswalk;
    }
    if !on_road_or_crosswalk || strays {
        rules.push(FilterRule::OffCrosswalk);
    }
    rules
}

pub fn filter_pedestrian_trajectories(
    trajs: Vec<Trajectory>,
    regions: &Regions,
    criteria: &FilterCriteria,
) -> FilterOutcome {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for t in trajs {
        let rules = violated_rules(&t, regions, criteria);
        if rules.is_empty() {
            kept.push(t);
        } else {
            removed.push(RemovedTrajectory { id: t.id, rules });
        }
    }
    FilterOutcome { kept, removed }
}
