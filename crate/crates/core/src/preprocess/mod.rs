//! Turning raw object tracks into labeled vehicle and pedestrian trajectories:
//! crosswalk endpoint estimation, entering direction and maneuver labeling,
//! pedestrian track merging and pedestrian track selection.

mod density;
mod filter;
mod geometry;
mod label;
mod merge;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use density::{estimate_crosswalk_endpoints, estimate_endpoint, DensityGrid, SearchBox};
pub use filter::{
    filter_pedestrian_trajectories, violated_rules, FilterCriteria, FilterOutcome, FilterRule, Regions,
    RemovedTrajectory,
};
pub use geometry::{IntersectionGeometry, ENDPOINT_NAMES};
pub use label::{classify_entering_direction, classify_movement, movement_from_sequence, quadrant_sequence, Movement};
pub use merge::{merge_pedestrian_trajectories, MergeCriteria, MergeOutcome};

use crate::error::{Error, Result};
use crate::geom::{Point, Polygon};
use crate::traj::{Dataset, Direction, Maneuver, ObjectClass, Trajectory};

/// Endpoint search boxes keyed by endpoint name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRegions {
    pub n_west: SearchBox,
    pub n_east: SearchBox,
    pub e_north: SearchBox,
    pub e_south: SearchBox,
    pub s_east: SearchBox,
    pub s_west: SearchBox,
    pub w_south: SearchBox,
    pub w_north: SearchBox,
}

impl SearchRegions {
    pub fn as_array(&self) -> [SearchBox; 8] {
        [
            self.n_west,
            self.n_east,
            self.e_north,
            self.e_south,
            self.s_east,
            self.s_west,
            self.w_south,
            self.w_north,
        ]
    }

    /// Boxes of half-size `half` centered on the endpoints of `geom`.
    pub fn around(geom: &IntersectionGeometry, half: f64) -> Self {
        let b = geom.endpoints().map(|p| SearchBox::around(p, half));
        SearchRegions {
            n_west: b[0],
            n_east: b[1],
            e_north: b[2],
            e_south: b[3],
            s_east: b[4],
            s_west: b[5],
            w_south: b[6],
            w_north: b[7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// m
    pub cell_size: f64,
    /// Skips density estimation when given (same order as `ENDPOINT_NAMES`).
    pub crosswalk_endpoints: Option<Vec<[f64; 2]>>,
    /// Defaults to 3 m boxes around the endpoints of the built-in synthetic layout.
    pub search_regions: Option<SearchRegions>,
    /// Inflation of the default crosswalk corridors, m.
    pub corridor_margin: f64,
    pub crosswalk_polygons: Option<Vec<Vec<[f64; 2]>>>,
    pub roadway_polygon: Option<Vec<[f64; 2]>>,
    pub merge: MergeCriteria,
    pub filter: FilterCriteria,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            cell_size: 0.5,
            crosswalk_endpoints: None,
            search_regions: Some(SearchRegions::around(&crate::synth::scene_geometry(), 3.0)),
            corridor_margin: 2.0,
            crosswalk_polygons: None,
            roadway_polygon: None,
            merge: MergeCriteria::default(),
            filter: FilterCriteria::default(),
        }
    }
}

fn polygon(v: &[[f64; 2]]) -> Polygon {
    Polygon(v.iter().map(|&[x, y]| Point::new(x, y)).collect())
}

impl PreprocessConfig {
    pub fn regions(&self, geom: &IntersectionGeometry) -> Regions {
        Regions {
            crosswalks: match &self.crosswalk_polygons {
                Some(polys) => polys.iter().map(|p| polygon(p)).collect(),
                None => geom.crosswalk_polygons(self.corridor_margin),
            },
            roadway: match &self.roadway_polygon {
                Some(p) => polygon(p),
                None => geom.roadway_polygon(),
            },
        }
    }
}

/// Counts emitted alongside the labeled dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub input_by_class: BTreeMap<String, usize>,
    pub crosswalk_endpoints: Vec<[f64; 2]>,
    pub vehicles_kept: usize,
    pub vehicles_unsupported: usize,
    pub vehicles_without_valid_points: usize,
    /// "direction/maneuver" → vehicle count, all twelve clusters listed.
    pub clusters: BTreeMap<String, usize>,
    pub pedestrian_fragments: usize,
    pub pedestrian_links: usize,
    pub pedestrians_after_merge: usize,
    /// Rule → tracks whose first violated rule it is.
    pub pedestrians_removed: BTreeMap<String, usize>,
    pub pedestrians_kept: usize,
    pub removed: Vec<RemovedTrajectory>,
}

pub struct PreprocessOutput {
    pub dataset: Dataset,
    pub report: PreprocessReport,
    pub density: Option<DensityGrid>,
}

pub fn cluster_key(d: Direction, m: Maneuver) -> String {
    format!("{d}/{m}")
}

fn rule_name(r: FilterRule) -> &'static str {
    match r {
        FilterRule::TooShort => "too_short",
        FilterRule::MostlyInvalid => "mostly_invalid",
        FilterRule::TooFast => "too_fast",
        FilterRule::OffCrosswalk => "off_crosswalk",
    }
}

/// Runs every preprocessing step over a raw dataset.
///
/// Output holds the labeled vehicles (supported maneuvers only) followed by
/// the merged and selected pedestrians; cyclists and misc objects are dropped.
pub fn preprocess_dataset(raw: &Dataset, cfg: &PreprocessConfig) -> Result<PreprocessOutput> {
    if raw.trajectories.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut report = PreprocessReport::default();
    for t in &raw.trajectories {
        *report.input_by_class.entry(t.class.to_string()).or_default() += 1;
    }
    let pedestrians: Vec<&Trajectory> = raw.of_class(ObjectClass::Pedestrian).collect();

    let (geom, density) = match (&cfg.crosswalk_endpoints, &raw.geometry) {
        (Some(pts), _) => {
            let arr: [Point; 8] = pts
                .iter()
                .map(|&[x, y]| Point::new(x, y))
                .collect::<Vec<_>>()
                .try_into()
                .map_err(|_| Error::Config("crosswalk_endpoints needs 8 points".into()))?;
            (IntersectionGeometry::from_endpoints(arr)?, None)
        }
        (None, Some(g)) => (g.clone(), None),
        (None, None) => {
            let regions = cfg
                .search_regions
                .as_ref()
                .ok_or_else(|| Error::Config("preprocess.search_regions required to estimate crosswalks".into()))?;
            let (g, grid) = estimate_crosswalk_endpoints(&pedestrians, cfg.cell_size, &regions.as_array())?;
            (g, Some(grid))
        }
    };
    report.crosswalk_endpoints = geom.endpoints().iter().map(|p| [p.x, p.y]).collect();
    for d in Direction::ALL {
        for m in Maneuver::ALL {
            report.clusters.insert(cluster_key(d, m), 0);
        }
    }

    let mut out = Vec::new();
    for t in raw.of_class(ObjectClass::Vehicle) {
        let Ok(dir) = classify_entering_direction(t, &geom) else {
            report.vehicles_without_valid_points += 1;
            continue;
        };
        match classify_movement(t, &geom) {
            Movement::Maneuver(m) => {
                let mut v = t.clone();
                v.entering_direction = Some(dir);
                v.maneuver = Some(m);
                *report.clusters.entry(cluster_key(dir, m)).or_default() += 1;
                report.vehicles_kept += 1;
                out.push(v);
            }
            Movement::Unsupported => report.vehicles_unsupported += 1,
        }
    }

    let peds: Vec<Trajectory> = pedestrians
        .iter()
        .map(|&t| {
            let mut p = t.clone();
            p.entering_direction = None;
            p.maneuver = None;
            p
        })
        .collect();
    report.pedestrian_fragments = peds.len();
    let merged = merge_pedestrian_trajectories(&peds, &cfg.merge);
    report.pedestrian_links = merged.links.len();
    report.pedestrians_after_merge = merged.trajectories.len();
    let filtered = filter_pedestrian_trajectories(merged.trajectories, &cfg.regions(&geom), &cfg.filter);
    for r in FilterRule::ALL {
        report.pedestrians_removed.insert(rule_name(r).to_string(), 0);
    }
    for r in &filtered.removed {
        *report.pedestrians_removed.entry(rule_name(r.rules[0]).to_string()).or_default() += 1;
    }
    report.pedestrians_kept = filtered.kept.len();
    report.removed = filtered.removed;
    out.extend(filtered.kept);

    let mut dataset = Dataset::new(out)?;
    dataset.geometry = Some(geom);
    dataset.frame_interval = raw.frame_interval;
    Ok(PreprocessOutput {
        dataset,
        report,
        density,
    })
}
