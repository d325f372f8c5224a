use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{Dataset, Direction, Maneuver, ObjectClass, TrackPoint};

/// Which velocity representation enters the feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `(x, y, speed, yaw_rate, direction)`
    #[default]
    Speed,
    /// `(x, y, vx, vy, yaw_rate, direction)`
    VelocityComponents,
}

impl FeatureMode {
    pub fn n_features(self) -> usize {
        match self {
            FeatureMode::Speed => 5,
            FeatureMode::VelocityComponents => 6,
        }
    }

    /// Column holding the entering-direction code; always the last one.
    pub fn direction_column(self) -> usize {
        self.n_features() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverFeatures {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub yaw_rate: f64,
    pub direction: Direction,
}

impl ManeuverFeatures {
    /// Direction enters as its code N=0, E=1, S=2, W=3.
    pub fn to_row(&self) -> Vec<f64> {
        vec![self.x, self.y, self.speed, self.yaw_rate, self.direction.code() as f64]
    }
}

pub fn extract_features(p: &TrackPoint, dir: Direction) -> Result<ManeuverFeatures> {
    if !p.valid {
        return Err(Error::InvalidInput(format!("feature extraction on invalid point at t={}", p.t)));
    }
    Ok(ManeuverFeatures {
        x: p.x,
        y: p.y,
        speed: p.speed(),
        yaw_rate: p.yaw_rate,
        direction: dir,
    })
}

pub fn feature_row(p: &TrackPoint, dir: Direction, mode: FeatureMode) -> Result<Vec<f64>> {
    let f = extract_features(p, dir)?;
    Ok(match mode {
        FeatureMode::Speed => f.to_row(),
        FeatureMode::VelocityComponents => vec![p.x, p.y, p.vx, p.vy, p.yaw_rate, dir.code() as f64],
    })
}

/// Feature rows with class labels (maneuver index) and the trajectory each
/// row came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledFeatures {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub groups: Vec<usize>,
}

impl LabeledFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<f64>, label: usize, group: usize) {
        self.rows.push(row);
        self.labels.push(label);
        self.groups.push(group);
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut c = vec![0; n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledFeatures {
        LabeledFeatures {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
        }
    }
}

/// Rows for every labeled vehicle, one per `stride`-th valid point; each row
/// inherits its trajectory's maneuver. Returns the rows plus the trajectory
/// ids indexed by group.
pub fn dataset_features(ds: &Dataset, mode: FeatureMode, stride: usize) -> Result<(LabeledFeatures, Vec<String>)> {
    let stride = stride.max(1);
    let mut out = LabeledFeatures::default();
    let mut ids = Vec::new();
    for t in ds.of_class(ObjectClass::Vehicle) {
        let (Some(d), Some(m)) = (t.entering_direction, t.maneuver) else {
            continue;
        };
        let g = ids.len();
        ids.push(t.id.clone());
        for p in t.valid_points().step_by(stride) {
            out.push(feature_row(p, d, mode)?, m.index(), g);
        }
    }
    Ok((out, ids))
}

pub fn label_maneuver(label: usize) -> Maneuver {
    Maneuver::from_index(label).expect("maneuver labels are 0..3")
}
