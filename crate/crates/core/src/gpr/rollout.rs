use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::traj::{Dataset, Direction, Maneuver, ObjectClass, PredictedTrajectory};

use super::model::{fit_gpr, GprModel, GprModelRecord, GprSettings};

/// The two velocity-component GPs of one (direction, maneuver) cluster.
/// Both are trained on the same positions.
#[derive(Debug, Clone)]
pub struct GprModelPair {
    pub gp_x: GprModel,
    pub gp_y: GprModel,
    pub direction: Direction,
    pub maneuver: Maneuver,
}

impl GprModelPair {
    pub fn mean_velocity(&self, p: Point) -> Point {
        Point::new(self.gp_x.predict_mean(p), self.gp_y.predict_mean(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    #[default]
    PosteriorMean,
    Sample {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// s
    pub dt: f64,
    pub steps: usize,
    pub mode: RolloutMode,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            dt: 0.1,
            steps: 30,
            mode: RolloutMode::PosteriorMean,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt > 0.0 && self.dt.is_finite() && self.steps >= 1 {
            Ok(())
        } else {
            Err(Error::Config(format!("rollout needs dt > 0 and steps ≥ 1, got {self:?}")))
        }
    }
}

/// Euler-integrates the GP velocity field from `start` for `cfg.steps` steps.
pub fn rollout(pair: &GprModelPair, start: Point, cfg: &RolloutConfig) -> PredictedTrajectory {
    let mut points = Vec::with_capacity(cfg.steps + 1);
    points.push(start);
    let mut p = start;
    match cfg.mode {
        RolloutMode::PosteriorMean => {
            for _ in 0..cfg.steps {
                let v = pair.mean_velocity(p);
                p = p.add(v.scale(cfg.dt));
                points.push(p);
            }
        }
        RolloutMode::Sample { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..cfg.steps {
                let (mx, vx) = pair.gp_x.predict(p);
                let (my, vy) = pair.gp_y.predict(p);
                let zx: f64 = StandardNormal.sample(&mut rng);
                let zy: f64 = StandardNormal.sample(&mut rng);
                let v = Point::new(mx + vx.sqrt() * zx, my + vy.sqrt() * zy);
                p = p.add(v.scale(cfg.dt));
                points.push(p);
            }
        }
    }
    PredictedTrajectory {
        t0: 0.0,
        dt: cfg.dt,
        points,
    }
}

/// Model pairs for the twelve (direction, maneuver) clusters; clusters without
/// training data are absent.
#[derive(Debug, Clone, Default)]
pub struct ClusterModels {
    pairs: BTreeMap<(Direction, Maneuver), GprModelPair>,
}

impl ClusterModels {
    pub fn get(&self, d: Direction, m: Maneuver) -> Option<&GprModelPair> {
        self.pairs.get(&(d, m))
    }

    pub fn insert(&mut self, pair: GprModelPair) {
        self.pairs.insert((pair.direction, pair.maneuver), pair);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn present(&self) -> impl Iterator<Item = &GprModelPair> {
        self.pairs.values()
    }

    /// The twelve cluster keys that have no model.
    pub fn absent(&self) -> Vec<(Direction, Maneuver)> {
        Direction::ALL
            .iter()
            .flat_map(|&d| Maneuver::ALL.iter().map(move |&m| (d, m)))
            .filter(|k| !self.pairs.contains_key(k))
            .collect()
    }
}

fn cluster_seed(base: u64, d: Direction, m: Maneuver) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((d.code() * 3 + m.index()) as u64 + 1)
}

/// Fits one model pair per labeled (direction, maneuver) cluster of vehicle
/// trajectories: inputs are valid positions, targets the observed velocities.
/// Clusters are fitted in parallel; results do not depend on thread count.
pub fn train_cluster_models(dataset: &Dataset, settings: &GprSettings) -> Result<ClusterModels> {
    let mut cells: BTreeMap<(Direction, Maneuver), (Vec<Point>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for t in dataset.of_class(ObjectClass::Vehicle) {
        let (Some(d), Some(m)) = (t.entering_direction, t.maneuver) else {
            continue;
        };
        let cell = cells.entry((d, m)).or_default();
        for p in t.valid_points() {
            cell.0.push(p.pos());
            cell.1.push(p.vx);
            cell.2.push(p.vy);
        }
    }
    let fitted: Vec<Result<Option<GprModelPair>>> = cells
        .into_par_iter()
        .map(|((d, m), (x, vx, vy))| {
            if x.len() < 2 {
                return Ok(None);
            }
            let s = GprSettings {
                seed: cluster_seed(settings.seed, d, m),
                ..settings.clone()
            };
            // One subsample shared by both components.
            let keep = super::model::subsample_indices(x.len(), s.max_points.max(2), s.seed);
            let xs: Vec<Point> = keep.iter().map(|&i| x[i]).collect();
            let vxs: Vec<f64> = keep.iter().map(|&i| vx[i]).collect();
            let vys: Vec<f64> = keep.iter().map(|&i| vy[i]).collect();
            Ok(Some(GprModelPair {
                gp_x: fit_gpr(&xs, &vxs, &s)?,
                gp_y: fit_gpr(&xs, &vys, &s)?,
                direction: d,
                maneuver: m,
            }))
        })
        .collect();
    let mut models = ClusterModels::default();
    for r in fitted {
        if let Some(pair) = r? {
            models.insert(pair);
        }
    }
    Ok(models)
}

const MODEL_FORMAT: &str = "pedrisk-gpr";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PairRecord {
    direction: Direction,
    maneuver: Maneuver,
    gp_x: GprModelRecord,
    gp_y: GprModelRecord,
}

#[derive(Serialize, Deserialize)]
struct ClusterFile {
    format: String,
    version: u32,
    clusters: Vec<PairRecord>,
}

impl ClusterModels {
    pub fn to_json(&self) -> Result<String> {
        let file = ClusterFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            clusters: self
                .pairs
                .values()
                .map(|p| PairRecord {
                    direction: p.direction,
                    maneuver: p.maneuver,
                    gp_x: (&p.gp_x).into(),
                    gp_y: (&p.gp_y).into(),
                })
                .collect(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ClusterFile = serde_json::from_str(s).map_err(|e| Error::Model(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        let mut models = ClusterModels::default();
        for r in file.clusters {
            models.insert(GprModelPair {
                gp_x: r.gp_x.into_model()?,
                gp_y: r.gp_y.into_model()?,
                direction: r.direction,
                maneuver: r.maneuver,
            });
        }
        Ok(models)
    }
}
